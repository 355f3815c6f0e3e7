"""Hot-loop kernels, compiled when available.

The compiled module ``dartvb._ckernels`` is preferred. Setting the environment
variable ``DARTVB_PURE_PYTHON=1`` (or a failed build) selects the numpy
implementation in ``dartvb._pykernels``. Both expose the same three functions:

``clear_curve(sp, sq, dp, dq, shift) -> (p_star, q_star, ok)``
    Step-curve intersection with demand shifted by ``shift`` MWh.
``solve_hours(x, active, kz, ke_plus, ke_minus) -> (q, S, regime, F)``
    Three-candidate sizing for a batch of hours.
``logistic_loss_grad(beta, design, y) -> (loss, grad)``
    Summed cross-entropy of a logistic model and its gradient.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("DARTVB_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

clear_curve = _impl.clear_curve
solve_hours = _impl.solve_hours
logistic_loss_grad = _impl.logistic_loss_grad


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
