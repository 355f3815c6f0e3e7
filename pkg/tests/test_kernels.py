import os
import subprocess
import sys

import numpy as np
import pytest

from dartvb import kernels
from dartvb.bidstack import BidStack
from dartvb.synth import planted_stack

py = kernels.get_backend("python")
try:
    cy = kernels.get_backend("cython")
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def test_pure_python_fallback_selected_by_env():
    env = dict(os.environ, DARTVB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from dartvb import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@needs_ext
def test_clear_curve_backends_agree():
    rng = np.random.default_rng(0)
    for k in range(300):
        n_s, n_d = rng.integers(1, 12, 2)
        sp = np.sort(rng.choice(200, n_s, replace=False)).astype(float)
        sq = np.sort(rng.integers(1, 1000, n_s)).astype(float)
        dp = np.sort(rng.choice(200, n_d, replace=False)).astype(float)
        dq = np.sort(rng.integers(1, 1000, n_d))[::-1].astype(float)
        s = BidStack(None, zip(sp, sq), zip(dp, dq))
        shift = float(rng.integers(-300, 300))
        a = py.clear_curve(s.sp, s.sq, s.dp, s.dq, shift)
        b = cy.clear_curve(s.sp, s.sq, s.dp, s.dq, shift)
        assert bool(a[2]) == bool(b[2])
        if a[2]:
            assert (float(a[0]), float(a[1])) == (float(b[0]), float(b[1]))
    s = planted_stack(None, 40.0, 16000.0, 0.01, 0.02)
    for shift in (0.0, 1000.0, -1000.0, 2950.0):
        assert py.clear_curve(s.sp, s.sq, s.dp, s.dq, shift) == pytest.approx(
            cy.clear_curve(s.sp, s.sq, s.dp, s.dq, shift))


@needs_ext
def test_solve_hours_backends_agree():
    rng = np.random.default_rng(1)
    hours, zones = 500, 6
    x = rng.uniform(-50, 50, (hours, zones))
    active = (rng.random((hours, zones)) < 0.6).astype(np.uint8)
    kz = rng.uniform(0.01, 0.5, zones)
    kp, km = rng.uniform(0, 0.1, hours), rng.uniform(0, 0.1, hours)
    a = py.solve_hours(x, active, kz, kp, km)
    b = cy.solve_hours(x, active, kz, kp, km)
    for u, v in zip(a, b):
        np.testing.assert_allclose(np.asarray(u, dtype=float), np.asarray(v, dtype=float), rtol=1e-12, atol=1e-9)


@needs_ext
def test_logistic_backends_agree():
    rng = np.random.default_rng(2)
    design = np.column_stack([np.ones(400), rng.normal(size=(400, 7))])
    y = (rng.random(400) < 0.3).astype(float)
    for scale in (0.0, 1.0, 50.0):
        beta = rng.normal(size=8) * scale
        la, ga = py.logistic_loss_grad(beta, design, y)
        lb, gb = cy.logistic_loss_grad(beta, design, y)
        assert la == pytest.approx(lb, rel=1e-12)
        np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-9)
