"""Independent numeric oracles shared by the unit and acceptance tests."""

import numpy as np
from scipy.optimize import minimize


def asym_value(q, x, kz, kp, km):
    s = q.sum()
    return float(x @ q - (kp if s >= 0 else km) * s * s - kz @ (q * q))


def numeric_max(x, kz, kp, km, signs=None, starts=3, seed=0):
    """Maximize the asymmetric objective with L-BFGS-B from several starts.

    The objective is concave and continuously differentiable, so a
    quasi-Newton run converges to the global maximum; ``signs`` (+1/-1 per
    zone) adds the bound q_z >= 0 or q_z <= 0.
    """
    x, kz = np.asarray(x, float), np.asarray(kz, float)

    def neg(q):
        s = q.sum()
        ke = kp if s >= 0 else km
        f = x @ q - ke * s * s - kz @ (q * q)
        g = x - 2 * ke * s - 2 * kz * q
        return -f, -g

    bounds = None
    if signs is not None:
        bounds = [(0, None) if s > 0 else (None, 0) for s in signs]
    rng = np.random.default_rng(seed)
    scale = np.abs(x).max() / (2 * kz.min()) + 1.0
    best = 0.0 if signs is not None else -np.inf
    best_q = np.zeros_like(x)
    for k in range(starts):
        q0 = np.zeros_like(x) if k == 0 else rng.normal(0, scale, x.size)
        if bounds is not None:
            q0 = np.where(np.asarray(signs) > 0, np.abs(q0), -np.abs(q0))
        res = minimize(neg, q0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 5000})
        if -res.fun > best:
            best, best_q = -res.fun, res.x
    return best, best_q


def random_instance(rng, zones_max=6):
    z = int(rng.integers(1, zones_max + 1))
    x = rng.uniform(-50, 50, z)
    kz = rng.uniform(0.01, 0.5, z)
    kp, km = rng.uniform(0, 0.1, 2)
    return x, kz, float(kp), float(km)
