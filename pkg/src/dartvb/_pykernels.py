"""Reference kernels in numpy. Used when the compiled extension is unavailable."""

import numpy as np


def clear_curve(sp, sq, dp, dq, shift):
    sp = np.asarray(sp, dtype=np.float64)
    sq = np.asarray(sq, dtype=np.float64)
    dp = np.asarray(dp, dtype=np.float64)
    dq = np.asarray(dq, dtype=np.float64)
    if sp.size == 0 or dp.size == 0:
        return np.nan, np.nan, False
    if 0.0 - (dq[0] + shift) >= 0.0:
        return np.nan, np.nan, False

    prices = np.union1d(sp, dp)
    i = np.searchsorted(sp, prices, side="right") - 1
    j = np.searchsorted(dp, prices, side="right") - 1
    qs = np.where(i >= 0, sq[np.maximum(i, 0)], 0.0)
    qd = np.where(j >= 0, dq[np.maximum(j, 0)], dq[0]) + shift
    excess = qs - qd

    hit = np.flatnonzero(excess >= 0.0)
    if hit.size == 0:
        return np.nan, np.nan, False
    a = hit[0]
    if excess[a] > 0.0:
        return float(prices[a]), float(min(qs[a], qd[a])), True
    above = np.flatnonzero(excess[a + 1:] > 0.0)
    if above.size == 0:
        return float(prices[a]), float(qs[a]), True
    b = a + 1 + above[0]
    return float(0.5 * (prices[a] + prices[b])), float(qs[a]), True


def _candidate_value(x, mask, kz, q, ke_plus, ke_minus):
    s = np.where(mask, q, 0.0).sum(axis=1)
    ke = np.where(s >= 0.0, ke_plus, ke_minus)
    lin = np.where(mask, x * q, 0.0).sum(axis=1)
    loc = np.where(mask, kz * q * q, 0.0).sum(axis=1)
    return lin - loc - ke * s * s


def solve_hours(x, active, kz, ke_plus, ke_minus):
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(active).astype(bool)
    kz = np.asarray(kz, dtype=np.float64)
    ke_plus = np.asarray(ke_plus, dtype=np.float64)
    ke_minus = np.asarray(ke_minus, dtype=np.float64)
    hours, zones = x.shape

    inv = np.where(mask, 1.0 / kz, 0.0)
    h_sum = inv.sum(axis=1)
    n_sum = np.where(mask, x / kz, 0.0).sum(axis=1)
    live = h_sum > 0.0
    safe_h = np.where(live, h_sum, 1.0)
    shadow = n_sum / safe_h

    two_k = 2.0 * kz
    q_flat = np.where(mask, (x - shadow[:, None]) / two_k, 0.0)
    s_plus = 0.5 * n_sum / (1.0 + ke_plus * h_sum)
    s_minus = 0.5 * n_sum / (1.0 + ke_minus * h_sum)
    q_plus = np.where(mask, (x - 2.0 * (ke_plus * s_plus)[:, None]) / two_k, 0.0)
    q_minus = np.where(mask, (x - 2.0 * (ke_minus * s_minus)[:, None]) / two_k, 0.0)

    f_flat = _candidate_value(x, mask, kz, q_flat, ke_plus, ke_minus)
    f_plus = _candidate_value(x, mask, kz, q_plus, ke_plus, ke_minus)
    f_minus = _candidate_value(x, mask, kz, q_minus, ke_plus, ke_minus)

    best = np.zeros(hours, dtype=np.int8)
    f_best = f_flat.copy()
    take_plus = (s_plus > 0.0) & (f_plus > f_best)
    best[take_plus] = 1
    f_best = np.where(take_plus, f_plus, f_best)
    take_minus = (s_minus < 0.0) & (f_minus > f_best)
    best[take_minus] = -1
    f_best = np.where(take_minus, f_minus, f_best)

    q = np.where(best[:, None] == 1, q_plus, np.where(best[:, None] == -1, q_minus, q_flat))
    q[~live] = 0.0
    best[~live] = 0
    f_best[~live] = 0.0
    s = np.where(mask, q, 0.0).sum(axis=1)
    return q, s, best, f_best


def logistic_loss_grad(beta, design, y):
    beta = np.asarray(beta, dtype=np.float64)
    design = np.asarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    u = design @ beta
    loss = float(np.sum(np.logaddexp(0.0, u) - y * u))
    e = np.exp(-np.abs(u))
    p = np.where(u > 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    grad = design.T @ (p - y)
    return loss, grad
