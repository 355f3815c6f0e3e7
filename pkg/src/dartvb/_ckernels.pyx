# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Must stay numerically identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, NAN

cnp.import_array()


cdef inline double _supply_at(const double[:] sp, const double[:] sq, Py_ssize_t i_last):
    # i_last is the index of the last supply breakpoint <= p, -1 if none
    if i_last < 0:
        return 0.0
    return sq[i_last]


cdef inline double _demand_at(const double[:] dq, Py_ssize_t j_last):
    if j_last < 0:
        return dq[0]
    return dq[j_last]


def clear_curve(const double[:] sp, const double[:] sq,
                const double[:] dp, const double[:] dq, double shift):
    """Return (p_star, q_star, ok) for step curves with demand shifted by ``shift``."""
    cdef Py_ssize_t n = sp.shape[0], m = dp.shape[0]
    cdef Py_ssize_t i = -1, j = -1
    cdef double price, qs, qd, excess, first_price = 0.0, q_star = 0.0
    cdef bint found = False, flat = False

    if n == 0 or m == 0:
        return NAN, NAN, False
    # below every breakpoint supply is empty
    if 0.0 - (dq[0] + shift) >= 0.0:
        return NAN, NAN, False

    while i + 1 < n or j + 1 < m:
        if j + 1 >= m or (i + 1 < n and sp[i + 1] <= dp[j + 1]):
            price = sp[i + 1]
        else:
            price = dp[j + 1]
        while i + 1 < n and sp[i + 1] <= price:
            i += 1
        while j + 1 < m and dp[j + 1] <= price:
            j += 1
        qs = _supply_at(sp, sq, i)
        qd = _demand_at(dq, j) + shift
        excess = qs - qd
        if not found:
            if excess > 0.0:
                return price, (qs if qs < qd else qd), True
            if excess == 0.0:
                found = True
                first_price = price
                q_star = qs
        elif excess > 0.0:
            return 0.5 * (first_price + price), q_star, True
    if found:
        return first_price, q_star, True
    return NAN, NAN, False


def solve_hours(const double[:, :] x, const unsigned char[:, :] active,
                const double[:] kz, const double[:] ke_plus, const double[:] ke_minus):
    """Three-candidate sizing for every hour; returns (q, S, regime, F)."""
    cdef Py_ssize_t hours = x.shape[0], zones = x.shape[1]
    cdef Py_ssize_t t, z
    cdef double h_sum, n_sum, s_plus, s_minus, shadow, f_best, f_c, s_c, lin, loc, qz
    cdef int best
    q_out = np.zeros((hours, zones), dtype=np.float64)
    s_out = np.zeros(hours, dtype=np.float64)
    reg_out = np.zeros(hours, dtype=np.int8)
    f_out = np.zeros(hours, dtype=np.float64)
    cdef double[:, :] q = q_out
    cdef double[:] s = s_out
    cdef signed char[:] reg = reg_out
    cdef double[:] f = f_out

    for t in range(hours):
        h_sum = 0.0
        n_sum = 0.0
        for z in range(zones):
            if active[t, z]:
                h_sum += 1.0 / kz[z]
                n_sum += x[t, z] / kz[z]
        if h_sum == 0.0:
            continue
        shadow = n_sum / h_sum

        # net-flat candidate
        lin = 0.0
        loc = 0.0
        s_c = 0.0
        for z in range(zones):
            if active[t, z]:
                qz = (x[t, z] - shadow) / (2.0 * kz[z])
                lin += x[t, z] * qz
                loc += kz[z] * qz * qz
                s_c += qz
        f_best = lin - loc - (ke_plus[t] if s_c >= 0.0 else ke_minus[t]) * s_c * s_c
        best = 0

        s_plus = 0.5 * n_sum / (1.0 + ke_plus[t] * h_sum)
        if s_plus > 0.0:
            f_c = _interior_value(x, active, kz, t, zones, ke_plus[t], s_plus, ke_plus[t], ke_minus[t])
            if f_c > f_best:
                f_best = f_c
                best = 1
        s_minus = 0.5 * n_sum / (1.0 + ke_minus[t] * h_sum)
        if s_minus < 0.0:
            f_c = _interior_value(x, active, kz, t, zones, ke_minus[t], s_minus, ke_plus[t], ke_minus[t])
            if f_c > f_best:
                f_best = f_c
                best = -1

        s_c = 0.0
        for z in range(zones):
            if active[t, z]:
                if best == 0:
                    qz = (x[t, z] - shadow) / (2.0 * kz[z])
                elif best == 1:
                    qz = (x[t, z] - 2.0 * ke_plus[t] * s_plus) / (2.0 * kz[z])
                else:
                    qz = (x[t, z] - 2.0 * ke_minus[t] * s_minus) / (2.0 * kz[z])
                q[t, z] = qz
                s_c += qz
        s[t] = s_c
        reg[t] = best
        f[t] = f_best
    return q_out, s_out, reg_out, f_out


cdef double _interior_value(const double[:, :] x, const unsigned char[:, :] active,
                            const double[:] kz, Py_ssize_t t, Py_ssize_t zones,
                            double ke, double s_closed, double ke_plus, double ke_minus):
    cdef Py_ssize_t z
    cdef double lin = 0.0, loc = 0.0, s_sum = 0.0, qz
    for z in range(zones):
        if active[t, z]:
            qz = (x[t, z] - 2.0 * ke * s_closed) / (2.0 * kz[z])
            lin += x[t, z] * qz
            loc += kz[z] * qz * qz
            s_sum += qz
    return lin - loc - (ke_plus if s_sum >= 0.0 else ke_minus) * s_sum * s_sum


def logistic_loss_grad(const double[:] beta, const double[:, :] design, const double[:] y):
    """Summed cross-entropy and its gradient for logits ``design @ beta``."""
    cdef Py_ssize_t n = design.shape[0], d = design.shape[1]
    cdef Py_ssize_t i, k
    cdef double u, p, loss = 0.0, resid
    grad_out = np.zeros(d, dtype=np.float64)
    cdef double[:] grad = grad_out
    for i in range(n):
        u = 0.0
        for k in range(d):
            u += design[i, k] * beta[k]
        if u > 0.0:
            loss += u + log1p(exp(-u)) - y[i] * u
            p = 1.0 / (1.0 + exp(-u))
        else:
            loss += log1p(exp(u)) - y[i] * u
            p = exp(u) / (1.0 + exp(u))
        resid = p - y[i]
        for k in range(d):
            grad[k] += resid * design[i, k]
    return loss, grad_out
