"""Closed-form multi-zone position sizing under linear-quadratic impact.

Quantities are signed: ``q > 0`` is an INC (buy day-ahead), ``q < 0`` a DEC.
``x`` is the expected edge per MWh in the direction of ``q``, so an INC
opportunity of edge ``e`` enters as ``+e`` and a DEC one as ``-e``.

    F(q) = x.q - kE(S) S^2 - sum_z k_z q_z^2,   S = sum_z q_z,

with ``kE = k_e_plus`` when ``S >= 0`` and ``k_e_minus`` otherwise.
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import kernels
from .bidstack import ImpactParams
from .errors import MissingCoefficient, NoFiredSignals, SplitOverlap
from .features import ObservationSet

REGIMES = {1: "net_buy", -1: "net_sell", 0: "net_flat"}


class SingleZoneWarning(UserWarning):
    pass


@dataclass
class ExpectedPayoffs:
    x: dict                                   # zone -> signed edge, $/MWh
    side_hint: dict = field(default_factory=dict)  # zone -> "INC" | "DEC"

    @property
    def zones(self) -> list:
        return list(self.x)


@dataclass
class TradePlan:
    q: dict
    S: float
    regime: str
    objective: float
    timestamp: object = None


def _edges(x) -> dict:
    return dict(x.x) if isinstance(x, ExpectedPayoffs) else dict(x)


def _kz(params: ImpactParams, zones) -> dict:
    return {z: params.local(z) for z in zones}


def objective(q: Mapping, x, params: ImpactParams, bucket) -> float:
    """F(q) for the hour's bucket."""
    x = _edges(x)
    missing = [z for z in q if z not in x]
    if missing:
        raise MissingCoefficient(f"no payoff for zones {missing}")
    kz = _kz(params, q)
    kp, km = params.energy(bucket)
    s = sum(q.values())
    ke = kp if s >= 0 else km
    return sum(x[z] * q[z] for z in q) - ke * s * s - sum(kz[z] * q[z] * q[z] for z in q)


def solve_regime(x, params: ImpactParams, bucket, k_e: float) -> tuple:
    """Interior optimum for a fixed energy coefficient: ``(q, S)``.

    Plain arithmetic, so exact rational inputs give exact outputs.
    """
    x = _edges(x)
    kz = _kz(params, x)
    h = sum(1 / kz[z] for z in x)
    n = sum(x[z] / kz[z] for z in x)
    s = (n / 2) / (1 + k_e * h)
    q = {z: (x[z] - 2 * k_e * s) / (2 * kz[z]) for z in x}
    return q, s


def solve_net_flat(x, params: ImpactParams) -> dict:
    """Best plan with zero net position."""
    x = _edges(x)
    kz = _kz(params, x)
    if len(x) < 2:
        warnings.warn("net-flat constraint with one zone forces q = 0", SingleZoneWarning, stacklevel=2)
        return {z: 0.0 for z in x}
    h = sum(1 / kz[z] for z in x)
    shadow = sum(x[z] / kz[z] for z in x) / h
    return {z: (x[z] - shadow) / (2 * kz[z]) for z in x}


def _arrays(x: dict, params: ImpactParams, bucket):
    zones = list(x)
    kp, km = params.energy(bucket)
    xv = np.array([float(x[z]) for z in zones], dtype=np.float64)
    kv = np.array([float(params.local(z)) for z in zones], dtype=np.float64)
    if np.any(kv <= 0):
        raise ValueError("sizing needs k_z > 0 for every zone")
    return zones, xv, kv, float(kp), float(km)


def optimize(x, params: ImpactParams, bucket, timestamp=None) -> TradePlan:
    """Best of the net-buy, net-sell and net-flat candidates.

    Net-buy counts only when its net position is positive and net-sell only
    when negative; net-flat is always feasible and wins ties.
    """
    x = _edges(x)
    if not x:
        raise ValueError("optimize needs at least one zone with a payoff")
    zones, xv, kv, kp, km = _arrays(x, params, bucket)
    q, s, reg, f = kernels.solve_hours(
        xv[None, :], np.ones((1, len(zones)), dtype=np.uint8), kv,
        np.array([kp]), np.array([km]),
    )
    return TradePlan({z: float(q[0, i]) for i, z in enumerate(zones)}, float(s[0]),
                     REGIMES[int(reg[0])], float(f[0]), timestamp)


def clip_sides(x: ExpectedPayoffs) -> ExpectedPayoffs:
    """Drop zones whose edge points against the classifier's direction."""
    keep = {}
    for z, v in x.x.items():
        hint = x.side_hint.get(z)
        if hint == "INC" and v < 0 or hint == "DEC" and v > 0:
            continue
        keep[z] = v
    return ExpectedPayoffs(keep, {z: x.side_hint[z] for z in keep if z in x.side_hint})


def _value(xv, kv, kp, km, q) -> float:
    s = q.sum()
    return float(xv @ q - (kp if s >= 0 else km) * s * s - kv @ (q * q))


def _solve_free(xv, kv, kp, km, free) -> np.ndarray:
    q, _, _, _ = kernels.solve_hours(xv[None, :], free[None, :].astype(np.uint8), kv,
                                     np.array([kp]), np.array([km]))
    return q[0]


def _kkt_ok(xv, kv, kp, km, q, sign, free, tol=1e-12) -> bool:
    s = q.sum()
    ke = kp if s >= 0 else km
    grad = xv - 2.0 * ke * s - 2.0 * kv * q
    scale = 1.0 + np.max(np.abs(xv))
    pinned = ~free
    return bool(np.all(sign[pinned] * grad[pinned] <= tol * scale)) and bool(np.all(sign[free] * q[free] >= 0))


def signed_optimize(x: ExpectedPayoffs, params: ImpactParams, bucket, timestamp=None) -> TradePlan:
    """Maximize F subject to q_z >= 0 for INC hints and q_z <= 0 for DEC hints.

    Active-set iteration over the closed forms: zones solved against their
    sign are pinned at zero, pinned zones whose gradient points into the
    feasible side are released. F is concave, so a point meeting the KKT
    conditions is optimal; if the iteration cycles, every pinned set is
    enumerated instead.
    """
    xd = _edges(x)
    if not xd:
        raise ValueError("optimize needs at least one zone with a payoff")
    zones, xv, kv, kp, km = _arrays(xd, params, bucket)
    sign = np.array([1.0 if x.side_hint.get(z, "INC" if xd[z] >= 0 else "DEC") == "INC" else -1.0
                     for z in zones])
    free = np.ones(len(zones), dtype=bool)
    seen = set()
    q = None
    for _ in range(4 * len(zones) + 4):
        key = free.tobytes()
        if key in seen:
            q = None
            break
        seen.add(key)
        q = _solve_free(xv, kv, kp, km, free)
        bad = free & (sign * q < 0)
        if bad.any():
            free = free & ~bad
            continue
        s = q.sum()
        ke = kp if s >= 0 else km
        push = sign * (xv - 2.0 * ke * s - 2.0 * kv * q)
        push[free] = -np.inf
        j = int(np.argmax(push))
        if push[j] > 1e-12 * (1.0 + np.max(np.abs(xv))):
            free = free.copy()
            free[j] = True
            continue
        break
    if q is None or not _kkt_ok(xv, kv, kp, km, q, sign, free):
        q = _enumerate(xv, kv, kp, km, sign)
    q = np.where(sign * q < 0, 0.0, q)
    s = float(q.sum())
    regime = "net_flat" if abs(s) <= 1e-9 * max(1.0, float(np.abs(q).sum())) else ("net_buy" if s > 0 else "net_sell")
    return TradePlan({z: float(q[i]) for i, z in enumerate(zones)}, s, regime,
                     _value(xv, kv, kp, km, q), timestamp)


def _enumerate(xv, kv, kp, km, sign) -> np.ndarray:
    best, best_f = np.zeros_like(xv), 0.0
    n = len(xv)
    for r in range(1, n + 1):
        for subset in itertools.combinations(range(n), r):
            free = np.zeros(n, dtype=bool)
            free[list(subset)] = True
            q = _solve_free(xv, kv, kp, km, free)
            if np.any(sign[free] * q[free] < 0):
                continue
            f = _value(xv, kv, kp, km, q)
            if f > best_f:
                best, best_f = q, f
    return best


# --- payoff estimation ------------------------------------------------------

def conditional_edge(r, fired) -> float:
    """Mean edge over fired hours."""
    r = np.asarray(r, dtype=np.float64)
    fired = np.asarray(fired, dtype=bool)
    if not fired.any():
        raise NoFiredSignals("no signal fired; conditional edge undefined")
    return float(r[fired].mean())


@dataclass(frozen=True)
class PayoffEstimate:
    x: Optional[float]
    trades: int
    eligible: bool


def estimate_payoffs(models: Mapping, validation: ObservationSet, per_bucket: bool = False) -> dict:
    """Conditional validation edge per (zone, side), or per (zone, side, bucket).

    A key is eligible only when signals fired and the mean edge is positive.
    """
    from .classifier import edge, fires

    if validation.split not in (None, "validation"):
        raise SplitOverlap(f"payoffs must come from validation data, got {validation.split}")
    out = {}
    for (zone, side), m in sorted(models.items()):
        v = validation.for_zone(zone)
        if len(v) == 0:
            out[(zone, side)] = PayoffEstimate(None, 0, False)
            continue
        hit = fires(m, v.x)
        r = edge(v, side)
        groups = [((zone, side), np.ones(len(v), dtype=bool))]
        if per_bucket:
            groups = [((zone, side, (s, b)), (v.season == s) & (v.band == b))
                      for s, b in sorted(set(zip(v.season, v.band)))]
        for key, mask in groups:
            try:
                xbar = conditional_edge(r[mask], hit[mask])
            except NoFiredSignals:
                out[key] = PayoffEstimate(None, 0, False)
                continue
            out[key] = PayoffEstimate(xbar, int((hit & mask).sum()), xbar > 0)
    return out


def write_trade_plans(plans, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "zone", "q_mwh", "regime", "objective"])
        for p in plans:
            ts = "" if p.timestamp is None else p.timestamp.isoformat()
            for z in sorted(p.q):
                w.writerow([ts, z, repr(float(p.q[z])), p.regime, repr(float(p.objective))])
