"""Aggregate bid stacks, clearing, finite-difference impacts and the impact
coefficients used by the sizing model.

Curves are right-continuous step functions of price. Supply at price ``p``
is the quantity of the last supply point priced at or below ``p`` (zero below
the first point); demand likewise, holding its first quantity below the first
point. The clearing price is the lowest breakpoint where supply covers
demand; when the curves coincide over an interval the midpoint is used.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import kernels
from .errors import (
    DegenerateRegressor,
    EmptyBucket,
    InvariantViolation,
    MalformedFile,
    MissingCoefficient,
    MissingColumn,
    MissingReference,
    NoCrossing,
    ZeroLoad,
)
from .panel import BUCKETS, MarketCalendar, Panel


@dataclass(frozen=True)
class ClearingPoint:
    p_star: float
    q_star: float


class BidStack:
    """Supply and demand step curves of one hour.

    ``supply`` and ``demand`` are ``(price, cumulative_quantity)`` pairs in
    any order; they are sorted by price and checked for monotonicity.
    """

    def __init__(self, timestamp, supply, demand):
        self.timestamp = timestamp
        s = sorted((float(p), float(q)) for p, q in supply)
        d = sorted((float(p), float(q)) for p, q in demand)
        if not s or not d:
            raise InvariantViolation(f"{timestamp}: empty supply or demand curve")
        self.sp = np.array([p for p, _ in s])
        self.sq = np.array([q for _, q in s])
        # sorting ties by quantity would reverse demand steps at one price
        d.sort(key=lambda pq: (pq[0], -pq[1]))
        self.dp = np.array([p for p, _ in d])
        self.dq = np.array([q for _, q in d])
        for arr in (self.sp, self.sq, self.dp, self.dq):
            if not np.all(np.isfinite(arr)):
                raise InvariantViolation(f"{timestamp}: non-finite curve point")
        if np.any(np.diff(self.sq) < 0):
            raise InvariantViolation(f"{timestamp}: supply quantity decreases with price")
        if np.any(np.diff(self.dq) > 0):
            raise InvariantViolation(f"{timestamp}: demand quantity increases with price")

    @property
    def supply(self) -> list:
        return list(zip(self.sp.tolist(), self.sq.tolist()))

    @property
    def demand(self) -> list:
        return list(zip(self.dp.tolist(), self.dq.tolist()))

    def supply_at(self, price: float) -> float:
        i = np.searchsorted(self.sp, price, side="right") - 1
        return 0.0 if i < 0 else float(self.sq[i])

    def demand_at(self, price: float) -> float:
        j = np.searchsorted(self.dp, price, side="right") - 1
        return float(self.dq[max(j, 0)])


def clear(stack: BidStack, shift: float = 0.0) -> ClearingPoint:
    """Clearing point with demand shifted by ``shift`` MWh at every price."""
    p, q, ok = kernels.clear_curve(stack.sp, stack.sq, stack.dp, stack.dq, float(shift))
    if not ok:
        raise NoCrossing(f"{stack.timestamp}: curves do not cross (demand shift {shift:+g} MWh)")
    return ClearingPoint(float(p), float(q))


def buy_impact(stack: BidStack, delta_q: float) -> tuple:
    """``(p_plus, delta_p)`` after adding ``delta_q`` MWh of demand."""
    if delta_q < 0:
        raise ValueError("delta_q must be non-negative")
    base = clear(stack).p_star
    p_plus = clear(stack, delta_q).p_star
    return p_plus, p_plus - base


def sell_impact(stack: BidStack, delta_q: float) -> tuple:
    """``(p_minus, delta_p)`` after adding ``delta_q`` MWh of supply."""
    if delta_q < 0:
        raise ValueError("delta_q must be non-negative")
    base = clear(stack).p_star
    p_minus = clear(stack, -delta_q).p_star
    return p_minus, p_minus - base


# --- files ---------------------------------------------------------------

def load_bidstacks(path) -> dict:
    """Read a bid-stack file; returns ``{utc datetime: BidStack}``."""
    points = defaultdict(lambda: {"supply": [], "demand": []})
    stamps = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        need = ["timestamp", "side", "price", "cumulative_quantity"]
        missing = [c for c in need if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing}")
        idx = {c: header.index(c) for c in need}
        for line, cells in enumerate(reader, start=2):
            if not cells:
                continue
            try:
                ts = datetime.fromisoformat(cells[idx["timestamp"]].strip())
                side = cells[idx["side"]].strip()
                price = float(cells[idx["price"]])
                qty = float(cells[idx["cumulative_quantity"]])
            except (ValueError, IndexError):
                raise MalformedFile(f"{path} line {line}: unparseable row") from None
            if ts.tzinfo is None:
                raise MalformedFile(f"{path} line {line}: timestamp lacks a UTC offset")
            if side not in ("supply", "demand"):
                raise MalformedFile(f"{path} line {line}: side must be supply or demand, got {side!r}")
            key = ts.astimezone(timezone.utc)
            stamps.setdefault(key, ts)
            points[key][side].append((price, qty))
    return {k: BidStack(stamps[k], v["supply"], v["demand"]) for k, v in sorted(points.items())}


def write_bidstacks(stacks, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "side", "price", "cumulative_quantity"])
        for st in stacks:
            ts = st.timestamp.isoformat()
            for p, q in st.supply:
                w.writerow([ts, "supply", repr(p), repr(q)])
            for p, q in st.demand:
                w.writerow([ts, "demand", repr(p), repr(q)])


# --- impact coefficients ---------------------------------------------------

def _bucket_key(bucket) -> str:
    return f"{bucket[0]}|{bucket[1]}"


def _parse_bucket(key: str) -> tuple:
    season, band = key.split("|")
    return season, band


@dataclass
class ImpactParams:
    """Energy slopes per (season, band) and zone-local coefficients, all per MWh.

    ``k_e_minus`` is stored as a positive magnitude.
    """

    k_e_plus: dict
    k_e_minus: dict
    k_z: dict
    reference: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, table in (("k_e_plus", self.k_e_plus), ("k_e_minus", self.k_e_minus)):
            for b, v in table.items():
                if not (math.isfinite(v) and v >= 0):
                    raise ValueError(f"{name}{b} = {v} must be finite and non-negative")
        for z, v in self.k_z.items():
            # zero is kept for impact-free replays; sizing rejects it
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"k_z[{z}] = {v} must be finite and non-negative")

    def energy(self, bucket) -> tuple:
        try:
            return self.k_e_plus[tuple(bucket)], self.k_e_minus[tuple(bucket)]
        except KeyError:
            raise MissingCoefficient(f"no energy coefficients for bucket {tuple(bucket)}") from None

    def local(self, zone) -> float:
        try:
            return self.k_z[zone]
        except KeyError:
            raise MissingCoefficient(f"no local coefficient for zone {zone!r}") from None

    def to_dict(self) -> dict:
        return {
            "k_e_plus": {_bucket_key(b): v for b, v in sorted(self.k_e_plus.items())},
            "k_e_minus": {_bucket_key(b): v for b, v in sorted(self.k_e_minus.items())},
            "k_z": dict(sorted(self.k_z.items())),
            "reference": self.reference,
        }

    @classmethod
    def from_dict(cls, doc) -> "ImpactParams":
        return cls(
            k_e_plus={_parse_bucket(k): float(v) for k, v in doc["k_e_plus"].items()},
            k_e_minus={_parse_bucket(k): float(v) for k, v in doc["k_e_minus"].items()},
            k_z={z: float(v) for z, v in doc["k_z"].items()},
            reference=doc.get("reference", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ImpactParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EnergyCoeffs:
    k_e_plus: dict
    k_e_minus: dict
    coverage: dict        # bucket -> (hours used, hours selected)
    pooled: list          # buckets filled from the pooled mean


def select_spike_hours(panel: Panel, calendar: MarketCalendar, top_n: int, window=None) -> dict:
    """Top ``top_n`` hours by |DART| per (season, band); ranking key is the max over zones."""
    f = panel.frame
    if window is not None:
        lo, hi = window
        f = f[(f["day"] >= lo) & (f["day"] < hi)]
    g = f.assign(absd=f["dart"].abs()).groupby("utc", sort=True).agg(
        absd=("absd", "max"), day=("day", "first"), hour=("hour", "first"))
    out = {b: [] for b in BUCKETS}
    buckets = [calendar.bucket(d, h) for d, h in zip(g["day"], g["hour"])]
    g = g.assign(bucket=buckets).reset_index()
    for b, grp in g.groupby("bucket", sort=False):
        # ties resolved by time so selection is deterministic
        top = grp.sort_values(["absd", "utc"], ascending=[False, True], kind="mergesort").head(top_n)
        out[b] = [t.to_pydatetime() for t in top["utc"]]
    return out


def estimate_energy_coeffs(stacks: Mapping, panel: Panel, calendar: MarketCalendar, top_n: int = 10,
                           delta_q: float = 1000.0, window=None, on_empty: str = "raise") -> EnergyCoeffs:
    """Mean finite-difference buy and sell slopes over the top spike hours of each bucket.

    ``stacks`` maps UTC instants to stacks. Selected hours without a stack,
    or whose stack cannot absorb the shock, are skipped and counted in
    ``coverage``. A bucket left empty raises EmptyBucket, or with
    ``on_empty="pool"`` takes the mean over every usable selected hour.
    """
    if delta_q <= 0:
        raise ValueError("delta_q must be positive")
    selected = select_spike_hours(panel, calendar, top_n, window)
    plus, minus, coverage = {}, {}, {}
    all_plus, all_minus = [], []
    for b in BUCKETS:
        ups, downs = [], []
        for ts in selected[b]:
            st = stacks.get(ts)
            if st is None:
                continue
            try:
                _, up = buy_impact(st, delta_q)
                _, down = sell_impact(st, delta_q)
            except NoCrossing:
                continue
            ups.append(up / delta_q)
            downs.append(-down / delta_q)
        coverage[b] = (len(ups), len(selected[b]))
        if ups:
            plus[b], minus[b] = float(np.mean(ups)), float(np.mean(downs))
        all_plus += ups
        all_minus += downs
    empty = [b for b in BUCKETS if b not in plus]
    if empty and (on_empty != "pool" or not all_plus):
        raise EmptyBucket(f"no usable stack among selected hours for buckets {empty}")
    for b in empty:
        plus[b], minus[b] = float(np.mean(all_plus)), float(np.mean(all_minus))
    return EnergyCoeffs(plus, minus, coverage, empty)


def mean_loads(panel: Panel, window=None) -> dict:
    f = panel.frame
    if window is not None:
        f = f[(f["day"] >= window[0]) & (f["day"] < window[1])]
    return {z: float(v) for z, v in f.groupby("zone")["zonal_load_actual"].mean().items()}


def calibrate_kz(mean_loads: Mapping, reference_zone: str, k_reference: float) -> dict:
    """``k_z = k_reference * L_ref / L_z`` for every zone."""
    if reference_zone not in mean_loads:
        raise MissingReference(f"reference zone {reference_zone!r} has no mean load")
    for z, v in mean_loads.items():
        if not v > 0:
            raise ZeroLoad(f"mean load of {z!r} is {v}")
    ref = mean_loads[reference_zone]
    return {z: (k_reference if z == reference_zone else k_reference * ref / v) for z, v in mean_loads.items()}


@dataclass(frozen=True)
class Regression:
    slope: float
    intercept: float
    stderr: float
    n: int


def ols(x, y) -> Regression:
    """Least squares ``y = a + b x`` with the usual slope standard error."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 2 or np.unique(x).size < 2:
        raise DegenerateRegressor(f"need at least 2 distinct regressor values, got {np.unique(x).size}")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    b = float(np.sum((x - xm) * (y - ym)) / sxx)
    a = float(ym - b * xm)
    if n > 2:
        resid = y - a - b * x
        se = float(np.sqrt(np.sum(resid ** 2) / (n - 2) / sxx))
    else:
        se = math.nan
    return Regression(b, a, se, n)


def load_price_regression(panel: Panel, zone: str, bucket, calendar: Optional[MarketCalendar] = None,
                          window=None) -> Regression:
    """OLS of (loss - congestion) on zonal forecast load within one bucket.

    The slope is in $/MWh per MW; multiply by 1000 for the per-GW rendering.
    """
    cal = calendar or MarketCalendar.for_market(panel.market)
    f = panel.zone_frame(zone)
    if window is not None:
        f = f[(f["day"] >= window[0]) & (f["day"] < window[1])]
    keep = np.array([cal.bucket(d, h) == tuple(bucket) for d, h in zip(f["day"], f["hour"])], dtype=bool)
    f = f[keep]
    if f["loss_component"].isna().any() or f["congestion_component"].isna().any():
        raise MissingColumn(f"zone {zone!r}: loss/congestion components absent in bucket {tuple(bucket)}")
    return ols(f["zonal_load_forecast"].to_numpy(), (f["loss_component"] - f["congestion_component"]).to_numpy())
