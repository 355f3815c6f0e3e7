"""Strategy replay, P&L attribution and signal diagnostics.

Every trade is stored with signed ``q`` (positive INC), the realized edge per
MWh of ``q`` (``r = -DART``), the per-MWh impact ``k_E * S + k_z * q`` and
``pnl = q * (r - impact)``. Views: ``execution`` (optimized sizes with
impact), ``prediction`` (one MWh per fired signal, no impact) and
``benchmark`` (single-side unit trades).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import timezone
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import rel_entr

from . import kernels
from .bidstack import ImpactParams, clear
from .classifier import edge, fires
from .errors import (EmptySupport, EmptyTrades, MissingCalibration, MissingCoefficient, NoCrossing,
                     SplitOverlap)
from .features import ObservationSet
from .sizing import REGIMES, ExpectedPayoffs, TradePlan, clip_sides, signed_optimize

TRADE_COLUMNS = ["view", "timestamp", "year", "zone", "side", "season", "band",
                 "q", "r", "impact_cost", "pnl", "S", "k_e", "k_z"]
MODES = ("unconstrained", "clipped", "restricted")


@dataclass(frozen=True)
class TradeRecord:
    timestamp: object
    zone: str
    q: float
    side: str
    r: float
    impact_cost: float
    pnl: float
    S: float = 0.0
    k_e: float = 0.0
    k_z: float = 0.0

    def recomputed_pnl(self) -> float:
        return self.q * (self.r - (self.k_e * self.S + self.k_z * self.q))


@dataclass
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: Optional[int]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


def metrics_from_counts(tp: int, fp: int, fn: int, tn: Optional[int] = None) -> Metrics:
    """Precision, recall and F1; a zero denominator leaves the value as None."""
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(tp, fp, fn, tn, precision, recall, f1)


def confusion(signals, labels) -> Metrics:
    s = np.asarray(signals, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise ValueError("signals and labels are not aligned")
    return metrics_from_counts(int(np.sum(s & y)), int(np.sum(s & ~y)), int(np.sum(~s & y)), int(np.sum(~s & ~y)))


def classification_metrics(signals: Mapping, labels: Mapping) -> dict:
    """Per-key confusion metrics; keys are typically (zone, side)."""
    return {k: confusion(signals[k], labels[k]) for k in sorted(signals)}


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats after renormalizing both inputs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.size == 0 or q.size == 0:
        raise EmptySupport("empty support")
    if p.shape != q.shape:
        raise ValueError("distributions must share a support")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("probabilities must be non-negative")
    sp, sq = p.sum(), q.sum()
    if sp <= 0 or sq <= 0:
        raise EmptySupport("distribution has no mass")
    p, q = p / sp, q / sq
    m = 0.5 * (p + q)
    js = 0.5 * float(np.sum(rel_entr(p, m))) + 0.5 * float(np.sum(rel_entr(q, m)))
    return min(max(js, 0.0), math.log(2.0))


def histogram(values, axis: str) -> np.ndarray:
    bins = np.arange(24) if axis == "hour" else np.arange(1, 13)
    v = np.asarray(values, dtype=np.int64)
    return np.array([np.sum(v == b) for b in bins], dtype=np.float64)


@dataclass
class Alignment:
    js_top: float
    js_all: float
    trades: np.ndarray
    top: np.ndarray
    all_hours: np.ndarray


def spike_alignment(trade_axis, hour_axis, hour_edge, axis: str = "hour", top_fraction: float = 0.2) -> Alignment:
    """Compare where trades land with where the largest realized edges land.

    ``trade_axis`` holds the hour-of-day (or month) of each trade;
    ``hour_axis``/``hour_edge`` describe every candidate hour and its edge.
    Top spikes are hours whose edge is at or above the ``1 - top_fraction``
    quantile.
    """
    if len(trade_axis) == 0:
        raise EmptyTrades("no trades to compare")
    hour_edge = np.asarray(hour_edge, dtype=np.float64)
    hour_axis = np.asarray(hour_axis)
    cut = np.quantile(hour_edge, 1.0 - top_fraction, method="linear")
    t = histogram(trade_axis, axis)
    top = histogram(hour_axis[hour_edge >= cut], axis)
    allh = histogram(hour_axis, axis)
    return Alignment(js_divergence(t, top), js_divergence(t, allh), t, top, allh)


def bucket_significance(trades: pd.DataFrame, min_trades: int = 50, t_threshold: float = 2.0) -> pd.DataFrame:
    """One-sided t-test of mean trade P&L per (zone, season, band, side).

    ``t = mean / (s / sqrt(n))`` with the n-1 sample deviation; zero spread
    gives an infinite t with the sign of the mean.
    """
    cols = ["zone", "season", "band", "side", "n", "mean", "std", "t", "p_value", "admitted"]
    rows = []
    if len(trades):
        for key, g in trades.groupby(["zone", "season", "band", "side"], sort=True):
            pnl = g["pnl"].to_numpy(dtype=np.float64)
            n = pnl.size
            mean = float(pnl.mean())
            sd = float(pnl.std(ddof=1)) if n > 1 else math.nan
            if n < 2:
                t = math.nan
            elif sd == 0.0:
                t = math.copysign(math.inf, mean) if mean != 0 else math.nan
            else:
                t = mean / (sd / math.sqrt(n))
            pv = float(stats.t.sf(t, n - 1)) if n > 1 and not math.isnan(t) else math.nan
            rows.append(list(key) + [n, mean, sd, t, pv, bool(n >= min_trades and t > t_threshold)])
    return pd.DataFrame(rows, columns=cols)


def admissible_set(table: pd.DataFrame) -> set:
    return {(r.zone, r.season, r.band, r.side) for r in table.itertuples() if r.admitted}


# --- report ------------------------------------------------------------------

@dataclass
class BacktestReport:
    trades: pd.DataFrame
    views: list
    metrics: dict = field(default_factory=dict)
    alignment: dict = field(default_factory=dict)
    significance: Optional[pd.DataFrame] = None
    plans: list = field(default_factory=list)

    def view(self, name: str) -> pd.DataFrame:
        return self.trades[self.trades["view"] == name]

    def total(self, view: str) -> float:
        return float(self.view(view)["pnl"].sum())

    def by_zone(self, view: str) -> pd.DataFrame:
        t = self.view(view)
        g = t.groupby("zone", sort=True)
        return pd.DataFrame({
            "hours_active": g["timestamp"].nunique(),
            "mean_abs_q": g["q"].apply(lambda s: float(np.mean(np.abs(s)))),
            "pnl": g["pnl"].sum(),
        })

    def by_year(self, view: str) -> pd.Series:
        return self.view(view).groupby("year", sort=True)["pnl"].sum()

    def series(self, view: str) -> pd.DataFrame:
        """Hourly P&L (total, INC, DEC) and cumulative sums, ordered in time."""
        t = self.view(view)
        if t.empty:
            return pd.DataFrame(columns=["utc", "timestamp", "total", "inc", "dec",
                                         "cum_total", "cum_inc", "cum_dec"])
        g = t.assign(inc=np.where(t["side"] == "INC", t["pnl"], 0.0),
                     dec=np.where(t["side"] == "DEC", t["pnl"], 0.0))
        h = g.groupby("utc", sort=True).agg(timestamp=("timestamp", "first"), total=("pnl", "sum"),
                                             inc=("inc", "sum"), dec=("dec", "sum")).reset_index()
        for c in ("total", "inc", "dec"):
            h[f"cum_{c}"] = h[c].cumsum()
        return h

    def accounting_gap(self, view: str) -> float:
        """Largest disagreement between the total and its zone/year/trade sums."""
        t = self.view(view)
        total = math.fsum(t["pnl"])
        parts = [self.by_zone(view)["pnl"].sum(), self.by_year(view).sum(),
                 float(t["pnl"].sum()), self.series(view)["total"].sum() if len(t) else 0.0]
        gap = max([abs(total - float(p)) for p in parts] + [0.0])
        if len(t):
            rec = t["q"] * (t["r"] - (t["k_e"] * t["S"] + t["k_z"] * t["q"]))
            gap = max(gap, float(np.max(np.abs(rec - t["pnl"]))))
        return gap


def _trade_frame(rows: list) -> pd.DataFrame:
    if not rows:
        f = pd.DataFrame({c: pd.Series(dtype=object) for c in TRADE_COLUMNS + ["utc"]})
        return f
    f = pd.DataFrame(rows)
    return f.sort_values(["view", "utc", "zone"], kind="mergesort").reset_index(drop=True)


def _row(view, obs: ObservationSet, i, zone, q, S, k_e, k_z, side=None) -> dict:
    r = -float(obs.realized_dart[i])
    impact = k_e * S + k_z * q
    ts = obs.timestamp(i)
    return {
        "view": view, "utc": obs.utc[i], "timestamp": ts.isoformat(), "year": ts.year, "zone": zone,
        "side": side or ("INC" if q > 0 else "DEC"), "season": obs.season[i], "band": obs.band[i],
        "q": float(q), "r": r, "impact_cost": impact, "pnl": float(q) * (r - impact),
        "S": float(S), "k_e": float(k_e), "k_z": float(k_z),
    }


def _check_test(models, observations: ObservationSet):
    if observations.split not in (None, "test"):
        raise SplitOverlap(f"backtests run on the test split, got {observations.split}")
    if len(observations) == 0:
        return
    first = min(observations.day)
    for m in models:
        rng = m.train_meta.get("range")
        if rng and rng[1] >= first.isoformat():
            raise SplitOverlap(f"{m.zone}/{m.side} was trained through {rng[1]}, test starts {first}")


def unit_trades(models: Mapping, observations: ObservationSet, side: str, view: str = "benchmark") -> pd.DataFrame:
    """One MWh in the model's direction whenever ``p >= tau``, no impact."""
    rows = []
    for z in sorted(models):
        m = models[z]
        idx = np.flatnonzero(observations.zone == z)
        if idx.size == 0:
            continue
        hit = fires(m, observations.x[idx])
        q = 1.0 if side == "INC" else -1.0
        for i in idx[hit]:
            rows.append(_row(view, observations, i, z, q, 0.0, 0.0, 0.0, side))
    return _trade_frame(rows)


def run_benchmark(models: Mapping, observations: ObservationSet, side: str) -> BacktestReport:
    """Unit trades whenever ``p >= tau``; P&L is the raw edge, no impact.

    ``models`` maps zone to the side's SpikeModel.
    """
    _check_test(models.values(), observations)
    return BacktestReport(unit_trades(models, observations, side), ["benchmark"])


def _payoff(payoffs: Mapping, zone, side, bucket):
    est = payoffs.get((zone, side, bucket)) or payoffs.get((zone, side))
    if est is None or not est.eligible:
        return None
    return est.x


def _signals(models: Mapping, payoffs: Mapping, obs: ObservationSet, mode: str, admissible) -> tuple:
    """Per observation: chosen side ("INC"/"DEC"/None) and signed edge."""
    n = len(obs)
    best_x = np.zeros(n)
    hint = np.full(n, None, dtype=object)
    for (zone, side), m in sorted(models.items()):
        idx = np.flatnonzero(obs.zone == zone)
        if idx.size == 0:
            continue
        hit = idx[fires(m, obs.x[idx])]
        for i in hit:
            b = (obs.season[i], obs.band[i])
            if mode == "restricted" and (zone, b[0], b[1], side) not in admissible:
                continue
            x = _payoff(payoffs, zone, side, b)
            if x is None:
                continue
            # a zone firing both ways keeps the side with the larger expected edge
            if hint[i] is None or x > abs(best_x[i]):
                hint[i] = side
                best_x[i] = x if side == "INC" else -x
    return hint, best_x


def run_strategy(models: Mapping, payoffs: Mapping, params: ImpactParams, observations: ObservationSet,
                 mode: str = "unconstrained", admissible=None, unit_size: bool = False) -> BacktestReport:
    """Joint multi-zone strategy over the test split.

    ``models`` maps (zone, side) to SpikeModel and ``payoffs`` maps (zone,
    side) or (zone, side, bucket) to PayoffEstimate. ``restricted`` applies
    the clipped rule to (zone, season, band, side) keys in ``admissible``.
    ``unit_size`` replaces optimized sizes with one MWh in the signal's
    direction (impact still charged).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "restricted" and admissible is None:
        raise ValueError("restricted mode needs an admissible bucket set")
    if params is None:
        raise MissingCalibration("no impact parameters")
    _check_test(models.values(), observations)
    obs = observations
    hint, xs = _signals(models, payoffs, obs, mode, admissible)
    active_rows = np.flatnonzero(hint != None)  # noqa: E711

    rows, plans = [], []
    # prediction view: one MWh per chosen signal
    for i in active_rows:
        rows.append(_row("prediction", obs, i, obs.zone[i], 1.0 if hint[i] == "INC" else -1.0, 0.0, 0.0, 0.0))

    if active_rows.size:
        hours = pd.Series(active_rows).groupby(obs.utc[active_rows], sort=True)
        groups = [g.to_numpy() for _, g in hours]
        zones = sorted(set(obs.zone[active_rows]))
        col = {z: k for k, z in enumerate(zones)}
        try:
            kz = np.array([params.local(z) for z in zones])
            ke = np.array([params.energy((obs.season[g[0]], obs.band[g[0]])) for g in groups])
        except MissingCoefficient as exc:
            raise MissingCalibration(str(exc)) from None
        if not unit_size and np.any(kz <= 0):
            raise MissingCalibration("optimized sizing needs positive k_z for every traded zone")
        H = len(groups)
        X = np.zeros((H, len(zones)))
        A = np.zeros((H, len(zones)), dtype=np.uint8)
        for h, g in enumerate(groups):
            for i in g:
                X[h, col[obs.zone[i]]] = xs[i]
                A[h, col[obs.zone[i]]] = 1
        if unit_size:
            Q = np.where(A == 1, np.sign(X), 0.0)
            Q[(A == 1) & (X == 0)] = 1.0
            S = Q.sum(axis=1)
            F = np.full(H, math.nan)
            reg = np.sign(S).astype(np.int8)
        elif mode == "unconstrained":
            Q, S, reg, F = kernels.solve_hours(X, A, kz, np.ascontiguousarray(ke[:, 0]), np.ascontiguousarray(ke[:, 1]))
        else:
            Q = np.zeros_like(X)
            S, F, reg = np.zeros(H), np.zeros(H), np.zeros(H, dtype=np.int8)
            for h, g in enumerate(groups):
                zs = [obs.zone[i] for i in g]
                pay = clip_sides(ExpectedPayoffs({z: xs[i] for z, i in zip(zs, g)},
                                                 {z: hint[i] for z, i in zip(zs, g)}))
                if not pay.x:
                    continue
                b = (obs.season[g[0]], obs.band[g[0]])
                plan = signed_optimize(pay, params, b)
                for z, v in plan.q.items():
                    Q[h, col[z]] = v
                S[h], F[h] = plan.S, plan.objective
                reg[h] = {"net_buy": 1, "net_sell": -1, "net_flat": 0}[plan.regime]
        for h, g in enumerate(groups):
            s = float(Q[h].sum())
            k_e = ke[h, 0] if s >= 0 else ke[h, 1]
            plan_q = {}
            for i in g:
                z = obs.zone[i]
                q = float(Q[h, col[z]])
                if q == 0.0:
                    continue
                plan_q[z] = q
                rows.append(_row("execution", obs, i, z, q, s, k_e, kz[col[z]]))
            plans.append(TradePlan(plan_q, s, REGIMES[int(reg[h])], float(F[h]), obs.timestamp(g[0])))

    report = BacktestReport(_trade_frame(rows), ["execution", "prediction"], plans=plans)
    report.metrics = signal_metrics(models, obs)
    return report


def realized_impact(plans, stacks: Mapping, params: ImpactParams, calendar) -> pd.DataFrame:
    """Re-clear each planned hour's stack with its net position and compare with the model.

    ``modeled_dp`` is ``k_E * S`` from the calibrated coefficients;
    ``realized_dp`` is the clearing-price move when demand shifts by ``S``.
    Hours without a stack, with ``S == 0`` or beyond the stack depth are skipped.
    """
    cols = ["timestamp", "S", "k_e", "modeled_dp", "p_star", "p_shifted", "realized_dp", "per_gw"]
    rows = []
    for p in plans:
        if p.timestamp is None or p.S == 0.0:
            continue
        st = stacks.get(p.timestamp.astimezone(timezone.utc))
        if st is None:
            continue
        local = p.timestamp
        kp, km = params.energy(calendar.bucket(local.date(), local.hour))
        k_e = kp if p.S > 0 else km
        try:
            base = clear(st).p_star
            moved = clear(st, p.S).p_star
        except NoCrossing:
            continue
        dp = moved - base
        rows.append((p.timestamp.isoformat(), p.S, k_e, k_e * p.S, base, moved, dp, 1000.0 * dp / abs(p.S)))
    return pd.DataFrame(rows, columns=cols)


def signal_metrics(models: Mapping, obs: ObservationSet) -> dict:
    """Confusion metrics of every (zone, side) model against labels at its own gamma."""
    out = {}
    for (zone, side), m in sorted(models.items()):
        v = obs.for_zone(zone)
        if len(v) == 0:
            continue
        th = (m.gamma, v.thresholds[1]) if side == "INC" else (v.thresholds[0], m.gamma)
        out[(zone, side)] = confusion(fires(m, v.x), v.with_thresholds(*th).labels(side))
    return out


def attach_alignment(report: BacktestReport, obs: ObservationSet, view: str = "execution",
                     top_fraction: float = 0.2) -> None:
    """Hour-of-day and month JS diagnostics per side, where trades exist."""
    t = report.view(view)
    local = pd.to_datetime(t["timestamp"].map(lambda s: s[:19])) if len(t) else None
    for side in ("INC", "DEC"):
        mask = (t["side"] == side).to_numpy() if len(t) else np.zeros(0, dtype=bool)
        if not mask.any():
            continue
        e = edge(obs, side)
        months = np.array([d.month for d in obs.day])
        for axis, hours_axis, trade_axis in (("hour", obs.hour, local[mask].dt.hour.to_numpy()),
                                             ("month", months, local[mask].dt.month.to_numpy())):
            report.alignment[(side, axis)] = spike_alignment(trade_axis, hours_axis, e, axis, top_fraction)


# --- files ---------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def _write(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def emit_report(report: BacktestReport, out_dir, extra: Optional[dict] = None) -> Path:
    """Write the report as delimited text plus ``manifest.json`` with content hashes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, header, rows):
        _write(out / name, header, rows)
        written.append(name)

    t = report.trades
    put("trades.csv", TRADE_COLUMNS, t[TRADE_COLUMNS].itertuples(index=False, name=None) if len(t) else [])
    for view in report.views:
        s = report.series(view)
        put(f"pnl_series_{view}.csv", ["timestamp", "total", "inc", "dec", "cum_total", "cum_inc", "cum_dec"],
            s[["timestamp", "total", "inc", "dec", "cum_total", "cum_inc", "cum_dec"]].itertuples(index=False, name=None))
        z = report.by_zone(view)
        rows = [(zone, int(r.hours_active), float(r.mean_abs_q), float(r.pnl)) for zone, r in z.iterrows()]
        if rows:
            vt = report.view(view)
            rows.append(("TOTAL", int(vt["timestamp"].nunique()), float(np.mean(np.abs(vt["q"]))),
                         float(vt["pnl"].sum())))
        put(f"attribution_{view}.csv", ["zone", "hours_active", "mean_abs_q", "pnl"], rows)
        put(f"yearly_{view}.csv", ["year", "pnl"], [(int(y), float(v)) for y, v in report.by_year(view).items()])
    put("metrics.csv", ["zone", "side", "tp", "fp", "fn", "tn", "precision", "recall", "f1"],
        [(z, s, m.tp, m.fp, m.fn, m.tn, m.precision, m.recall, m.f1) for (z, s), m in sorted(report.metrics.items())])
    hist_rows, js_rows = [], []
    for (side, axis), a in sorted(report.alignment.items()):
        bins = range(24) if axis == "hour" else range(1, 13)
        for b, n1, n2, n3 in zip(bins, a.trades, a.top, a.all_hours):
            hist_rows.append((side, axis, b, n1, n2, n3))
        js_rows.append((side, axis, a.js_top, a.js_all))
    put("histograms.csv", ["side", "axis", "bin", "trades", "top_spikes", "all_hours"], hist_rows)
    put("js.csv", ["side", "axis", "js_top", "js_all"], js_rows)
    if report.significance is not None:
        sig = report.significance
        put("significance.csv", list(sig.columns), sig.itertuples(index=False, name=None))

    manifest = {"files": {name: sha256(out / name) for name in sorted(written)}}
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
