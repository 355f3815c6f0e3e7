"""Seeded synthetic data with planted ground truth.

The panel plants spike probabilities through a logistic link on the
standardized system load forecast, a linear (loss - congestion) response to
zonal load, and stacks whose buy and sell responses are exactly linear on a
50 MWh grid.
"""

from __future__ import annotations

import json
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .bidstack import BidStack, write_bidstacks
from .panel import MARKET_TIMEZONE, HourlyRecord, MarketCalendar, Panel, write_panel

GRID_MWH = 50.0
DEFAULT_ZONES = {"NORTHZ": 1500.0, "CENTRZ": 4000.0, "CITYZ": 9000.0}


def planted_logistic(seed: int, n: int, beta) -> tuple:
    """Draw ``n`` rows of standard-normal features with labels from ``sigmoid(beta . [1, x])``.

    Returns ``(design, y)`` where ``design`` already carries the unit
    intercept column.
    """
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=np.float64)
    feats = rng.standard_normal((n, beta.size - 1))
    design = np.column_stack([np.ones(n), feats])
    y = (rng.random(n) < expit(design @ beta)).astype(np.float64)
    return design, y


def intercept_for_rate(slope: float, z: np.ndarray, rate: float) -> float:
    """Intercept ``a`` with mean(sigmoid(a + slope*z)) == rate."""
    return brentq(lambda a: float(np.mean(expit(a + slope * z))) - rate, -60.0, 60.0, xtol=1e-12)


def synth_panel(seed: int, hours: int, market: str = "NYISO", zones=None, start=date(2023, 1, 2),
                spike_rate: float = 0.05, spike_slope: float = 1.5, lc_slope=None) -> tuple:
    """Generate a panel and its planted truth.

    Negative spikes fire with probability ``sigmoid(a + slope * z)`` where
    ``z`` is the standardized system load forecast and ``a`` makes the mean
    rate ``spike_rate``; positive spikes mirror this on ``-z`` (and never
    coincide with a negative one). Returns ``(panel, truth)``.
    """
    rng = np.random.default_rng(seed)
    zones = dict(zones or DEFAULT_ZONES)
    names = sorted(zones)
    tz = ZoneInfo(MARKET_TIMEZONE[market])
    t0 = datetime.combine(start, datetime.min.time(), tzinfo=tz).astimezone(timezone.utc)
    stamps = [(t0 + timedelta(hours=h)).astimezone(tz) for h in range(hours)]
    hod = np.array([s.hour for s in stamps], dtype=np.float64)

    shape = 1.0 + 0.25 * np.sin((hod - 9.0) / 24.0 * 2 * np.pi)
    common = rng.normal(0.0, 0.06, hours)
    fcst = {z: zones[z] * (shape + common + rng.normal(0.0, 0.02, hours)) for z in names}
    actual = {z: fcst[z] * (1.0 + rng.normal(0.0, 0.02, hours)) for z in names}
    system = sum(fcst[z] for z in names)

    # negative spikes (RT above DA) follow high load, positive ones low load
    zs = (system - system.mean()) / system.std()
    a = intercept_for_rate(spike_slope, zs, spike_rate)
    a_pos = intercept_for_rate(-spike_slope, zs, spike_rate)
    p = expit(a + spike_slope * zs)
    p_pos = expit(a_pos - spike_slope * zs)
    negative = rng.random(hours) < p
    positive = ~negative & (rng.random(hours) < p_pos)
    spike = negative | positive
    size = 60.0 + rng.exponential(40.0, hours)

    if lc_slope is None:
        lc_slope = {z: 5.0 / zones[z] for z in names}
    records = []
    for z in names:
        scale = 0.8 + 0.4 * rng.random()
        dart = rng.normal(0.0, 4.0, hours) + np.where(spike, np.where(negative, -size, size) * scale, 0.0)
        da = 35.0 + 10.0 * (shape - 1.0) + rng.normal(0.0, 2.0, hours)
        rt = da - dart
        dart = da - rt
        lc = lc_slope[z] * fcst[z] + 1.0 + rng.normal(0.0, 0.3, hours)
        cong = rng.normal(0.0, 1.0, hours)
        loss = lc + cong
        for h in range(hours):
            records.append(HourlyRecord(
                timestamp=stamps[h], zone=z, da_price=float(da[h]), rt_price=float(rt[h]), dart=None,
                zonal_load_forecast=float(fcst[z][h]), zonal_load_actual=float(actual[z][h]),
                system_load_forecast=float(system[h]), loss_component=float(loss[h]),
                congestion_component=float(cong[h]),
            ))
    panel = Panel.from_records(records, market)
    truth = {
        "spike_intercept": a,
        "spike_intercept_pos": a_pos,
        "spike_slope": spike_slope,
        "spike_probability": p,
        "negative": negative,
        "positive": positive,
        "spike": spike,
        "lc_slope": lc_slope,
        "mean_load": {z: float(np.mean(actual[z])) for z in names},
        "stamps": stamps,
    }
    return panel, truth


def planted_stack(timestamp, p_star: float, d0: float, supply_slope: float, demand_slope: float,
                  depth: int = 60) -> BidStack:
    """Step curves whose shocks on the 50 MWh grid move price linearly.

    A buy shock of ``m * 50`` MWh raises the price by ``supply_slope * m * 50``
    and a sell shock lowers it by ``demand_slope * m * 50``, for ``m < depth``.
    Quantities sit half a grid step off the demand steps so no crossing is flat.
    """
    g = GRID_MWH
    low = p_star - demand_slope * g * (depth + 1) - 1.0
    supply = [(low, d0 - g / 2)]
    supply += [(p_star + k * supply_slope * g, d0 + k * g + g / 2) for k in range(depth + 1)]
    demand = [(p_star - j * demand_slope * g, d0 + g * j - g) for j in range(depth, 0, -1)]
    demand.append((p_star, d0))
    return BidStack(timestamp, supply, demand)


def synth_stacks(stamps, seed: int, supply_slope=0.01, demand_slope=0.02, calendar=None) -> list:
    """One planted stack per timestamp.

    Slopes may be floats or ``{(season, band): slope}`` maps (needs ``calendar``).
    """
    rng = np.random.default_rng(seed + 7919)
    out = []
    for ts in stamps:
        bucket = calendar.bucket(ts.date(), ts.hour) if calendar is not None else None
        ss = supply_slope[bucket] if isinstance(supply_slope, dict) else supply_slope
        sd = demand_slope[bucket] if isinstance(demand_slope, dict) else demand_slope
        p_star = float(np.round(30.0 + 20.0 * rng.random(), 2))
        d0 = float(np.round(15000.0 + 5000.0 * rng.random()) // GRID_MWH * GRID_MWH)
        out.append(planted_stack(ts, p_star, d0, ss, sd))
    return out


def default_config(market: str, days: list, zones: list) -> dict:
    """Run configuration for a fixture spanning ``days`` (sorted local dates)."""
    n = len(days)
    cut1, cut2 = days[int(n * 0.6)], days[int(n * 0.8)]
    return {
        "market": market,
        "panel": "panel.csv",
        "stacks": "stacks.csv",
        "calendar": "calendar.json",
        "output_dir": "out",
        "splits": {
            "train": [days[0].isoformat(), cut1.isoformat()],
            "validation": [cut1.isoformat(), cut2.isoformat()],
            "test": [cut2.isoformat(), (days[-1] + timedelta(days=1)).isoformat()],
        },
        "features": {"zones_pooled": zones, "lag_hours": [24, 48], "load_error_lags": [24]},
        "grids": {"gamma_pos": [2, 5, 10, 15, 30], "gamma_neg": [5, 8, 10, 30],
                  "tau": [0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 0.95]},
        "fit": {"l2": 0.01, "max_iter": 2000, "tol": 1e-6},
        "impact": {"delta_q": 1000.0, "top_n": 10, "reference_zone": zones[0], "k_reference": 0.05},
        "mode": "unconstrained",
        "significance": {"min_trades": 50, "t_threshold": 2.0},
        "seed": None,
    }


def write_fixture(out_dir, seed: int = 1, hours: int = 200, market: str = "NYISO",
                  spike_rate: float = 0.2, zones=None) -> Path:
    """Write panel, stacks, calendar and run config into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panel, truth = synth_panel(seed, hours, market=market, zones=zones, spike_rate=spike_rate)
    calendar = MarketCalendar.for_market(market)
    write_panel(panel, out / "panel.csv")
    write_bidstacks(synth_stacks(truth["stamps"], seed, calendar=calendar), out / "stacks.csv")
    days = sorted({s.date() for s in truth["stamps"]})
    cfg = default_config(market, days, panel.zones)
    cfg["seed"] = seed
    doc = calendar.to_dict()
    doc["splits"] = cfg["splits"]
    (out / "calendar.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return out / "config.json"
