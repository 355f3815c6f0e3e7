"""Leakage-free predictor vectors and spike labels.

Layout of ``x`` (stable, documented in ``ObservationSet.columns``): for every
pooled zone in order, ``load_fcst``, one ``dart_lag{L}`` per DART lag and one
``load_err_lag{L}`` per load-error lag; then ``system:load_fcst`` when
enabled; then the calendar block ``weekend, holiday, hour, month, winter,
summer`` (Shoulder is the baseline season).

Lags are in whole days relative to the last day fully settled before gate
closure: a 24h lag reads the same clock hour on that day, a 48h lag the day
before it, and so on. Realized quantities (RT price, actual load) of an hour
become available when the hour ends; load forecasts are taken to be published
``forecast_lead_hours`` before gate closure.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import InsufficientHistory, UnknownZone
from .panel import MarketCalendar, Panel

CALENDAR_FLAGS = ("weekend", "holiday", "hour", "month", "season")
_HOUR = np.timedelta64(1, "h")


@dataclass(frozen=True)
class FeatureSpec:
    zones_pooled: tuple
    lag_hours: tuple = (24, 48)
    load_error_lags: tuple = (24,)
    include_system_load: bool = False
    calendar_features: tuple = CALENDAR_FLAGS

    def __post_init__(self):
        object.__setattr__(self, "zones_pooled", tuple(self.zones_pooled))
        object.__setattr__(self, "lag_hours", tuple(int(v) for v in self.lag_hours))
        object.__setattr__(self, "load_error_lags", tuple(int(v) for v in self.load_error_lags))
        object.__setattr__(self, "calendar_features", tuple(self.calendar_features))
        if not self.zones_pooled:
            raise ValueError("zones_pooled must name at least one zone")
        for lag in self.lag_hours + self.load_error_lags:
            # anything shorter than a day is unsettled at gate closure
            if lag < 24 or lag % 24:
                raise ValueError(f"lag {lag}h must be a positive multiple of 24h")
        unknown = set(self.calendar_features) - set(CALENDAR_FLAGS)
        if unknown:
            raise ValueError(f"unknown calendar features {sorted(unknown)}")

    @property
    def columns(self) -> list:
        cols = []
        for z in self.zones_pooled:
            cols.append(f"{z}:load_fcst")
            cols += [f"{z}:dart_lag{lag}" for lag in self.lag_hours]
            cols += [f"{z}:load_err_lag{lag}" for lag in self.load_error_lags]
        if self.include_system_load:
            cols.append("system:load_fcst")
        for flag in CALENDAR_FLAGS:
            if flag not in self.calendar_features:
                continue
            if flag == "season":
                cols += ["cal:winter", "cal:summer"]
            else:
                cols.append(f"cal:{flag}")
        return cols

    @property
    def dimension(self) -> int:
        return len(self.columns)

    def to_dict(self) -> dict:
        return {
            "zones_pooled": list(self.zones_pooled),
            "lag_hours": list(self.lag_hours),
            "load_error_lags": list(self.load_error_lags),
            "include_system_load": self.include_system_load,
            "calendar_features": list(self.calendar_features),
        }

    @classmethod
    def from_dict(cls, doc) -> "FeatureSpec":
        return cls(**doc)


@dataclass(frozen=True)
class LabeledObservation:
    timestamp: datetime
    zone: str
    x: np.ndarray
    y_neg: int
    y_pos: int
    realized_dart: float


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, obs: "ObservationSet") -> "Standardizer":
        if obs.standardizer is not None:
            raise ValueError("observations are already standardized")
        mean = obs.x.mean(axis=0)
        scale = obs.x.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean=mean, scale=scale)

    def apply(self, obs: "ObservationSet") -> "ObservationSet":
        if obs.standardizer is not None:
            raise ValueError("observations are already standardized")
        return replace(obs, x=(obs.x - self.mean) / self.scale, standardizer=self)

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "scale": [float(v) for v in self.scale]}


@dataclass
class ObservationSet:
    """Column-oriented sequence of labeled observations.

    ``sources`` holds, per observation and column, the UTC epoch second at
    which the value became known (NaN for calendar columns). ``gate`` is the
    gate-closure instant of each observation's operating day.
    """

    utc: np.ndarray              # datetime64[ns], UTC
    offset_min: np.ndarray
    zone: np.ndarray
    day: np.ndarray              # datetime.date objects
    hour: np.ndarray
    season: np.ndarray
    band: np.ndarray
    x: np.ndarray
    realized_dart: np.ndarray
    sources: np.ndarray
    gate: np.ndarray
    columns: list
    thresholds: tuple            # (gamma_neg, gamma_pos)
    dropped: int = 0
    split: Optional[str] = None
    standardizer: Optional[Standardizer] = None

    def __len__(self):
        return len(self.realized_dart)

    def __getitem__(self, i) -> LabeledObservation:
        return LabeledObservation(
            timestamp=self.timestamp(i),
            zone=str(self.zone[i]),
            x=self.x[i],
            y_neg=int(self.y_neg[i]),
            y_pos=int(self.y_pos[i]),
            realized_dart=float(self.realized_dart[i]),
        )

    def timestamp(self, i) -> datetime:
        ts = pd.Timestamp(self.utc[i]).tz_localize("UTC").to_pydatetime()
        return ts.astimezone(timezone(timedelta(minutes=int(self.offset_min[i]))))

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    @property
    def y_neg(self) -> np.ndarray:
        return (self.realized_dart <= -self.thresholds[0]).astype(np.int8)

    @property
    def y_pos(self) -> np.ndarray:
        return (self.realized_dart >= self.thresholds[1]).astype(np.int8)

    def labels(self, side: str) -> np.ndarray:
        """Spike labels for a trading side: INC trades negative spikes, DEC positive."""
        return self.y_neg if side == "INC" else self.y_pos

    def with_thresholds(self, gamma_neg: float, gamma_pos: float) -> "ObservationSet":
        if gamma_neg < 0 or gamma_pos < 0:
            raise ValueError("spike thresholds must be non-negative")
        return replace(self, thresholds=(float(gamma_neg), float(gamma_pos)))

    def subset(self, mask) -> "ObservationSet":
        mask = np.asarray(mask)
        return replace(
            self,
            utc=self.utc[mask], offset_min=self.offset_min[mask], zone=self.zone[mask],
            day=self.day[mask], hour=self.hour[mask], season=self.season[mask], band=self.band[mask],
            x=self.x[mask], realized_dart=self.realized_dart[mask], sources=self.sources[mask],
            gate=self.gate[mask],
        )

    def for_zone(self, zone: str) -> "ObservationSet":
        return self.subset(self.zone == zone)

    def split_by(self, splits) -> dict:
        """Partition into ``{"train", "validation", "test"}`` tagged subsets."""
        names = np.array([splits.which(d) for d in self.day], dtype=object)
        return {name: replace(self.subset(names == name), split=name)
                for name in ("train", "validation", "test")}

    @property
    def years(self) -> np.ndarray:
        return np.array([d.year for d in self.day], dtype=np.int64)


def _last_settled_day(gate: datetime) -> date:
    # a day is settled once its last hour has ended, i.e. at local midnight
    if gate.time() > datetime.min.time():
        return gate.date() - timedelta(days=1)
    return gate.date() - timedelta(days=2)


def _epoch(series) -> np.ndarray:
    v = pd.to_datetime(series, utc=True)
    return (v - pd.Timestamp("1970-01-01", tz="UTC")) / pd.Timedelta(seconds=1)


def build_features(panel: Panel, spec: FeatureSpec, calendar: MarketCalendar,
                   thresholds: tuple, target_zones: Optional[Sequence[str]] = None) -> ObservationSet:
    """One observation per (operating hour, target zone) with complete features.

    ``thresholds`` is ``(gamma_neg, gamma_pos)``. Hours with any unavailable
    lag (or a missing pooled zone) are dropped; their count is in ``dropped``.
    ``target_zones`` defaults to ``spec.zones_pooled``.
    """
    g_neg, g_pos = thresholds
    if g_neg <= 0 or g_pos <= 0:
        raise ValueError("spike thresholds must be positive")
    targets = list(target_zones or spec.zones_pooled)
    known = set(panel.zones)
    for z in list(spec.zones_pooled) + targets:
        if z not in known:
            raise UnknownZone(f"zone {z!r} not in panel (have {sorted(known)})")

    f = panel.frame
    hours = (f[["utc", "offset_min", "day", "hour", "occurrence"]]
             .drop_duplicates("utc").sort_values("utc", kind="mergesort").reset_index(drop=True))

    gate_by_day = {d: calendar.gate_closure(d) for d in hours["day"].unique()}
    hours["gate"] = hours["day"].map(lambda d: gate_by_day[d].timestamp())
    settled = {d: _last_settled_day(g) for d, g in gate_by_day.items()}
    lead = calendar.forecast_lead_hours * 3600.0

    n = len(hours)
    cols = spec.columns
    x = np.full((n, len(cols)), np.nan)
    src = np.full((n, len(cols)), np.nan)
    c = 0

    def lookup(zone_rows, src_days):
        # (src_day, hour, occurrence) -> row, falling back to occurrence 0
        key = pd.DataFrame({"day": src_days, "hour": hours["hour"], "occurrence": hours["occurrence"]})
        merged = key.merge(zone_rows, on=["day", "hour", "occurrence"], how="left")
        retry = merged["utc"].isna() & (key["occurrence"] > 0)
        if retry.any():
            alt = key[retry].assign(occurrence=0).merge(zone_rows, on=["day", "hour", "occurrence"], how="left")
            merged.loc[retry, zone_rows.columns.drop(["day", "hour", "occurrence"])] = alt[
                zone_rows.columns.drop(["day", "hour", "occurrence"])].to_numpy()
        return merged

    for z in spec.zones_pooled:
        zf = f.loc[f["zone"] == z, ["utc", "day", "hour", "occurrence", "dart",
                                    "zonal_load_forecast", "zonal_load_actual"]]
        at_hour = hours[["utc"]].merge(zf[["utc", "zonal_load_forecast"]], on="utc", how="left")
        x[:, c] = at_hour["zonal_load_forecast"].to_numpy()
        src[:, c] = np.where(np.isnan(x[:, c]), np.nan, hours["gate"].to_numpy() - lead)
        c += 1
        rows = zf.assign(err=zf["zonal_load_actual"] - zf["zonal_load_forecast"])[
            ["day", "hour", "occurrence", "utc", "dart", "err"]]
        for lag in spec.lag_hours:
            back = lag // 24 - 1
            src_days = hours["day"].map(lambda d: settled[d] - timedelta(days=back))
            m = lookup(rows, src_days)
            x[:, c] = m["dart"].to_numpy(dtype=np.float64)
            src[:, c] = _epoch(m["utc"]).to_numpy() + 3600.0
            c += 1
        for lag in spec.load_error_lags:
            back = lag // 24 - 1
            src_days = hours["day"].map(lambda d: settled[d] - timedelta(days=back))
            m = lookup(rows, src_days)
            x[:, c] = m["err"].to_numpy(dtype=np.float64)
            src[:, c] = _epoch(m["utc"]).to_numpy() + 3600.0
            c += 1
    if spec.include_system_load:
        zf = f.loc[f["zone"] == spec.zones_pooled[0], ["utc", "system_load_forecast"]]
        at_hour = hours[["utc"]].merge(zf, on="utc", how="left")
        x[:, c] = at_hour["system_load_forecast"].to_numpy()
        src[:, c] = np.where(np.isnan(x[:, c]), np.nan, hours["gate"].to_numpy() - lead)
        c += 1
    days = hours["day"].to_numpy()
    for flag in CALENDAR_FLAGS:
        if flag not in spec.calendar_features:
            continue
        if flag == "weekend":
            x[:, c] = [1.0 if d.weekday() >= 5 else 0.0 for d in days]
        elif flag == "holiday":
            x[:, c] = [1.0 if calendar.is_holiday(d) else 0.0 for d in days]
        elif flag == "hour":
            x[:, c] = hours["hour"].to_numpy(dtype=np.float64)
        elif flag == "month":
            x[:, c] = [float(d.month) for d in days]
        elif flag == "season":
            seasons = [calendar.season(d.month) for d in days]
            x[:, c] = [1.0 if s == "Winter" else 0.0 for s in seasons]
            x[:, c + 1] = [1.0 if s == "Summer" else 0.0 for s in seasons]
            c += 1
        c += 1
    assert c == len(cols)

    complete = ~np.isnan(x[:, : _n_sourced(cols)]).any(axis=1)
    parts = []
    dropped = 0
    for z in targets:
        zf = f.loc[f["zone"] == z, ["utc", "dart"]]
        lab = hours[["utc"]].merge(zf, on="utc", how="left")["dart"].to_numpy()
        have = ~np.isnan(lab)
        keep = have & complete
        dropped += int(np.sum(have & ~complete))
        parts.append((z, np.flatnonzero(keep), lab))

    total = sum(len(idx) for _, idx, _ in parts)
    if total == 0:
        raise InsufficientHistory(
            f"no operating hour has complete features (deepest lag "
            f"{max(spec.lag_hours + spec.load_error_lags)}h, {n} hours in panel)"
        )

    idx_all = np.concatenate([idx for _, idx, _ in parts])
    zone_all = np.concatenate([np.full(len(idx), z, dtype=object) for z, idx, _ in parts])
    dart_all = np.concatenate([lab[idx] for _, idx, lab in parts])
    sel = hours.iloc[idx_all]
    day_arr = sel["day"].to_numpy()
    hour_arr = sel["hour"].to_numpy(dtype=np.int64)
    buckets = [calendar.bucket(d, h) for d, h in zip(day_arr, hour_arr)]
    return ObservationSet(
        utc=sel["utc"].dt.tz_localize(None).to_numpy(dtype="datetime64[ns]"),
        offset_min=sel["offset_min"].to_numpy(dtype=np.int64),
        zone=zone_all,
        day=day_arr,
        hour=hour_arr,
        season=np.array([b[0] for b in buckets], dtype=object),
        band=np.array([b[1] for b in buckets], dtype=object),
        x=x[idx_all].copy(),
        realized_dart=dart_all.astype(np.float64),
        sources=src[idx_all].copy(),
        gate=sel["gate"].to_numpy(dtype=np.float64),
        columns=cols,
        thresholds=(float(g_neg), float(g_pos)),
        dropped=dropped,
    )


def _n_sourced(cols) -> int:
    return sum(1 for c in cols if not c.startswith("cal:"))


# --- audit -----------------------------------------------------------------

@dataclass
class ColumnAudit:
    column: str
    min_slack_hours: Optional[float]   # gate closure minus latest source; None for calendar
    violations: int
    value_mismatches: int

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.value_mismatches == 0


@dataclass
class AuditReport:
    columns: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.columns)

    @property
    def failing(self) -> list:
        return [c.column for c in self.columns if not c.passed]

    def lines(self) -> list:
        out = []
        for c in self.columns:
            slack = "n/a" if c.min_slack_hours is None else f"{c.min_slack_hours:.2f}h"
            out.append(f"{'PASS' if c.passed else 'FAIL'} {c.column} min_slack={slack} "
                       f"violations={c.violations} mismatches={c.value_mismatches}")
        return out


def leakage_audit(obs: ObservationSet, panel: Panel, calendar: MarketCalendar) -> AuditReport:
    """Check every sourced feature was known strictly before gate closure.

    Gate closure is recomputed from the calendar, and each value is compared
    with the panel row its source time points to. A column fails when any
    source is at or after gate closure or any value disagrees with its source.
    """
    x = obs.x if obs.standardizer is None else obs.standardizer.invert(obs.x)
    f = panel.frame
    epoch = _epoch(f["utc"]).to_numpy()
    lookup = {(z, t): i for i, (z, t) in enumerate(zip(f["zone"].to_numpy(), epoch))}
    dart = f["dart"].to_numpy()
    err = (f["zonal_load_actual"] - f["zonal_load_forecast"]).to_numpy()
    fcst = f["zonal_load_forecast"].to_numpy()
    sysf = f["system_load_forecast"].to_numpy()
    obs_epoch = (obs.utc - np.datetime64("1970-01-01T00:00:00")) / np.timedelta64(1, "s")
    gates = np.array([calendar.gate_closure(d).timestamp() for d in obs.day])

    first_zone = obs.columns[0].split(":", 1)[0]
    report = AuditReport()
    for c, name in enumerate(obs.columns):
        if name.startswith("cal:"):
            report.columns.append(ColumnAudit(name, None, 0, 0))
            continue
        zone, kind = name.split(":", 1)
        slack = (gates - obs.sources[:, c]) / 3600.0
        bad_time = int(np.sum(~(slack > 0)))
        mismatches = 0
        for i in range(len(obs)):
            if kind.startswith("dart_lag") or kind.startswith("load_err_lag"):
                row = lookup.get((zone, obs.sources[i, c] - 3600.0))
                ref = None if row is None else (dart[row] if kind.startswith("dart") else err[row])
            else:
                # system load is read from the first pooled zone's row
                owner = first_zone if zone == "system" else zone
                row = lookup.get((owner, obs_epoch[i]))
                ref = None if row is None else (sysf[row] if zone == "system" else fcst[row])
            if ref is None or not _close(x[i, c], ref):
                mismatches += 1
        report.columns.append(ColumnAudit(name, float(np.min(slack)) if len(slack) else None,
                                          bad_time, mismatches))
    return report


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))


# --- persistence -----------------------------------------------------------

def write_observations(obs: ObservationSet, path) -> Path:
    """Write observations as delimited text plus a ``.columns.json`` sidecar."""
    path = Path(path)
    d = obs.dimension
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "zone", "y_neg", "y_pos", "realized_dart"] + [f"x_{k}" for k in range(d)])
        y_neg, y_pos = obs.y_neg, obs.y_pos
        for i in range(len(obs)):
            w.writerow([obs.timestamp(i).isoformat(), obs.zone[i], int(y_neg[i]), int(y_pos[i]),
                        repr(float(obs.realized_dart[i]))] + [repr(float(v)) for v in obs.x[i]])
    sidecar = path.with_suffix(".columns.json")
    meta = {
        "columns": {f"x_{k}": name for k, name in enumerate(obs.columns)},
        "thresholds": {"gamma_neg": obs.thresholds[0], "gamma_pos": obs.thresholds[1]},
        "standardizer": None if obs.standardizer is None else obs.standardizer.to_dict(),
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_observations(path, calendar: MarketCalendar) -> ObservationSet:
    """Inverse of :func:`write_observations`. Source provenance is not persisted."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".columns.json").read_text())
    cols = [meta["columns"][f"x_{k}"] for k in range(len(meta["columns"]))]
    frame = pd.read_csv(path, dtype={"zone": str}, float_precision="round_trip")
    stamps = [datetime.fromisoformat(s) for s in frame["timestamp"]]
    utc = np.array([s.astimezone(timezone.utc).replace(tzinfo=None) for s in stamps], dtype="datetime64[ns]")
    offsets = np.array([int(s.utcoffset().total_seconds() // 60) for s in stamps], dtype=np.int64)
    days = np.array([s.date() for s in stamps], dtype=object)
    hrs = np.array([s.hour for s in stamps], dtype=np.int64)
    buckets = [calendar.bucket(d, h) for d, h in zip(days, hrs)]
    std = meta.get("standardizer")
    th = meta["thresholds"]
    return ObservationSet(
        utc=utc, offset_min=offsets, zone=frame["zone"].to_numpy(dtype=object), day=days, hour=hrs,
        season=np.array([b[0] for b in buckets], dtype=object),
        band=np.array([b[1] for b in buckets], dtype=object),
        x=frame[[f"x_{k}" for k in range(len(cols))]].to_numpy(dtype=np.float64),
        realized_dart=frame["realized_dart"].to_numpy(dtype=np.float64),
        sources=np.full((len(frame), len(cols)), np.nan),
        gate=np.array([calendar.gate_closure(d).timestamp() for d in days]),
        columns=cols,
        thresholds=(th["gamma_neg"], th["gamma_pos"]),
        standardizer=None if std is None else Standardizer(np.array(std["mean"]), np.array(std["scale"])),
    )
