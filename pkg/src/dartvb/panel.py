"""Hourly multi-zone market panel: ingest, validation, calendar rules and
cross-zone diagnostics.

Timestamps are hour-beginning instants in market-local wall-clock time with a
numeric UTC offset. A fall-back (DST) day carries two rows for the repeated
clock hour; they are told apart by ``occurrence`` (0 then 1, in UTC order).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd

from .errors import (
    ConfigError,
    DegenerateSeries,
    EmptySeries,
    InsufficientOverlap,
    InvariantViolation,
    MalformedFile,
    MissingColumn,
)

PANEL_COLUMNS = (
    "timestamp",
    "zone",
    "da_price",
    "rt_price",
    "zonal_load_forecast",
    "zonal_load_actual",
    "system_load_forecast",
    "loss_component",
    "congestion_component",
)
OPTIONAL_COLUMNS = ("loss_component", "congestion_component")
LOAD_COLUMNS = ("zonal_load_forecast", "zonal_load_actual", "system_load_forecast")
VALUE_COLUMNS = ("da_price", "rt_price", "dart") + PANEL_COLUMNS[4:]

GATE_CLOSURE = {"NYISO": time(5, 0), "ISONE": time(10, 30), "ERCOT": time(10, 0)}
MARKET_TIMEZONE = {
    "NYISO": "America/New_York",
    "ISONE": "America/New_York",
    "ERCOT": "America/Chicago",
}

SEASONS = ("Winter", "Summer", "Shoulder")
BANDS = ("Peak", "OffPeak")
BUCKETS = tuple((s, b) for s in SEASONS for b in BANDS)


@dataclass(frozen=True)
class HourlyRecord:
    timestamp: datetime
    zone: str
    da_price: float
    rt_price: float
    dart: float
    zonal_load_forecast: float
    zonal_load_actual: float
    system_load_forecast: float
    loss_component: Optional[float] = None
    congestion_component: Optional[float] = None


@dataclass(frozen=True)
class MarketCalendar:
    """Gate closure, holidays and the season / peak-band rules of one market.

    ``season_months`` maps Winter and Summer to their months; every other
    month is Shoulder. Peak is ``peak_hours_ending`` on non-holiday days whose
    weekday (Mon=0) is in ``peak_weekdays``.
    """

    market: str
    gate_closure_local_time: time
    timezone: str
    holidays: frozenset = frozenset()
    season_months: Mapping[str, tuple] = field(
        default_factory=lambda: {"Winter": (12, 1, 2), "Summer": (6, 7, 8)}
    )
    peak_hours_ending: tuple = tuple(range(8, 24))
    peak_weekdays: tuple = (0, 1, 2, 3, 4)
    # load forecasts are assumed published this long before gate closure
    forecast_lead_hours: float = 1.0

    def __post_init__(self):
        expected = GATE_CLOSURE.get(self.market)
        if expected is not None and self.gate_closure_local_time != expected:
            raise ConfigError(
                f"{self.market} gate closure is {expected:%H:%M}, "
                f"got {self.gate_closure_local_time:%H:%M}"
            )
        seen = [m for months in self.season_months.values() for m in months]
        if len(seen) != len(set(seen)) or not set(seen) <= set(range(1, 13)):
            raise ConfigError(f"season months overlap or fall outside 1..12: {dict(self.season_months)}")
        if set(self.season_months) - {"Winter", "Summer"}:
            raise ConfigError("season_months may only name Winter and Summer; Shoulder is the remainder")

    @classmethod
    def for_market(cls, market: str, **overrides) -> "MarketCalendar":
        if market not in GATE_CLOSURE:
            raise ConfigError(f"unknown market {market!r}; expected one of {sorted(GATE_CLOSURE)}")
        kw = dict(
            market=market,
            gate_closure_local_time=GATE_CLOSURE[market],
            timezone=MARKET_TIMEZONE[market],
        )
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MarketCalendar":
        market = doc["market"]
        overrides = {}
        if "gate_closure" in doc:
            overrides["gate_closure_local_time"] = time.fromisoformat(doc["gate_closure"])
        if "timezone" in doc:
            overrides["timezone"] = doc["timezone"]
        if "holidays" in doc:
            overrides["holidays"] = frozenset(date.fromisoformat(d) for d in doc["holidays"])
        if "season_rule" in doc:
            overrides["season_months"] = {k: tuple(v) for k, v in doc["season_rule"].items()}
        peak = doc.get("peak_rule", {})
        if "hours_ending" in peak:
            overrides["peak_hours_ending"] = tuple(peak["hours_ending"])
        if "weekdays" in peak:
            overrides["peak_weekdays"] = tuple(peak["weekdays"])
        if "forecast_lead_hours" in doc:
            overrides["forecast_lead_hours"] = float(doc["forecast_lead_hours"])
        return cls.for_market(market, **overrides)

    def to_dict(self) -> dict:
        return {
            "market": self.market,
            "gate_closure": self.gate_closure_local_time.strftime("%H:%M"),
            "timezone": self.timezone,
            "holidays": sorted(d.isoformat() for d in self.holidays),
            "season_rule": {k: list(v) for k, v in sorted(self.season_months.items())},
            "peak_rule": {
                "hours_ending": list(self.peak_hours_ending),
                "weekdays": list(self.peak_weekdays),
            },
            "forecast_lead_hours": self.forecast_lead_hours,
        }

    def season(self, month: int) -> str:
        for name, months in self.season_months.items():
            if month in months:
                return name
        return "Shoulder"

    def is_holiday(self, day: date) -> bool:
        return day in self.holidays

    def band(self, day: date, hour: int) -> str:
        """Band of the hour beginning at ``hour`` (hour-ending ``hour + 1``)."""
        if day.weekday() in self.peak_weekdays and not self.is_holiday(day) and (hour + 1) in self.peak_hours_ending:
            return "Peak"
        return "OffPeak"

    def bucket(self, day: date, hour: int) -> tuple:
        return self.season(day.month), self.band(day, hour)

    def gate_closure(self, operating_day: date) -> datetime:
        """Aware instant at which bids for ``operating_day`` close (the day before)."""
        tz = ZoneInfo(self.timezone)
        return datetime.combine(operating_day - timedelta(days=1), self.gate_closure_local_time, tzinfo=tz)


@dataclass(frozen=True)
class SplitSpec:
    """Half-open date ranges ``[start, end)`` for train, validation and test."""

    train: tuple
    validation: tuple
    test: tuple

    def __post_init__(self):
        ranges = [("train", self.train), ("validation", self.validation), ("test", self.test)]
        for name, (lo, hi) in ranges:
            if not lo < hi:
                raise ConfigError(f"{name} range {lo}..{hi} is empty")
        for (n1, r1), (n2, r2) in zip(ranges, ranges[1:]):
            if r1[1] > r2[0]:
                raise ConfigError(
                    f"{n1} range {r1[0]}..{r1[1]} overlaps or follows {n2} range {r2[0]}..{r2[1]}"
                )

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SplitSpec":
        def rng(v):
            return (date.fromisoformat(v[0]), date.fromisoformat(v[1]))

        return cls(train=rng(doc["train"]), validation=rng(doc["validation"]), test=rng(doc["test"]))

    def to_dict(self) -> dict:
        return {k: [getattr(self, k)[0].isoformat(), getattr(self, k)[1].isoformat()]
                for k in ("train", "validation", "test")}

    def which(self, day: date) -> Optional[str]:
        for name in ("train", "validation", "test"):
            lo, hi = getattr(self, name)
            if lo <= day < hi:
                return name
        return None


class Panel:
    """Immutable hourly panel sorted by (zone, UTC instant).

    ``frame`` holds one row per (timestamp, zone) with the raw fields plus the
    derived columns ``utc``, ``offset_min``, ``local``, ``day``, ``hour`` and
    ``occurrence``. Treat it as read-only.
    """

    def __init__(self, frame: pd.DataFrame, market: str):
        self._frame = frame
        self.market = market

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame

    @property
    def zones(self) -> list:
        return sorted(self._frame["zone"].unique())

    def __len__(self):
        return len(self._frame)

    def zone_frame(self, zone: str) -> pd.DataFrame:
        return self._frame[self._frame["zone"] == zone]

    def records(self) -> Iterator[HourlyRecord]:
        f = self._frame
        for row in f.itertuples(index=False):
            yield HourlyRecord(
                timestamp=_to_aware(row.utc, row.offset_min),
                zone=row.zone,
                da_price=row.da_price,
                rt_price=row.rt_price,
                dart=row.dart,
                zonal_load_forecast=row.zonal_load_forecast,
                zonal_load_actual=row.zonal_load_actual,
                system_load_forecast=row.system_load_forecast,
                loss_component=None if math.isnan(row.loss_component) else row.loss_component,
                congestion_component=None if math.isnan(row.congestion_component) else row.congestion_component,
            )

    @classmethod
    def from_records(cls, records: Iterable[HourlyRecord], market: str) -> "Panel":
        rows = []
        for r in records:
            rows.append({
                "timestamp": r.timestamp,
                "zone": r.zone,
                "da_price": float(r.da_price),
                "rt_price": float(r.rt_price),
                "dart": None if r.dart is None else float(r.dart),
                "zonal_load_forecast": float(r.zonal_load_forecast),
                "zonal_load_actual": float(r.zonal_load_actual),
                "system_load_forecast": float(r.system_load_forecast),
                "loss_component": np.nan if r.loss_component is None else float(r.loss_component),
                "congestion_component": np.nan if r.congestion_component is None else float(r.congestion_component),
            })
        return _build_panel(rows, market, source="<records>")

    def has_components(self) -> bool:
        f = self._frame
        return bool(f["loss_component"].notna().all() and f["congestion_component"].notna().all())

    def equals(self, other: "Panel") -> bool:
        cols = ["utc", "offset_min", "zone"] + list(VALUE_COLUMNS)
        a, b = self._frame[cols].reset_index(drop=True), other.frame[cols].reset_index(drop=True)
        return self.market == other.market and a.equals(b)


def _to_aware(utc_ts, offset_min) -> datetime:
    tz = timezone(timedelta(minutes=int(offset_min)))
    return utc_ts.to_pydatetime().astimezone(tz)


def _parse_float(text: str, column: str, line: int, required: bool) -> float:
    if text == "":
        if required:
            raise MalformedFile(f"line {line}: empty {column}")
        return np.nan
    try:
        v = float(text)
    except ValueError:
        raise MalformedFile(f"line {line}: cannot parse {column}={text!r}") from None
    return v


def load_panel(path, market: str) -> Panel:
    """Read an hourly-panel delimited file and check every record invariant.

    Raises MissingColumn for absent headers, MalformedFile for unparseable
    cells and InvariantViolation (with offending line numbers) for DART
    mismatches, negative or non-finite loads, non-finite prices and duplicate
    (timestamp, zone) keys.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedFile(f"{path}: empty file") from None
        missing = [c for c in PANEL_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing}")
        idx = {name: header.index(name) for name in header}
        rows = []
        for line, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise MalformedFile(f"line {line}: expected {len(header)} cells, got {len(cells)}")
            try:
                ts = datetime.fromisoformat(cells[idx["timestamp"]].strip())
            except ValueError:
                raise MalformedFile(f"line {line}: bad timestamp {cells[idx['timestamp']]!r}") from None
            if ts.tzinfo is None:
                raise MalformedFile(f"line {line}: timestamp lacks a UTC offset")
            row = {"timestamp": ts, "zone": cells[idx["zone"]].strip(), "_line": line}
            if not row["zone"]:
                raise MalformedFile(f"line {line}: empty zone")
            for c in PANEL_COLUMNS[2:]:
                row[c] = _parse_float(cells[idx[c]].strip(), c, line, required=c not in OPTIONAL_COLUMNS)
            if "dart" in idx:
                row["dart"] = _parse_float(cells[idx["dart"]].strip(), "dart", line, required=False)
            else:
                row["dart"] = None
            rows.append(row)
    return _build_panel(rows, market, source=str(path))


def _build_panel(rows: list, market: str, source: str) -> Panel:
    bad = []
    for k, row in enumerate(rows):
        line = row.get("_line", k)
        expected = row["da_price"] - row["rt_price"]
        given = row["dart"]
        if given is not None and not (isinstance(given, float) and math.isnan(given)):
            # tolerate the last-ulp noise of decimal round-trips, nothing more
            if abs(given - expected) > 1e-9 * max(1.0, abs(row["da_price"]), abs(row["rt_price"])):
                bad.append((line, f"dart {given} != da - rt = {expected}"))
        row["dart"] = expected
        for c in ("da_price", "rt_price"):
            if not math.isfinite(row[c]):
                bad.append((line, f"{c} is not finite"))
        for c in LOAD_COLUMNS:
            if not math.isfinite(row[c]) or row[c] < 0:
                bad.append((line, f"{c}={row[c]} must be finite and non-negative"))
        for c in OPTIONAL_COLUMNS:
            if math.isinf(row[c]):
                bad.append((line, f"{c} is infinite"))
    if bad:
        detail = "; ".join(f"row {ln}: {msg}" for ln, msg in bad[:20])
        raise InvariantViolation(f"{source}: {len(bad)} invalid rows: {detail}", rows=[b[0] for b in bad])

    utc = [r["timestamp"].astimezone(timezone.utc) for r in rows]
    offsets = [int(r["timestamp"].utcoffset().total_seconds() // 60) for r in rows]
    frame = pd.DataFrame({
        "utc": pd.to_datetime(utc, utc=True) if rows else pd.to_datetime([], utc=True),
        "offset_min": np.asarray(offsets, dtype=np.int64),
        "zone": [r["zone"] for r in rows],
        **{c: np.asarray([r[c] for r in rows], dtype=np.float64) for c in VALUE_COLUMNS},
        "_line": [r.get("_line", k) for k, r in enumerate(rows)],
    })

    dup = frame.duplicated(subset=["utc", "zone"], keep=False)
    if dup.any():
        keys = frame.loc[dup, ["utc", "zone", "_line"]]
        listed = ", ".join(f"({u.isoformat()}, {z}) at row {ln}" for u, z, ln in keys.itertuples(index=False))
        raise InvariantViolation(f"{source}: duplicate (timestamp, zone) keys: {listed}", rows=list(keys["_line"]))

    frame = frame.drop(columns="_line")
    local = frame["utc"].dt.tz_localize(None) + pd.to_timedelta(frame["offset_min"], unit="min")
    frame["local"] = local
    frame["day"] = local.dt.date
    frame["hour"] = local.dt.hour.astype(np.int64)
    frame = frame.sort_values(["zone", "utc"], kind="mergesort").reset_index(drop=True)
    frame["occurrence"] = frame.groupby(["zone", "day", "hour"], sort=False).cumcount().astype(np.int64)
    return Panel(frame, market)


def write_panel(panel: Panel, path) -> None:
    """Write a panel in the hourly-panel format (plus a ``dart`` column)."""
    header = list(PANEL_COLUMNS[:4]) + ["dart"] + list(PANEL_COLUMNS[4:])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in panel.records():
            w.writerow([
                rec.timestamp.isoformat(),
                rec.zone,
                *[_fmt(getattr(rec, c)) for c in header[2:]],
            ])


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def load_calendar(path) -> tuple:
    """Read a calendar/config JSON document; returns (MarketCalendar, SplitSpec or None)."""
    doc = json.loads(Path(path).read_text())
    cal = MarketCalendar.from_dict(doc)
    splits = SplitSpec.from_dict(doc["splits"]) if "splits" in doc else None
    return cal, splits


# --- diagnostics ---------------------------------------------------------

def _zone_series(panel: Panel, field: str, thresholds) -> pd.DataFrame:
    f = panel.frame
    if field == "dart":
        values = f["dart"]
    elif field == "spike_indicator":
        if thresholds is None:
            raise ValueError("spike_indicator needs thresholds=(gamma_neg, gamma_pos)")
        g_neg, g_pos = thresholds
        values = ((f["dart"] <= -g_neg) | (f["dart"] >= g_pos)).astype(np.float64)
    else:
        raise ValueError(f"unknown field {field!r}")
    wide = pd.DataFrame({"utc": f["utc"], "zone": f["zone"], "v": values})
    return wide.pivot(index="utc", columns="zone", values="v")


def pearson(a, b) -> float:
    """Two-pass Pearson correlation of two equal-length sequences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        raise DegenerateSeries("series has zero variance")
    r = float(np.dot(da, db) / (sa * sb))
    return min(1.0, max(-1.0, r))


def correlation_matrix(panel: Panel, field: str, zones: Sequence[str], thresholds=None) -> pd.DataFrame:
    """Pairwise Pearson correlation of ``field`` across ``zones``.

    Each pair uses the hours both zones report. ``spike_indicator`` is
    1{DART <= -gamma_neg or DART >= gamma_pos} with ``thresholds=(gamma_neg, gamma_pos)``.
    """
    wide = _zone_series(panel, field, thresholds)
    zones = list(zones)
    for z in zones:
        if z not in wide.columns:
            raise InsufficientOverlap(f"zone {z!r} has no rows")
        col = wide[z].dropna()
        if len(col) >= 2 and float(np.var(col.to_numpy())) == 0.0:
            raise DegenerateSeries(f"zone {z!r}: {field} has zero variance")
    out = np.eye(len(zones))
    for i, zi in enumerate(zones):
        for j in range(i + 1, len(zones)):
            pair = wide[[zi, zones[j]]].dropna()
            if len(pair) < 2:
                raise InsufficientOverlap(f"zones {zi!r} and {zones[j]!r} share {len(pair)} hours")
            try:
                r = pearson(pair[zi].to_numpy(), pair[zones[j]].to_numpy())
            except DegenerateSeries:
                raise DegenerateSeries(f"{zi!r}/{zones[j]!r}: zero variance on the overlapping hours") from None
            out[i, j] = out[j, i] = r
    return pd.DataFrame(out, index=zones, columns=zones)


def empirical_quantiles(values, probs) -> np.ndarray:
    """Quantiles by linear interpolation between order statistics.

    The result is aligned with ``probs`` as given; q(0) is the minimum and
    q(1) the maximum.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptySeries("cannot take quantiles of an empty series")
    p = np.asarray(probs, dtype=np.float64)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    return np.quantile(v, p, method="linear")
