"""Hand-built observation sets whose firing pattern is scripted."""

from datetime import datetime, timedelta, timezone
from zoneinfo import ZoneInfo

import numpy as np

from dartvb.classifier import SpikeModel
from dartvb.features import ObservationSet
from dartvb.panel import MarketCalendar

NY = ZoneInfo("America/New_York")


def scripted_obs(rows, split="test", start=datetime(2024, 7, 1, 4, tzinfo=timezone.utc)):
    """``rows`` are ``(hour_index, zone, dart, fire_inc, fire_dec)``.

    Column 0 fires the INC model and column 1 the DEC model of
    :func:`scripted_models`.
    """
    cal = MarketCalendar.for_market("NYISO")
    n = len(rows)
    utc, off, day, hour, season, band = [], [], [], [], [], []
    for h, *_ in rows:
        t = start + timedelta(hours=h)
        loc = t.astimezone(NY)
        utc.append(np.datetime64(t.replace(tzinfo=None), "ns"))
        off.append(int(loc.utcoffset().total_seconds() // 60))
        day.append(loc.date())
        hour.append(loc.hour)
        s, b = cal.bucket(loc.date(), loc.hour)
        season.append(s)
        band.append(b)
    x = np.array([[1.0 if r[3] else -1.0, 1.0 if r[4] else -1.0] for r in rows]).reshape(n, 2)
    return ObservationSet(
        utc=np.array(utc), offset_min=np.array(off), zone=np.array([r[1] for r in rows], dtype=object),
        day=np.array(day, dtype=object), hour=np.array(hour), season=np.array(season, dtype=object),
        band=np.array(band, dtype=object), x=x, realized_dart=np.array([float(r[2]) for r in rows]),
        sources=np.zeros((n, 2)), gate=np.zeros(n), columns=["inc", "dec"], thresholds=(10.0, 10.0),
        split=split,
    )


def scripted_models(zones, trained_through="2024-06-01"):
    out = {}
    for z in zones:
        meta = {"range": ["2024-01-01", trained_through]}
        out[(z, "INC")] = SpikeModel(z, "INC", np.array([0.0, 20.0, 0.0]), 10.0, 0.5, dict(meta))
        out[(z, "DEC")] = SpikeModel(z, "DEC", np.array([0.0, 0.0, 20.0]), 10.0, 0.5, dict(meta))
    return out
