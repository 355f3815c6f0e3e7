from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dartvb.errors import InsufficientHistory, UnknownZone
from dartvb.features import (
    FeatureSpec,
    Standardizer,
    build_features,
    leakage_audit,
    read_observations,
    write_observations,
)
from dartvb.panel import MarketCalendar
from dartvb.synth import synth_panel

NYISO_ZONES = ["CAPITL", "CENTRL", "DUNWOD", "GENESE", "HUDVL", "LONGIL", "MHKVL", "MILLWD", "NORTH", "NYC", "WEST"]


@pytest.fixture(scope="module")
def built(small_panel, nyiso):
    panel, _ = small_panel
    spec = FeatureSpec(zones_pooled=panel.zones)
    return panel, spec, build_features(panel, spec, nyiso, (30.0, 5.0))


def test_nyiso_dimension_is_fifty():
    assert FeatureSpec(zones_pooled=NYISO_ZONES).dimension == 50


def test_layout_zone_blocks_then_calendar():
    cols = FeatureSpec(zones_pooled=["A", "B"]).columns
    assert cols[:4] == ["A:load_fcst", "A:dart_lag24", "A:dart_lag48", "A:load_err_lag24"]
    assert cols[4:8] == ["B:load_fcst", "B:dart_lag24", "B:dart_lag48", "B:load_err_lag24"]
    assert cols[8:] == ["cal:weekend", "cal:holiday", "cal:hour", "cal:month", "cal:winter", "cal:summer"]
    assert FeatureSpec(zones_pooled=["A"], include_system_load=True).dimension == 11


def test_lags_must_be_whole_days():
    with pytest.raises(ValueError):
        FeatureSpec(zones_pooled=["A"], lag_hours=(12,))


def test_labels(built):
    _, _, obs = built
    o = obs.with_thresholds(30.0, 5.0)
    o.realized_dart = obs.realized_dart.copy()
    o.realized_dart[:3] = [-35.0, 0.0, 5.0]
    assert (o.y_neg[0], o.y_pos[0]) == (1, 0)
    assert (o.y_neg[1], o.y_pos[1]) == (0, 0)
    assert (o.y_neg[2], o.y_pos[2]) == (0, 1)


def test_one_observation_per_hour_and_zone(built):
    panel, spec, obs = built
    hours = panel.frame["utc"].nunique()
    # the first three local days lack a 48h lag
    assert len(obs) + obs.dropped == hours * len(panel.zones)
    assert obs.dropped == 3 * 24 * len(panel.zones)
    assert obs.dimension == spec.dimension


def test_lag_reads_same_hour_on_last_settled_day(built):
    panel, spec, obs = built
    f = panel.frame
    col24 = obs.columns.index("CITYZ:dart_lag24")
    col48 = obs.columns.index("CITYZ:dart_lag48")
    for i in range(0, len(obs), 37):
        d, h = obs.day[i], obs.hour[i]
        src = f[(f["zone"] == "CITYZ") & (f["day"] == d - timedelta(days=2)) & (f["hour"] == h)]
        assert obs.x[i, col24] == src["dart"].iloc[0]
        src = f[(f["zone"] == "CITYZ") & (f["day"] == d - timedelta(days=3)) & (f["hour"] == h)]
        assert obs.x[i, col48] == src["dart"].iloc[0]


@pytest.mark.parametrize("market", ["NYISO", "ISONE", "ERCOT"])
def test_audit_passes(market):
    panel, _ = synth_panel(5, 24 * 8, market=market)
    cal = MarketCalendar.for_market(market)
    obs = build_features(panel, FeatureSpec(zones_pooled=panel.zones, include_system_load=True), cal, (30, 5))
    rep = leakage_audit(obs, panel, cal)
    assert rep.passed, rep.lines()


def test_audit_flags_same_day_lag(built, nyiso):
    panel, spec, obs = built
    bad = obs.subset(np.ones(len(obs), dtype=bool))
    bad.x = obs.x.copy()
    bad.sources = obs.sources.copy()
    c = obs.columns.index("NORTHZ:dart_lag24")
    i = 10
    f = panel.frame
    ts = obs.timestamp(i).astimezone(timezone.utc)
    row = f[(f["zone"] == "NORTHZ") & (f["utc"] == ts)]
    bad.x[i, c] = row["dart"].iloc[0]
    bad.sources[i, c] = ts.timestamp() + 3600.0
    rep = leakage_audit(bad, panel, nyiso)
    assert not rep.passed
    assert rep.failing == ["NORTHZ:dart_lag24"]


def test_audit_flags_value_not_matching_source(built, nyiso):
    panel, spec, obs = built
    bad = obs.subset(np.ones(len(obs), dtype=bool))
    bad.x = obs.x.copy()
    c = obs.columns.index("CENTRZ:load_err_lag24")
    bad.x[5, c] += 1.0
    rep = leakage_audit(bad, panel, nyiso)
    assert rep.failing == ["CENTRZ:load_err_lag24"]


def test_audit_slack_matches_timestamp_arithmetic(built, nyiso):
    panel, spec, obs = built
    rep = leakage_audit(obs, panel, nyiso)
    slack = []
    for i in range(len(obs)):
        d, h = obs.day[i], obs.hour[i]
        gate = datetime.combine(d - timedelta(days=1), datetime.min.time()).replace(hour=5)
        gate = gate.replace(tzinfo=nyiso.gate_closure(d).tzinfo)
        src_start = datetime.combine(d - timedelta(days=2), datetime.min.time()).replace(hour=h)
        src_start = src_start.replace(tzinfo=gate.tzinfo)
        known = src_start.astimezone(timezone.utc) + timedelta(hours=1)
        slack.append((gate.astimezone(timezone.utc) - known).total_seconds() / 3600)
    assert min(slack) >= 0
    got = next(a for a in rep.columns if a.column == "CITYZ:dart_lag24")
    assert got.min_slack_hours == pytest.approx(min(slack), abs=1e-9)
    assert got.passed


def test_dst_transitions(nyiso):
    panel, _ = synth_panel(2, 24 * 10, start=date(2023, 10, 31))
    obs = build_features(panel, FeatureSpec(zones_pooled=panel.zones), nyiso, (30, 5))
    assert leakage_audit(obs, panel, nyiso).passed
    panel, _ = synth_panel(2, 24 * 10, start=date(2023, 3, 8))
    obs = build_features(panel, FeatureSpec(zones_pooled=panel.zones), nyiso, (30, 5))
    assert leakage_audit(obs, panel, nyiso).passed


def test_errors(small_panel, nyiso):
    panel, _ = small_panel
    with pytest.raises(UnknownZone):
        build_features(panel, FeatureSpec(zones_pooled=["NOPE"]), nyiso, (30, 5))
    short, _ = synth_panel(1, 48)
    with pytest.raises(InsufficientHistory):
        build_features(short, FeatureSpec(zones_pooled=short.zones), nyiso, (30, 5))
    with pytest.raises(ValueError):
        build_features(panel, FeatureSpec(zones_pooled=panel.zones), nyiso, (0, 5))


def test_standardizer_train_stats(built):
    _, _, obs = built
    std = Standardizer.fit(obs)
    z = std.apply(obs)
    c = obs.columns.index("cal:summer")   # constant in a January panel
    assert np.all(z.x[:, c] == 0.0)
    k = obs.columns.index("CITYZ:load_fcst")
    assert abs(z.x[:, k].mean()) < 1e-12 and abs(z.x[:, k].std() - 1) < 1e-12
    assert np.allclose(std.invert(z.x), obs.x)


def test_persistence_round_trip_and_determinism(built, tmp_path, small_panel, nyiso):
    panel, spec, obs = built
    write_observations(obs, tmp_path / "a.csv")
    again = build_features(panel, spec, nyiso, (30.0, 5.0))
    write_observations(again, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = read_observations(tmp_path / "a.csv", nyiso)
    assert np.array_equal(back.x, obs.x)
    assert np.array_equal(back.y_neg, obs.y_neg)
    assert back.columns == obs.columns
    assert back.timestamp(0) == obs.timestamp(0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_labels_exclusive(g_neg, g_pos):
    rng = np.random.default_rng(1)
    from dartvb.features import ObservationSet

    n = 500
    obs = ObservationSet(
        utc=np.zeros(n, dtype="datetime64[ns]"), offset_min=np.zeros(n, dtype=np.int64),
        zone=np.full(n, "A", dtype=object), day=np.full(n, date(2023, 1, 1), dtype=object),
        hour=np.zeros(n, dtype=np.int64), season=np.full(n, "Winter", dtype=object),
        band=np.full(n, "Peak", dtype=object), x=np.zeros((n, 1)),
        realized_dart=rng.normal(0, 40, n), sources=np.zeros((n, 1)), gate=np.zeros(n),
        columns=["c"], thresholds=(g_neg, g_pos),
    )
    assert not np.any(obs.y_neg * obs.y_pos)
    higher = obs.with_thresholds(g_neg, g_pos * 1.5)
    assert higher.y_pos.sum() <= obs.y_pos.sum()
