from datetime import date, datetime, timedelta, timezone
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dartvb.bidstack import ImpactParams
from dartvb.classifier import SpikeModel
from dartvb.errors import MissingCoefficient, NoFiredSignals, SplitOverlap
from dartvb.features import ObservationSet
from dartvb.sizing import (
    ExpectedPayoffs,
    SingleZoneWarning,
    clip_sides,
    conditional_edge,
    estimate_payoffs,
    objective,
    optimize,
    signed_optimize,
    solve_net_flat,
    solve_regime,
    write_trade_plans,
)

from oracles import numeric_max, random_instance

B = ("Summer", "Peak")


def params(kz, kp=0.035, km=None):
    km = kp if km is None else km
    if not isinstance(kz, dict):
        kz = {f"Z{i}": v for i, v in enumerate(kz)}
    return ImpactParams({B: kp}, {B: km}, kz)


def payoffs(x, hints=None):
    xs = {f"Z{i}": v for i, v in enumerate(x)}
    return ExpectedPayoffs(xs, {f"Z{i}": h for i, h in enumerate(hints)} if hints else {})


# --- objective ----------------------------------------------------------------------

def test_objective_examples():
    p = params([0.05])
    assert objective({"Z0": 0.0}, {"Z0": 10.0}, p, B) == 0.0
    q = 10.0 / (2 * (0.035 + 0.05))
    assert objective({"Z0": q}, {"Z0": 10.0}, p, B) == pytest.approx(100 / 0.34, rel=1e-12)
    assert round(q, 4) == 58.8235


def test_objective_sign_symmetry():
    rng = np.random.default_rng(0)
    p = params(list(rng.uniform(0.01, 0.5, 4)), 0.04)
    x = dict(zip(p.k_z, rng.normal(0, 20, 4)))
    q = dict(zip(p.k_z, rng.normal(0, 100, 4)))
    flipped = objective({z: -v for z, v in q.items()}, {z: -v for z, v in x.items()}, p, B)
    assert flipped == pytest.approx(objective(q, x, p, B), rel=1e-12)


def test_objective_uses_sell_coefficient_below_zero():
    p = params([0.05], kp=0.01, km=0.04)
    assert objective({"Z0": -10.0}, {"Z0": 0.0}, p, B) == pytest.approx(-0.04 * 100 - 0.05 * 100)
    assert objective({"Z0": 10.0}, {"Z0": 0.0}, p, B) == pytest.approx(-0.01 * 100 - 0.05 * 100)


def test_objective_missing_coefficients():
    with pytest.raises(MissingCoefficient):
        objective({"Z0": 1.0}, {"Z0": 1.0}, params([0.05]), ("Winter", "Peak"))
    with pytest.raises(MissingCoefficient):
        objective({"Q": 1.0}, {"Q": 1.0}, params([0.05]), B)
    with pytest.raises(MissingCoefficient):
        objective({"Z0": 1.0}, {}, params([0.05]), B)


# --- closed forms ---------------------------------------------------------------------------

def test_solve_regime_single_zone():
    q, s = solve_regime({"Z0": 10.0}, params([0.05]), B, 0.035)
    assert s == pytest.approx(100 / 1.7, rel=1e-14)
    assert q["Z0"] == pytest.approx(s, rel=1e-14)
    assert s == pytest.approx(10 / (2 * (0.035 + 0.05)), rel=1e-14)


def test_solve_regime_zero_and_symmetric():
    q, s = solve_regime({"Z0": 0.0, "Z1": 0.0}, params([0.05, 0.2]), B, 0.03)
    assert s == 0 and q == {"Z0": 0.0, "Z1": 0.0}
    q, s = solve_regime({"Z0": 7.0, "Z1": -7.0}, params([0.05, 0.05]), B, 0.03)
    assert s == 0
    assert q == {"Z0": pytest.approx(70.0), "Z1": pytest.approx(-70.0)}


def test_net_flat_examples():
    assert solve_net_flat({"Z0": 4.0, "Z1": 4.0}, params([0.1, 0.1])) == {"Z0": 0.0, "Z1": 0.0}
    q = solve_net_flat({"Z0": 10.0, "Z1": 0.0}, params([0.05, 0.05]))
    assert q["Z0"] == pytest.approx(50.0) and q["Z1"] == pytest.approx(-50.0)


def test_net_flat_single_zone_warns():
    with pytest.warns(SingleZoneWarning):
        assert solve_net_flat({"Z0": 5.0}, params([0.05])) == {"Z0": 0.0}


def test_net_flat_matches_elimination_oracle():
    rng = np.random.default_rng(5)
    x = rng.uniform(-50, 50, 5)
    kz = rng.uniform(0.01, 0.5, 5)
    q = solve_net_flat(dict(zip([f"Z{i}" for i in range(5)], x)), params(list(kz)))
    got = np.array([q[f"Z{i}"] for i in range(5)])
    # substitute q4 = -(q0 + ... + q3) and solve the reduced stationarity system
    m = np.diag(2 * kz[:4]) + 2 * kz[4]
    rhs = x[:4] - x[4]
    red = np.linalg.solve(m, rhs)
    expect = np.append(red, -red.sum())
    assert np.allclose(got, expect, rtol=0, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-500, 500), st.integers(1, 50), st.integers(1, 50)), min_size=2, max_size=6))
def test_net_flat_exact_on_rationals(rows):
    x = {f"Z{i}": Fraction(a, 10) for i, (a, _, _) in enumerate(rows)}
    kz = {f"Z{i}": Fraction(n, 100 * d) for i, (_, n, d) in enumerate(rows)}
    q = solve_net_flat(x, ImpactParams({}, {}, kz))
    assert sum(q.values()) == 0
    q, s = solve_regime(x, ImpactParams({}, {}, kz), B, Fraction(3, 100))
    assert sum(q.values()) == s
    for z in x:
        assert x[z] - 2 * Fraction(3, 100) * s - 2 * kz[z] * q[z] == 0


# --- optimize -----------------------------------------------------------------------------

def test_zero_edge_gives_zero_plan():
    plan = optimize({"Z0": 0.0, "Z1": 0.0}, params([0.05, 0.1]), B)
    assert plan.regime == "net_flat" and plan.objective == 0.0
    assert plan.q == {"Z0": 0.0, "Z1": 0.0}


def test_positive_edges_pick_net_buy_by_grid():
    p = params([0.05, 0.08], 0.03)
    x = {"Z0": 12.0, "Z1": 6.0}
    plan = optimize(x, p, B)
    assert plan.regime == "net_buy" and plan.S > 0
    g = np.linspace(-50, 250, 601)
    q0, q1 = np.meshgrid(g, g)
    s = q0 + q1
    f = 12 * q0 + 6 * q1 - np.where(s >= 0, 0.03, 0.03) * s * s - 0.05 * q0 ** 2 - 0.08 * q1 ** 2
    assert plan.objective >= f.max() - 1e-9
    assert plan.objective - f.max() < 0.05
    best, _ = numeric_max(np.array([12.0, 6.0]), np.array([0.05, 0.08]), 0.03, 0.03)
    assert plan.objective == pytest.approx(best, rel=1e-6)


def test_huge_energy_penalty_shrinks_net_exposure():
    # S+ carries the sign of N = sum x/k, so a positive N keeps net-buy admissible and optimal
    p = params([0.05, 0.05], 10.0)
    x = {"Z0": 30.0, "Z1": 28.0}
    plan = optimize(x, p, B)
    assert plan.regime == "net_buy"
    assert 0 < plan.S < 1.5
    flat = solve_net_flat(x, p)
    assert flat == {"Z0": pytest.approx(10.0), "Z1": pytest.approx(-10.0)}
    assert plan.objective > objective(flat, x, p, B)
    best, _ = numeric_max(np.array([30.0, 28.0]), np.array([0.05, 0.05]), 10.0, 10.0)
    assert plan.objective == pytest.approx(best, rel=1e-6)


def test_net_flat_wins_when_weighted_edges_cancel():
    p = params([0.05, 0.1], 0.5, 0.2)
    plan = optimize({"Z0": 10.0, "Z1": -20.0}, p, B)
    assert plan.regime == "net_flat" and plan.S == pytest.approx(0.0, abs=1e-12)
    best, _ = numeric_max(np.array([10.0, -20.0]), np.array([0.05, 0.1]), 0.5, 0.2)
    assert plan.objective == pytest.approx(best, rel=1e-6)


def test_plan_invariants_and_oracle():
    rng = np.random.default_rng(9)
    for _ in range(200):
        x, kz, kp, km = random_instance(rng)
        p = params(list(kz), kp, km)
        xs = dict(zip(p.k_z, x))
        plan = optimize(xs, p, B)
        qv = np.array([plan.q[z] for z in p.k_z])
        assert plan.S == pytest.approx(qv.sum(), rel=1e-12, abs=1e-12)
        if plan.regime == "net_buy":
            assert plan.S > 0
        elif plan.regime == "net_sell":
            assert plan.S < 0
        else:
            assert abs(plan.S) <= 1e-9 * max(1.0, np.abs(qv).sum())
        assert plan.objective == pytest.approx(objective(plan.q, xs, p, B), rel=1e-9, abs=1e-9)
        assert plan.objective >= 0
        best, _ = numeric_max(x, kz, kp, km)
        assert abs(plan.objective - best) <= 1e-6 * max(1.0, abs(best))


def test_interior_candidates_are_stationary():
    rng = np.random.default_rng(10)
    for _ in range(100):
        x, kz, kp, km = random_instance(rng)
        p = params(list(kz), kp, km)
        xs = dict(zip(p.k_z, x))
        for ke in (kp, km):
            q, s = solve_regime(xs, p, B, ke)
            for z in xs:
                assert abs(xs[z] - 2 * ke * s - 2 * p.k_z[z] * q[z]) <= 1e-9 * max(1.0, abs(xs[z]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100))
def test_scale_covariance(seed, lam):
    rng = np.random.default_rng(seed)
    x, kz, kp, km = random_instance(rng)
    p = params(list(kz), kp, km)
    a = optimize(dict(zip(p.k_z, x)), p, B)
    b = optimize(dict(zip(p.k_z, lam * x)), p, B)
    assert b.regime == a.regime
    assert b.S == pytest.approx(lam * a.S, rel=1e-9, abs=1e-9)
    for z in a.q:
        assert b.q[z] == pytest.approx(lam * a.q[z], rel=1e-9, abs=1e-9)
    assert b.objective == pytest.approx(lam * lam * a.objective, rel=1e-9, abs=1e-9)


def test_sizing_rejects_zero_local_coefficient():
    with pytest.raises(ValueError):
        optimize({"Z0": 1.0}, params([0.0]), B)


# --- clipping -----------------------------------------------------------------------------

def test_clip_agreeing_hints_match_optimize():
    p = params([0.05, 0.1, 0.2], 0.01)
    x = payoffs([20.0, 15.0, 9.0], ["INC", "INC", "INC"])
    a, b = optimize(x, p, B), signed_optimize(clip_sides(x), p, B)
    assert b.regime == a.regime
    assert b.q == pytest.approx(a.q) and b.objective == pytest.approx(a.objective, rel=1e-12)


def test_clip_single_zone_against_hint():
    x = payoffs([-4.0], ["INC"])
    assert clip_sides(x).x == {}
    plan = signed_optimize(ExpectedPayoffs({"Z0": -4.0}, {"Z0": "INC"}), params([0.05]), B)
    assert plan.q == {"Z0": 0.0} and plan.objective == 0.0


def test_clip_binding_constraint_matches_bounded_oracle():
    # unconstrained net-flat shorts the weakest INC zone; the hint forbids it
    p = params([0.05, 0.05, 0.05], 1.0)
    x = payoffs([30.0, 25.0, 2.0], ["INC", "INC", "INC"])
    free = optimize(x, p, B)
    assert free.q["Z2"] < 0
    plan = signed_optimize(clip_sides(x), p, B)
    assert plan.q["Z2"] == 0.0 and all(v >= 0 for v in plan.q.values())
    best, _ = numeric_max(np.array([30.0, 25.0, 2.0]), np.full(3, 0.05), 1.0, 1.0, signs=[1, 1, 1])
    assert plan.objective == pytest.approx(best, rel=1e-6)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6))
def test_clipped_never_beats_unconstrained(seed):
    rng = np.random.default_rng(seed)
    x, kz, kp, km = random_instance(rng)
    hints = ["INC" if h else "DEC" for h in rng.random(x.size) < 0.5]
    p = params(list(kz), kp, km)
    xp = payoffs(list(x), hints)
    free = optimize(xp, p, B)
    clipped = clip_sides(xp)
    if not clipped.x:
        return
    plan = signed_optimize(clipped, p, B)
    assert plan.objective <= free.objective + 1e-9 * max(1.0, abs(free.objective))
    for z, q in plan.q.items():
        assert q * (1 if clipped.side_hint[z] == "INC" else -1) >= 0
    idx = [int(z[1:]) for z in clipped.x]
    signs = [1 if clipped.side_hint[z] == "INC" else -1 for z in clipped.x]
    best, _ = numeric_max(x[idx], kz[idx], kp, km, signs=signs)
    assert abs(plan.objective - best) <= 1e-6 * max(1.0, abs(best))


# --- payoffs ------------------------------------------------------------------------------

def firing_obs(zone, darts, fire, split="validation"):
    n = len(darts)
    t0 = datetime(2024, 6, 3, 4, tzinfo=timezone.utc)
    utc = np.array([np.datetime64((t0 + timedelta(hours=i)).replace(tzinfo=None), "ns") for i in range(n)])
    return ObservationSet(
        utc=utc, offset_min=np.full(n, -240), zone=np.full(n, zone, dtype=object),
        day=np.full(n, date(2024, 6, 3), dtype=object), hour=np.arange(n) % 24,
        season=np.full(n, "Summer", dtype=object),
        band=np.array(["Peak" if i % 2 else "OffPeak" for i in range(n)], dtype=object),
        x=np.where(np.asarray(fire)[:, None], 10.0, -10.0), realized_dart=np.asarray(darts, dtype=float),
        sources=np.zeros((n, 1)), gate=np.zeros(n), columns=["f"], thresholds=(10.0, 10.0), split=split,
    )


def test_conditional_edge_mean_of_fired():
    assert conditional_edge([10.0, 20.0, -99.0], [True, True, False]) == 15.0
    with pytest.raises(NoFiredSignals):
        conditional_edge([1.0, 2.0], [False, False])


def test_estimate_payoffs_eligibility():
    inc = SpikeModel("NORTH", "INC", np.array([0.0, 1.0]), 30.0, 0.9)
    dec = SpikeModel("LONGIL", "DEC", np.array([0.0, 1.0]), 5.0, 0.9)
    north = firing_obs("NORTH", [-10.0, -20.0, 5.0, 0.13, 1.0], [True, True, False, False, False])
    est = estimate_payoffs({("NORTH", "INC"): inc}, north)
    assert est[("NORTH", "INC")].x == 15.0 and est[("NORTH", "INC")].eligible
    assert est[("NORTH", "INC")].trades == 2
    # fired-hour means of -0.13 (INC) and -1.07 (DEC) are ineligible
    north = firing_obs("NORTH", [0.13, 0.10, 0.16, 50.0], [True, True, True, False])
    longil = firing_obs("LONGIL", [-1.07, -1.0, -1.14, -60.0], [True, True, True, False])
    est = estimate_payoffs({("NORTH", "INC"): inc}, north)
    assert est[("NORTH", "INC")].x == pytest.approx(-0.13) and not est[("NORTH", "INC")].eligible
    est = estimate_payoffs({("LONGIL", "DEC"): dec}, longil)
    assert est[("LONGIL", "DEC")].x == pytest.approx(-1.07) and not est[("LONGIL", "DEC")].eligible


def test_estimate_payoffs_no_fire_and_split():
    m = SpikeModel("A", "INC", np.array([0.0, 1.0]), 30.0, 0.9)
    est = estimate_payoffs({("A", "INC"): m}, firing_obs("A", [-50.0, -40.0], [False, False]))
    assert est[("A", "INC")] == (est[("A", "INC")].__class__(None, 0, False))
    with pytest.raises(SplitOverlap):
        estimate_payoffs({("A", "INC"): m}, firing_obs("A", [-50.0], [True], split="test"))


def test_estimate_payoffs_per_bucket():
    m = SpikeModel("A", "INC", np.array([0.0, 1.0]), 30.0, 0.9)
    obs = firing_obs("A", [-10.0, -30.0, 4.0, -2.0], [True, True, True, True])
    est = estimate_payoffs({("A", "INC"): m}, obs, per_bucket=True)
    assert est[("A", "INC", ("Summer", "OffPeak"))].x == pytest.approx(3.0)
    assert est[("A", "INC", ("Summer", "Peak"))].x == pytest.approx(16.0)


def test_trade_plan_file(tmp_path):
    p = params([0.05, 0.1])
    plan = optimize({"Z0": 3.0, "Z1": -1.0}, p, B, timestamp=datetime(2024, 1, 1, 5, tzinfo=timezone.utc))
    write_trade_plans([plan], tmp_path / "plans.csv")
    lines = (tmp_path / "plans.csv").read_text().splitlines()
    assert lines[0] == "timestamp,zone,q_mwh,regime,objective"
    assert len(lines) == 3 and lines[1].startswith("2024-01-01T05:00:00+00:00,Z0,")
