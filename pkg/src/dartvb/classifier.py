"""Logistic spike classifiers and validation threshold tuning.

An INC model predicts negative spikes (DART <= -gamma_neg) and a DEC model
positive spikes (DART >= gamma_pos). ``beta[0]`` is the intercept; the rest
multiply the feature columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import DimensionMismatch, EmptyGrid, NonFinite, SingleClassData, SplitOverlap
from .features import ObservationSet

SIDES = ("INC", "DEC")
GAMMA_POS_GRID = (2.0, 5.0, 10.0, 15.0, 30.0)
GAMMA_NEG_GRID = (5.0, 8.0, 10.0, 30.0)
TAU_GRID = (0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 0.95)


def sigmoid(u):
    """Logistic function; saturates cleanly for large |u|."""
    return expit(u)


def edge(obs: ObservationSet, side: str) -> np.ndarray:
    """Per-MWh realized edge of a unit trade: -DART for INC, +DART for DEC."""
    return -obs.realized_dart if side == "INC" else obs.realized_dart.copy()


def design_matrix(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.column_stack([np.ones(x.shape[0]), x])


def _unpack(data, side):
    if isinstance(data, ObservationSet):
        return design_matrix(data.x), data.labels(side).astype(np.float64)
    design, y = data
    return np.asarray(design, dtype=np.float64), np.asarray(y, dtype=np.float64)


def cross_entropy_loss(beta, data, side: str = "INC", l2: float = 0.0) -> tuple:
    """Summed cross-entropy and its gradient.

    ``data`` is an ObservationSet (intercept added here) or a ``(design, y)``
    pair whose design already holds the intercept column. ``l2`` adds
    ``0.5 * l2 * |beta[1:]|^2``.
    """
    design, y = _unpack(data, side)
    beta = np.asarray(beta, dtype=np.float64)
    if design.shape[0] == 0:
        raise ValueError("no observations")
    if beta.shape != (design.shape[1],):
        raise DimensionMismatch(f"beta has length {beta.size}, design has {design.shape[1]} columns")
    loss, grad = kernels.logistic_loss_grad(beta, np.ascontiguousarray(design), y)
    grad = np.asarray(grad)
    if l2:
        loss += 0.5 * l2 * float(beta[1:] @ beta[1:])
        grad = grad.copy()
        grad[1:] += l2 * beta[1:]
    return float(loss), grad


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-6
    max_iter: int = 5000
    l2: float = 0.0


@dataclass
class FitResult:
    beta: np.ndarray
    iterations: int
    loss: float
    initial_loss: float
    grad_norm: float
    converged: bool


def fit_design(design, y, options: FitOptions = FitOptions()) -> FitResult:
    """Gradient descent with Armijo backtracking from beta = 0.

    Works on the mean loss, so ``tol`` bounds the infinity norm of the mean
    gradient and the stopping rule does not depend on sample size. Trial
    steps use the Barzilai-Borwein length; every accepted step decreases the
    loss.
    """
    design = np.ascontiguousarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = design.shape[0]
    if n == 0:
        raise ValueError("no observations")
    if y.min() == y.max():
        raise SingleClassData(f"all {n} labels equal {int(y[0])}")
    l2 = options.l2 * n  # keeps the penalty per observation fixed

    def f(b):
        loss, g = cross_entropy_loss(b, (design, y), l2=l2)
        return loss / n, g / n

    beta = np.zeros(design.shape[1])
    loss, g = f(beta)
    initial = loss
    step = 1.0
    prev = None
    it = 0
    while it < options.max_iter:
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= options.tol:
            break
        if prev is not None:
            s, dg = beta - prev[0], g - prev[1]
            sy = float(s @ dg)
            if sy > 0:
                step = float(s @ s) / sy
        gg = float(g @ g)
        while True:
            cand = beta - step * g
            c_loss, c_g = f(cand)
            if math.isfinite(c_loss) and c_loss <= loss - 1e-4 * step * gg:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            break
        prev = (beta, g)
        beta, loss, g = cand, c_loss, c_g
        it += 1
        if not (math.isfinite(loss) and np.all(np.isfinite(beta))):
            raise NonFinite(f"divergence at iteration {it}")
    gnorm = float(np.max(np.abs(g)))
    return FitResult(beta, it, loss * n, initial * n, gnorm, gnorm <= options.tol)


@dataclass
class SpikeModel:
    zone: str
    side: str
    beta: np.ndarray
    gamma: float
    tau: float = 0.5
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.side not in SIDES:
            raise ValueError(f"side must be INC or DEC, got {self.side!r}")
        if not np.all(np.isfinite(self.beta)):
            raise NonFinite(f"{self.zone}/{self.side}: non-finite coefficients")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau {self.tau} outside (0, 1)")
        if not self.gamma > 0:
            raise ValueError(f"gamma {self.gamma} must be positive")

    @property
    def d(self) -> int:
        return self.beta.size - 1

    def to_dict(self) -> dict:
        return {
            "zone": self.zone,
            "side": self.side,
            "gamma": self.gamma,
            "tau": self.tau,
            "d": self.d,
            "beta": [float(v) for v in self.beta],
            "train_meta": self.train_meta,
        }

    @classmethod
    def from_dict(cls, doc) -> "SpikeModel":
        beta = np.array(doc["beta"], dtype=np.float64)
        if beta.size != doc["d"] + 1:
            raise DimensionMismatch(f"beta length {beta.size} does not match d={doc['d']}")
        return cls(doc["zone"], doc["side"], beta, float(doc["gamma"]), float(doc["tau"]), doc.get("train_meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SpikeModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _require_split(obs: ObservationSet, allowed: str):
    if obs.split is not None and obs.split != allowed:
        raise SplitOverlap(f"expected {allowed} observations, got the {obs.split} split")


def check_disjoint(a: ObservationSet, b: ObservationSet):
    """SplitOverlap unless every day of ``a`` precedes every day of ``b``."""
    if len(a) and len(b) and max(a.day) >= min(b.day):
        raise SplitOverlap(f"{a.split or 'first'} split reaches {max(a.day)}, "
                           f"{b.split or 'second'} split starts {min(b.day)}")


def fit(data: ObservationSet, side: str, zone: Optional[str] = None, options: FitOptions = FitOptions(),
        gamma: Optional[float] = None) -> SpikeModel:
    """Fit one (zone, side) model on train-split observations."""
    _require_split(data, "train")
    if zone is not None:
        data = data.for_zone(zone)
    res = fit_design(design_matrix(data.x), data.labels(side), options)
    if gamma is None:
        gamma = data.thresholds[0] if side == "INC" else data.thresholds[1]
    zone = zone if zone is not None else (str(data.zone[0]) if len(data) else "")
    meta = {
        "n": len(data),
        "iterations": res.iterations,
        "loss": res.loss,
        "initial_loss": res.initial_loss,
        "grad_inf_norm": res.grad_norm,
        "converged": res.converged,
        "l2": options.l2,
    }
    if len(data):
        meta["range"] = [min(data.day).isoformat(), max(data.day).isoformat()]
    return SpikeModel(zone, side, res.beta, float(gamma), 0.5, meta)


def predict(model: SpikeModel, x) -> np.ndarray:
    """Spike probability for one vector (returns a float) or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d:
        raise DimensionMismatch(f"model expects {model.d} features, got {x.shape[-1]}")
    u = model.beta[0] + x @ model.beta[1:]
    p = sigmoid(u)
    return float(p) if np.ndim(p) == 0 else p


def fires(model: SpikeModel, x) -> np.ndarray:
    return np.asarray(predict(model, x)) >= model.tau


@dataclass(frozen=True)
class TuneResult:
    gamma: float
    tau: float
    pnl: float
    trades: int


def tune_thresholds(probs: dict, r, taus: Sequence[float]) -> TuneResult:
    """Grid point with the largest unit-size P&L.

    ``probs`` maps each gamma to validation probabilities (``None`` when no
    model exists for that gamma, which never trades); ``r`` is the per-trade
    edge. Ties go to the larger tau, then the larger gamma.
    """
    if not probs or not len(taus):
        raise EmptyGrid("threshold grid is empty")
    r = np.asarray(r, dtype=np.float64)
    best = None
    for g, p in probs.items():
        for t in taus:
            if p is None:
                pnl, n = 0.0, 0
            else:
                hit = np.asarray(p) >= t
                pnl, n = float(np.sum(r[hit])), int(hit.sum())
            key = (pnl, t, g)
            if best is None or key > best[0]:
                best = (key, n)
    (pnl, t, g), n = best
    return TuneResult(float(g), float(t), pnl, n)


def market_tune(train: ObservationSet, validation: ObservationSet, side: str, zones: Sequence[str],
                gammas: Sequence[float], taus: Sequence[float], options: FitOptions = FitOptions()) -> tuple:
    """Tune one gamma for the market and a tau per zone.

    For each gamma, models are refit on train labels at that gamma and each
    zone keeps its best tau; the gamma with the largest summed validation P&L
    wins (ties to the larger gamma). Zones whose train labels are single-class
    at the chosen gamma get no model. Returns ``(gamma, {zone: SpikeModel})``.
    """
    if not len(gammas) or not len(taus):
        raise EmptyGrid("threshold grid is empty")
    _require_split(train, "train")
    _require_split(validation, "validation")
    check_disjoint(train, validation)
    per_gamma = {}
    for g in gammas:
        th = (g, train.thresholds[1]) if side == "INC" else (train.thresholds[0], g)
        tr = train.with_thresholds(*th)
        total, models = 0.0, {}
        for z in zones:
            tz, vz = tr.for_zone(z), validation.for_zone(z)
            try:
                m = fit(tz, side, zone=z, options=options, gamma=g)
            except SingleClassData:
                continue
            res = tune_thresholds({g: predict(m, vz.x) if len(vz) else np.zeros(0)}, edge(vz, side), taus)
            m.tau = res.tau
            m.train_meta["validation_pnl"] = res.pnl
            m.train_meta["validation_trades"] = res.trades
            models[z] = m
            total += res.pnl
        per_gamma[g] = (total, models)
    g_best = max(per_gamma, key=lambda g: (per_gamma[g][0], g))
    return float(g_best), per_gamma[g_best][1]
