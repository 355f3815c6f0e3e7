"""Command-line entry point: one JSON config drives the whole pipeline.

    dartvb run --config cfg.json [--out DIR] [--mode clipped] [--jobs 4]
    dartvb synth --out DIR [--seed 1] [--hours 200]
    dartvb audit --config cfg.json
    dartvb calibrate --config cfg.json [--out DIR]
    dartvb metrics --config cfg.json [--out DIR]

Relative paths in a config resolve against the config file's directory. A
run manifest embeds the resolved config, so ``run --config manifest.json``
replays the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import pandas as pd

from . import backtest, bidstack, classifier, features, panel as panel_mod, sizing, synth
from .errors import ConfigError, DartError

log = logging.getLogger("dartvb")

DEFAULT_GRIDS = {
    "gamma_pos": list(classifier.GAMMA_POS_GRID),
    "gamma_neg": list(classifier.GAMMA_NEG_GRID),
    "tau": list(classifier.TAU_GRID),
}


@dataclass
class RunConfig:
    market: str
    panel: Path
    stacks: Path
    calendar: Path
    output_dir: Optional[Path]
    splits: panel_mod.SplitSpec
    features: features.FeatureSpec
    grids: dict
    fit: classifier.FitOptions
    delta_q: float
    top_n: int
    reference_zone: Optional[str]
    k_reference: float
    mode: str
    min_trades: int
    t_threshold: float
    seed: Optional[int]

    def echo(self) -> dict:
        """Resolved config without the output directory (it must not change results)."""
        return {
            "market": self.market,
            "panel": str(self.panel),
            "stacks": str(self.stacks),
            "calendar": str(self.calendar),
            "splits": self.splits.to_dict(),
            "features": self.features.to_dict(),
            "grids": self.grids,
            "fit": {"l2": self.fit.l2, "max_iter": self.fit.max_iter, "tol": self.fit.tol},
            "impact": {"delta_q": self.delta_q, "top_n": self.top_n,
                       "reference_zone": self.reference_zone, "k_reference": self.k_reference},
            "mode": self.mode,
            "significance": {"min_trades": self.min_trades, "t_threshold": self.t_threshold},
            "seed": self.seed,
        }


def load_config(path, mode: Optional[str] = None, out: Optional[str] = None) -> RunConfig:
    """Parse and validate a config (or a run manifest); every problem is reported at once."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if "config" in doc and "files" in doc:
        doc = doc["config"]
    base = path.resolve().parent
    errors = []

    def need(key):
        if key not in doc:
            errors.append(f"missing key {key!r}")
            return None
        return doc[key]

    def resolve(key):
        v = need(key)
        if v is None:
            return None
        p = (base / v).resolve()
        if not p.exists():
            errors.append(f"{key} path {p} does not exist")
        return p

    market = need("market")
    if market is not None and market not in panel_mod.GATE_CLOSURE:
        errors.append(f"unknown market {market!r}")
    paths = {k: resolve(k) for k in ("panel", "stacks", "calendar")}
    splits = None
    try:
        splits = panel_mod.SplitSpec.from_dict(need("splits") or {})
    except ConfigError as exc:
        errors.append(str(exc))
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"bad splits: {exc}")
    spec = None
    try:
        spec = features.FeatureSpec.from_dict(need("features") or {})
    except (TypeError, ValueError) as exc:
        errors.append(f"bad features: {exc}")
    grids = dict(DEFAULT_GRIDS)
    grids.update(doc.get("grids", {}))
    for k, v in grids.items():
        if not v:
            errors.append(f"grid {k} is empty")
        elif k != "tau" and min(v) <= 0:
            errors.append(f"grid {k} must be positive")
        elif k == "tau" and not all(0 < t < 1 for t in v):
            errors.append("tau grid must lie in (0, 1)")
    imp = doc.get("impact", {})
    delta_q = float(imp.get("delta_q", 1000.0))
    if not delta_q > 0:
        errors.append(f"delta_q must be positive, got {delta_q}")
    mode = mode or doc.get("mode", "unconstrained")
    if mode not in backtest.MODES:
        errors.append(f"mode {mode!r} not in {backtest.MODES}")
    fit = doc.get("fit", {})
    sig = doc.get("significance", {})
    if errors:
        raise ConfigError(f"{path}: " + "; ".join(errors))
    output = Path(out) if out else (base / doc["output_dir"] if doc.get("output_dir") else None)
    return RunConfig(
        market=market, output_dir=output, splits=splits, features=spec, grids=grids,
        fit=classifier.FitOptions(tol=float(fit.get("tol", 1e-6)), max_iter=int(fit.get("max_iter", 5000)),
                                  l2=float(fit.get("l2", 0.0))),
        delta_q=delta_q, top_n=int(imp.get("top_n", 10)), reference_zone=imp.get("reference_zone"),
        k_reference=float(imp.get("k_reference", 0.05)), mode=mode,
        min_trades=int(sig.get("min_trades", 50)), t_threshold=float(sig.get("t_threshold", 2.0)),
        seed=doc.get("seed"), **paths,
    )


@dataclass
class Prepared:
    cfg: RunConfig
    calendar: panel_mod.MarketCalendar
    panel: panel_mod.Panel
    obs: features.ObservationSet
    parts: dict


def prepare(cfg: RunConfig) -> Prepared:
    calendar, _ = panel_mod.load_calendar(cfg.calendar)
    if calendar.market != cfg.market:
        raise ConfigError(f"calendar is for {calendar.market}, config says {cfg.market}")
    pnl = panel_mod.load_panel(cfg.panel, cfg.market)
    g = (min(cfg.grids["gamma_neg"]), min(cfg.grids["gamma_pos"]))
    obs = features.build_features(pnl, cfg.features, calendar, g)
    parts = obs.split_by(cfg.splits)
    if len(parts["train"]) == 0:
        raise ConfigError("train split has no usable observations")
    std = features.Standardizer.fit(parts["train"])
    parts = {k: std.apply(v) for k, v in parts.items()}
    log.info("observations: %s (dropped %d)", {k: len(v) for k, v in parts.items()}, obs.dropped)
    return Prepared(cfg, calendar, pnl, obs, parts)


def fit_models(prep: Prepared, jobs: int = 1) -> dict:
    cfg = prep.cfg
    zones = list(cfg.features.zones_pooled)

    def one(side):
        grid = cfg.grids["gamma_neg"] if side == "INC" else cfg.grids["gamma_pos"]
        return side, classifier.market_tune(prep.parts["train"], prep.parts["validation"], side, zones,
                                            grid, cfg.grids["tau"], cfg.fit)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, classifier.SIDES))
    models = {}
    for side, (gamma, per_zone) in results:
        log.info("%s: gamma %.4g, %d zone models", side, gamma, len(per_zone))
        for z, m in per_zone.items():
            models[(z, side)] = m
    return models


def calibrate(prep: Prepared, stacks=None) -> tuple:
    cfg = prep.cfg
    if stacks is None:
        stacks = bidstack.load_bidstacks(cfg.stacks)
    window = (cfg.splits.train[0], cfg.splits.validation[1])
    energy = bidstack.estimate_energy_coeffs(stacks, prep.panel, prep.calendar, cfg.top_n, cfg.delta_q,
                                             window=window, on_empty="pool")
    loads = bidstack.mean_loads(prep.panel, window)
    ref = cfg.reference_zone or sorted(loads)[0]
    kz = bidstack.calibrate_kz(loads, ref, cfg.k_reference)
    params = bidstack.ImpactParams(energy.k_e_plus, energy.k_e_minus, kz,
                                   {"zone": ref, "k_reference": cfg.k_reference, "mean_loads": loads})
    return params, energy


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_run(cfg: RunConfig, jobs: int = 1) -> Path:
    prep = prepare(cfg)
    models = fit_models(prep, jobs)
    stacks = bidstack.load_bidstacks(cfg.stacks)
    params, energy = calibrate(prep, stacks)
    val, test = prep.parts["validation"], prep.parts["test"]
    payoffs = sizing.estimate_payoffs(models, val, per_bucket=cfg.mode == "restricted")
    if cfg.mode == "restricted":
        # restricted payoffs are per bucket; pooled keys keep unlisted buckets priced
        payoffs.update(sizing.estimate_payoffs(models, val))
    vtrades = pd.concat([backtest.unit_trades({z: m for (z, s), m in models.items() if s == side}, val, side,
                                              "validation") for side in classifier.SIDES], ignore_index=True)
    sig = backtest.bucket_significance(vtrades, cfg.min_trades, cfg.t_threshold)
    report = backtest.run_strategy(models, payoffs, params, test, cfg.mode,
                                   admissible=backtest.admissible_set(sig))
    report.significance = sig
    if len(test):
        backtest.attach_alignment(report, test)
    for view in report.views:
        gap = report.accounting_gap(view)
        if gap > 1e-6:
            raise DartError(f"{view} accounting identity off by {gap}")

    out = cfg.output_dir
    if out is None:
        raise ConfigError("no output directory (set output_dir or pass --out)")
    out.mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)
    extra_files = []
    for (z, side), m in sorted(models.items()):
        name = f"models/{z}_{side}.json"
        m.save(out / name)
        extra_files.append(name)
    params.save(out / "impact.json")
    extra_files.append("impact.json")
    _write_json(out / "payoffs.json", {
        "|".join([k[0], k[1]] + (list(k[2]) if len(k) > 2 else [])): {"x": v.x, "trades": v.trades,
                                                                      "eligible": v.eligible}
        for k, v in sorted(payoffs.items(), key=lambda kv: str(kv[0]))
    })
    extra_files.append("payoffs.json")
    sizing.write_trade_plans(report.plans, out / "plans.csv")
    extra_files.append("plans.csv")
    check = backtest.realized_impact(report.plans, stacks, params, prep.calendar)
    backtest._write(out / "impact_validation.csv", list(check.columns), check.itertuples(index=False, name=None))
    extra_files.append("impact_validation.csv")
    manifest = backtest.emit_report(report, out, extra={
        "config": cfg.echo(),
        "inputs": {k: backtest.sha256(getattr(cfg, k)) for k in ("panel", "stacks", "calendar")},
        "coverage": {f"{b[0]}|{b[1]}": list(v) for b, v in sorted(energy.coverage.items())},
        "pooled_buckets": [f"{b[0]}|{b[1]}" for b in energy.pooled],
        "totals": {v: report.total(v) for v in report.views},
    })
    doc = json.loads(manifest.read_text())
    for name in extra_files:
        doc["files"][name] = backtest.sha256(out / name)
    _write_json(manifest, doc)
    return manifest


def cmd_synth(out: Path, seed: int, hours: int, market: str, spike_rate: float) -> Path:
    return synth.write_fixture(out, seed=seed, hours=hours, market=market, spike_rate=spike_rate)


def cmd_audit(cfg: RunConfig) -> features.AuditReport:
    calendar, _ = panel_mod.load_calendar(cfg.calendar)
    pnl = panel_mod.load_panel(cfg.panel, cfg.market)
    g = (min(cfg.grids["gamma_neg"]), min(cfg.grids["gamma_pos"]))
    obs = features.build_features(pnl, cfg.features, calendar, g)
    return features.leakage_audit(obs, pnl, calendar)


def cmd_metrics(cfg: RunConfig, jobs: int = 1) -> dict:
    prep = prepare(cfg)
    models = fit_models(prep, jobs)
    return backtest.signal_metrics(models, prep.parts["test"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dartvb", description="DART spike forecasting and virtual bid sizing")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="run config JSON (or a run manifest)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--mode", choices=backtest.MODES)
        p.add_argument("--jobs", type=int, default=1, help="parallel model fits")

    common(sub.add_parser("run", help="full pipeline"))
    s = sub.add_parser("synth", help="write a synthetic fixture")
    common(s, config=False)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--hours", type=int, default=200)
    s.add_argument("--market", default="NYISO", choices=sorted(panel_mod.GATE_CLOSURE))
    s.add_argument("--spike-rate", type=float, default=0.2)
    common(sub.add_parser("audit", help="leakage audit of the feature set"))
    common(sub.add_parser("calibrate", help="impact coefficients only"))
    common(sub.add_parser("metrics", help="classification metrics on the test split"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "synth":
            if not args.out:
                raise ConfigError("synth needs --out")
            path = cmd_synth(Path(args.out), args.seed, args.hours, args.market, args.spike_rate)
            print(path)
            return 0
        cfg = load_config(args.config, mode=args.mode, out=args.out)
        if args.command == "run":
            print(cmd_run(cfg, args.jobs))
        elif args.command == "audit":
            rep = cmd_audit(cfg)
            text = "\n".join(rep.lines()) + "\n"
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "audit.txt").write_text(text)
            sys.stdout.write(text)
            print("PASS" if rep.passed else f"FAIL: {', '.join(rep.failing)}")
            return 0 if rep.passed else 1
        elif args.command == "calibrate":
            params, energy = calibrate(prepare_light(cfg))
            if cfg.output_dir:
                cfg.output_dir.mkdir(parents=True, exist_ok=True)
                params.save(cfg.output_dir / "impact.json")
            print(json.dumps(params.to_dict(), indent=2, sort_keys=True))
        elif args.command == "metrics":
            mets = cmd_metrics(cfg, args.jobs)
            rows = [(z, s, m.tp, m.fp, m.fn, m.tn, m.precision, m.recall, m.f1) for (z, s), m in mets.items()]
            header = ["zone", "side", "tp", "fp", "fn", "tn", "precision", "recall", "f1"]
            if cfg.output_dir:
                cfg.output_dir.mkdir(parents=True, exist_ok=True)
                backtest._write(cfg.output_dir / "metrics.csv", header, rows)
            print(",".join(header))
            for r in rows:
                print(",".join(backtest._fmt(v) for v in r))
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DartError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def prepare_light(cfg: RunConfig) -> Prepared:
    """Calendar and panel only; enough for calibration."""
    calendar, _ = panel_mod.load_calendar(cfg.calendar)
    pnl = panel_mod.load_panel(cfg.panel, cfg.market)
    return Prepared(cfg, calendar, pnl, None, {})


if __name__ == "__main__":
    sys.exit(main())
