"""Command-line entry point: ``cganrise {gen-data,train,run,gains}``.

Exit codes: 0 success, 1 stability condition violated (``gains``), 2 config
error, 3 numeric divergence, 4 training divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, cgan, ekf_indirect, plotting, rise, rl_direct
from .config import ConfigError, RunConfig, load_config
from .plant import PlantDivergence, PlantParams

log = logging.getLogger("cganrise")

EXIT_OK, EXIT_CONDITION, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TRAINING = 0, 1, 2, 3, 4
OUT_ENV = "CGANRISE_OUT"


def _out_dir(cfg: RunConfig, args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or cfg.out
    path = Path(out) if Path(out).is_absolute() or args.out or os.environ.get(OUT_ENV) \
        else cfg.resolve(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _artifact(out: Path, rel: str) -> Path:
    p = Path(rel)
    p = p if p.is_absolute() else out / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_gen_data(cfg: RunConfig, out: Path) -> int:
    ds_cfg = cfg.dataset
    nominal = PlantParams()
    data = cgan.generate_dataset(nominal, ds_cfg.uncertainty, n_samples=ds_cfg.n_samples,
                                 seed=cfg.seed, n_x=ds_cfg.n_x, n_u=ds_cfg.n_u)
    path = _artifact(out, cfg.dataset_path)
    data.to_jsonl(path)
    manifest = {"seed": cfg.seed, "nominal": nominal.to_dict(), "uncertainty": ds_cfg.uncertainty,
                "n_samples": ds_cfg.n_samples, "n_records": len(data), "skipped": data.skipped,
                "n_x": ds_cfg.n_x, "n_u": ds_cfg.n_u, "dataset": path.name,
                "sha256": _sha256(path)}
    man_path = path.with_name(path.stem + ".manifest.json")
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(data)} records to {path} (skipped {data.skipped})")
    print(f"manifest {man_path} sha256={_sha256(man_path)}")
    return EXIT_OK


def _load_d2(cfg, out) -> cgan.DatasetD2:
    path = _artifact(out, cfg.dataset_path)
    if not path.exists():
        raise ConfigError(f"dataset not found: {path} (run gen-data first)")
    return cgan.DatasetD2.from_jsonl(path)


def _load_cgan(cfg, out) -> cgan.CganModel:
    path = _artifact(out, cfg.cgan_path)
    if not path.exists():
        raise ConfigError(f"CGAN model not found: {path} (run train cgan first)")
    return cgan.CganModel.load(path)


def cmd_train(cfg: RunConfig, out: Path, which: str) -> int:
    if which == "cgan":
        data = _load_d2(cfg, out)
        model, curve = cgan.train_cgan(data, replace(cfg.cgan, seed=cfg.seed))
        model_path = _artifact(out, cfg.cgan_path)
        model.save(model_path)
        curve.to_csv(model_path.with_name("cgan_curve.csv"))
        plotting.plot_training(curve, model_path.with_name("cgan_curve.svg"))
        print(f"saved {model_path}")
        print(f"final loss_G={curve.loss_g[-1]:.4f} loss_D={curve.loss_d[-1]:.4f} "
              f"mean_real_score={curve.real_score[-1]:.4f} mean_fake_score={curve.fake_score[-1]:.4f}")
        return EXIT_OK
    data = _load_d2(cfg, out)
    model = _load_cgan(cfg, out)
    n = min(cfg.d3.n_episodes, len(data))
    episodes = bench.collect_episodes(data.subset(np.arange(n)), cfg.d3.duration,
                                      seed=cfg.seed, ekf=cfg.bench.ekf, gains=cfg.bench.gains)
    d3 = ekf_indirect.build_d3(episodes, cfg.bench.ekf, stride=cfg.d3.ekf_stride,
                               n_x=data.n_x, n_u=data.n_u)
    d3.to_jsonl(_artifact(out, cfg.d3_path))
    adaptor = ekf_indirect.make_adaptor(model, config=replace(cfg.adaptor, seed=cfg.seed),
                                        uncertainty=cfg.dataset.uncertainty)
    adaptor, curve = ekf_indirect.train_adaptor(
        d3, adaptor, model, replace(cfg.adaptor, seed=cfg.seed, epochs=cfg.d3.epochs))
    path = _artifact(out, cfg.adaptor_path)
    adaptor.save(path)
    curve.to_csv(path.with_name("adaptor_curve.csv"))
    print(f"D3: {len(d3)} records ({d3.excluded} excluded); saved {path}")
    print(f"adaptor loss {curve.loss[0]:.4g} -> {curve.loss[-1]:.4g}")
    return EXIT_OK


def cmd_run(cfg: RunConfig, out: Path, scenario: str, variant: str) -> int:
    if scenario not in bench.BASE_SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; catalog: {', '.join(bench.BASE_SCENARIOS)}")
    variants = bench.VARIANTS if variant == "all" else (variant,)
    for v in variants:
        if v not in bench.VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {', '.join(bench.VARIANTS)} or all")
    models = bench.Models()
    if any(v in bench.LEARNED_VARIANTS for v in variants):
        models.cgan = _load_cgan(cfg, out)
    if "indirect" in variants:
        path = _artifact(out, cfg.adaptor_path)
        if not path.exists():
            raise ConfigError(f"adaptor not found: {path} (run train adaptor-indirect first)")
        models.adaptor = ekf_indirect.AdaptorIndirect.load(path)
    w = cfg.metrics
    records = []
    for v in variants:
        sc = bench.find_scenario(scenario, v, cfg.seed, spread=cfg.plant_spread)
        trace = bench.run_episode(sc, models, cfg.bench, cfg.seed)
        stem = f"{scenario}_{v}"
        trace.to_csv(out / f"{stem}.csv")
        plotting.plot_tracking(trace, out / f"{stem}_tracking.svg")
        plotting.plot_control(trace, out / f"{stem}_control.svg")
        rec = bench.metrics_record(trace, bench.compute_metrics(trace, w.Q, w.R1, w.R2))
        records.append(rec)
        print(f"{stem}: IAE={rec['IAE']:.4f} CE={rec['CE']:.4f} IAR={rec['IAR']:.4f} J_p={rec['J_p']:.4f}")
    bench.write_metrics_json(records, out / f"{scenario}_metrics.json")
    if variant == "all":
        bench.write_comparison_csv(records, out / f"{scenario}_comparison.csv")
    return EXIT_OK


def gains_report(cfg: RunConfig) -> dict:
    s = cfg.stability
    bounds = rise.StabilityBounds(s.c_d1, s.c_d2, s.delta3_dot, s.delta3_ddot, s.c_M1,
                                  s.c_M1_dot, s.c_M2, s.epsilon, s.alpha_bar, s.g_upper,
                                  s.g_lower, cfg.bench.direct.reward.eta_v,
                                  rise.AffineRho(s.rho_c0, s.rho_c1))
    g = cfg.bench.gains
    rl = cfg.bench.direct
    ub = rise.ultimate_bounds(bounds, g.k, g.beta, s.beta_d, rl.reward.gamma, s.delta4,
                              s.delta4_dot, rl.replay_capacity, s.lambda_min_pi, s.a_dot_bar)
    report = {"beta_min": rise.min_gain_beta(bounds, g.alpha),
              "k_min": rise.min_gain_k(bounds, s.xi0_norm, ub.ub_xi or 0.0),
              **ub.to_dict()}
    return report


def cmd_gains(cfg: RunConfig, as_json: bool) -> int:
    try:
        report = gains_report(cfg)
    except ValueError as exc:
        raise ConfigError(f"stability bounds: {exc}") from exc
    if as_json:
        print(json.dumps(report))
    else:
        for key in ("beta_min", "k_min", "UB_xi", "UB_v", "RoA"):
            print(f"{key:9s} {report[key]}")
        if report["failure"]:
            print(f"condition failure: {report['failure']}")
    return EXIT_OK if report["ok"] else EXIT_CONDITION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help=f"output directory (env {OUT_ENV} also works)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="cganrise", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="sample the steady-state torque dataset")
    t = sub.add_parser("train", parents=[common], help="train the CGAN or the indirect adaptor")
    t.add_argument("which", choices=("cgan", "adaptor-indirect"))
    r = sub.add_parser("run", parents=[common], help="run a closed-loop scenario")
    r.add_argument("--scenario", default="sim1")
    r.add_argument("--variant", default="direct")
    gp = sub.add_parser("gains", parents=[common], help="stability gain calculators")
    gp.add_argument("--json", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.command == "gains":
            return cmd_gains(cfg, args.json)
        out = _out_dir(cfg, args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out, args.which)
        return cmd_run(cfg, out, args.scenario, args.variant)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PlantDivergence, ekf_indirect.IdentifierDivergence, rl_direct.CriticDivergence) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except cgan.TrainingDivergence as exc:
        print(f"training divergence: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
