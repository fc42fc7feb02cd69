"""Command-line front end.

One executable, one subcommand per experiment: train, eval, perturb-sweep,
probe-reg, margin, lyapunov, stabilize, convergence-test.  Every command
accepts --config / --seed / --out, writes its artifacts plus a run manifest
(config hash, seed, git description, wall time) into the output directory,
and exits 0 on success, 1 on validation errors, 2 on numerical failures.
CSV floats are written with 17 significant digits so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import margin as margin_mod
from . import regularizer as reg_mod
from . import robustness as rob_mod
from . import stability as stab_mod
from .errors import ConfigurationError, NumericalError
from .linalg import fit_loglog_slope
from .sde import NoiseConfig, gbm_strong_errors, uniform_schedule
from .training import load_checkpoint, materialize, save_checkpoint, train

_FLOAT_FMT = "%.17g"


class _CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for bad flags, not argparse's 2
        raise _CliError(message)


def _seed_of(args) -> int:
    return args.seed if args.seed is not None else 0


def _fmt(value) -> str:
    if isinstance(value, float):
        return _FLOAT_FMT % value
    return str(value)


def write_csv(path, header: list[str], rows: list[list]):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def _config_hash(config_path) -> str:
    if config_path is None:
        return "none"
    return hashlib.sha256(Path(config_path).read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, args, outputs: list[str],
                    started: float):
    manifest = {
        "command": command,
        "config": str(args.config) if args.config else None,
        "config_sha256": _config_hash(args.config),
        "seed": args.seed,
        "git_describe": _git_describe(),
        "wall_time_s": time.time() - started,
        "outputs": outputs,
    }
    path = out_dir / f"{command.replace('-', '_')}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_experiment(args) -> data_mod.ExperimentConfig:
    if args.config is None:
        raise _CliError("this command requires --config")
    return data_mod.load_config(args.config)


def _json_dump(path, payload):
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(f"not JSON serializable: {type(o)}")
    Path(path).write_text(json.dumps(payload, indent=2, default=default) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_train(args) -> list[str]:
    cfg = _load_experiment(args)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    splits = data_mod.resolve_dataset(cfg.dataset)
    rng = np.random.default_rng(train_cfg.seed)
    raw, metrics = train(splits["train"], train_cfg,
                         eval_dataset=splits.get("test"),
                         step_scale=cfg.step_scale, d_h=cfg.model.d_h,
                         beta_a=cfg.model.beta, beta_w=cfg.model.beta,
                         gamma_a=cfg.model.gamma_a, gamma_w=cfg.model.gamma_w,
                         rng=rng)
    out = _out_dir(args)
    ckpt = out / "checkpoint.npz"
    save_checkpoint(ckpt, raw, train_cfg, step_scale=cfg.step_scale,
                    rng_state=rng.bit_generator.state)
    metrics_csv = out / "metrics.csv"
    write_csv(metrics_csv, ["epoch", "train_loss", "eval_accuracy", "lr"],
              [[m["epoch"], m["train_loss"], m["eval_accuracy"], m["lr"]]
               for m in metrics])
    return [str(ckpt), str(metrics_csv)]


def _cmd_eval(args) -> list[str]:
    cfg = _load_experiment(args)
    raw, _, step_scale, _ = load_checkpoint(args.ckpt)
    params = materialize(raw)
    splits = data_mod.resolve_dataset(cfg.dataset)
    ds = splits.get(args.split, splits["test"])
    acc = rob_mod.clean_accuracy(params, ds, step_scale)
    out = _out_dir(args)
    path = out / "eval.json"
    _json_dump(path, {"split": args.split, "n_samples": ds.n_samples,
                      "accuracy": acc})
    return [str(path)]


def _cmd_perturb_sweep(args) -> list[str]:
    cfg = _load_experiment(args)
    splits = data_mod.resolve_dataset(cfg.dataset)
    ds = splits["test"]
    clip = ds.meta.get("value_range")
    models = []
    step_scale = cfg.step_scale
    for ckpt in args.model_ckpt:
        raw, _, ckpt_scale, _ = load_checkpoint(ckpt)
        models.append((Path(ckpt).stem, materialize(raw)))
        step_scale = ckpt_scale
    grid = [float(v) for v in args.grid.split(",")]
    seeds = [int(v) for v in args.seeds.split(",")]
    specs = [rob_mod.PerturbationSpec(kind=args.kind, strength=s,
                                      clip_range=tuple(clip) if clip else None,
                                      seed=_seed_of(args))
             for s in grid]
    report = rob_mod.sweep(models, ds, specs, seeds, step_scale=step_scale)
    out = _out_dir(args)
    csv_path = Path(args.out_csv) if args.out_csv else out / "sweep.csv"
    write_csv(csv_path, ["model_id", "seed", "kind", "strength", "accuracy"],
              [[r["model_id"], r["seed"], r["kind"], r["strength"], r["accuracy"]]
               for r in report.rows])
    # plot-ready strength/mean/err table per model
    agg_path = out / "sweep_aggregates.csv"
    write_csv(agg_path,
              ["model_id", "kind", "strength", "mean_accuracy", "std_accuracy"],
              [[a["model_id"], a["kind"], a["strength"], a["mean_accuracy"],
                a["std_accuracy"]] for a in report.aggregates])
    json_path = Path(args.out_json) if args.out_json else out / "sweep.json"
    _json_dump(json_path, {"rows": report.rows, "aggregates": report.aggregates})
    return [str(csv_path), str(agg_path), str(json_path)]


def _cmd_probe_reg(args) -> list[str]:
    x_seq, label, p, n, schedule = reg_mod.reference_instance(seed=args.seed if args.seed is not None else 7)
    eps_grid = [float(v) for v in args.eps_grid.split(",")]
    report = reg_mod.verify_theorem1(x_seq, label, p, n, schedule, eps_grid,
                                     n_paths=args.paths, rng_seed=_seed_of(args))
    out = _out_dir(args)
    json_path = out / "regularizer_report.json"
    payload = {"Q_hat": report["Q_hat"], "Q_hat_hierarchy": report["Q_hat_hierarchy"],
               "R_hat": report["R_hat"], "R_hat_frobenius": report["R_hat_frobenius"],
               "per_step": report["per_step_R"], "Delta": report["Delta"],
               "predicted_ratio": report["predicted_ratio"],
               "mc_table": report["mc_table"],
               "hierarchy_residual": report["hierarchy_residual"],
               "delta_scaling": report["delta_scaling"]}
    _json_dump(json_path, payload)
    csv_path = out / "mc_table.csv"
    write_csv(csv_path, ["eps", "ratio", "stderr"],
              [[row["eps"], row["ratio"], row["stderr"]] for row in report["mc_table"]])
    return [str(json_path), str(csv_path)]


def _cmd_margin(args) -> list[str]:
    cfg = _load_experiment(args)
    raw, _, step_scale, _ = load_checkpoint(args.ckpt)
    params = materialize(raw)
    splits = data_mod.resolve_dataset(cfg.dataset)
    ds = splits.get(args.split, splits["test"])
    if args.max_samples:
        ds = ds.subset(np.arange(min(args.max_samples, ds.n_samples)))
    schedule = uniform_schedule(ds.n_steps, step_scale)
    attack = margin_mod.AttackConfig(r_max=args.r_max,
                                     n_random_directions=args.directions,
                                     seed=_seed_of(args))
    reports, c_const, sups = margin_mod.build_margin_reports(
        ds.inputs, ds.labels, params, schedule, attack=attack,
        n_hull_samples=args.hull_samples, rng_seed=_seed_of(args))
    out = _out_dir(args)
    csv_path = out / "margin.csv"
    write_csv(csv_path, ["sample_id", "score", "gamma_lower", "empirical_margin"],
              [[r.sample_id, r.score, r.gamma_lower,
                r.empirical_margin if r.empirical_margin is not None else float("nan")]
               for r in reports])
    json_path = out / "margin.json"
    _json_dump(json_path, {"C": c_const, "phi_sup": sups.tolist(),
                           "n_samples": len(reports)})
    return [str(csv_path), str(json_path)]


def _parse_kv(pairs: list[str]) -> dict[str, float]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise _CliError(f"expected key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        out[key.strip()] = float(val)
    return out


def _cmd_lyapunov(args) -> list[str]:
    out = _out_dir(args)
    if args.scalar_oracle:
        kv = _parse_kv(args.scalar_oracle)
        a, sigma = kv.get("a", 1.0), kv.get("sigma", 2.0)
        params = stab_mod.scalar_linear_params(a)
        est = stab_mod.estimate_lyapunov(
            params, NoiseConfig(), stab_mod.constant_input_source(np.zeros(1)),
            delta=args.delta, horizon_T=args.horizon, diffusion="linear",
            mult_coeff=sigma, rng_seed=_seed_of(args), n_paths=args.paths)
        bounds = stab_mod.theorem3_bounds(params, (sigma, sigma), L_a=0.0)
    else:
        if args.ckpt is None:
            raise _CliError("lyapunov needs --ckpt or --scalar-oracle")
        raw, _, _, _ = load_checkpoint(args.ckpt)
        params = materialize(raw)
        coeff = args.mult_coeff
        est = stab_mod.estimate_lyapunov(
            params, NoiseConfig(),
            stab_mod.gaussian_input_source(params.d_x, seed=_seed_of(args)),
            delta=args.delta, horizon_T=args.horizon, diffusion="linear",
            mult_coeff=coeff, rng_seed=_seed_of(args), n_paths=args.paths)
        bounds = stab_mod.theorem3_bounds(params, (coeff, coeff))
    inside = (bounds.lower - 3 * est.stderr_over_blocks <= est.lambda_hat
              <= bounds.upper + 3 * est.stderr_over_blocks)
    path = out / "lyapunov.json"
    _json_dump(path, {"lambda_hat": est.lambda_hat,
                      "stderr": est.stderr_over_blocks,
                      "n_renormalizations": est.n_renormalizations,
                      "horizon": est.horizon,
                      "lower": bounds.lower, "upper": bounds.upper,
                      "inside_bracket": bool(inside)})
    return [str(path)]


def _cmd_stabilize(args) -> list[str]:
    if args.ckpt is not None:
        raw, _, _, _ = load_checkpoint(args.ckpt)
        params = materialize(raw)
    else:
        params = stab_mod.scalar_linear_params(args.a)
    sigmas = [float(v) for v in args.sigmas.split(",")]
    grid = [(s, s) for s in sigmas]
    rows = stab_mod.stabilization_search(params, L_a=1.0, sigma_grid=grid,
                                         cross_check=args.cross_check,
                                         rng_seed=_seed_of(args))
    out = _out_dir(args)
    path = out / "stabilize.csv"
    write_csv(path, ["sigma1", "sigma2", "lower", "upper", "stabilized", "lambda_hat"],
              [[r["sigma1"], r["sigma2"], r["lower"], r["upper"],
                int(r["stabilized"]),
                r["lambda_hat"] if r["lambda_hat"] is not None else float("nan")]
               for r in rows])
    return [str(path)]


def _cmd_convergence_test(args) -> list[str]:
    deltas = np.array([2.0 ** -k for k in range(4, 11)])
    errors = gbm_strong_errors(a=args.a, sigma_mult=args.sigma, h0=1.0,
                               t_final=1.0, deltas=deltas, n_paths=args.paths,
                               rng_seed=_seed_of(args))
    slope = fit_loglog_slope(deltas, errors)
    out = _out_dir(args)
    csv_path = out / "convergence.csv"
    write_csv(csv_path, ["delta", "strong_error"],
              [[d, e] for d, e in zip(deltas, errors)])
    json_path = out / "convergence.json"
    _json_dump(json_path, {"slope": slope, "deltas": deltas.tolist(),
                           "errors": errors.tolist()})
    return [str(csv_path), str(json_path)]


# ---------------------------------------------------------------------------
# Parser / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="nrnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("train", help="train a model from a config")
    common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("perturb-sweep", help="accuracy under input perturbations")
    common(p)
    p.add_argument("--model-ckpt", action="append", required=True)
    p.add_argument("--kind", required=True, choices=rob_mod.KINDS)
    p.add_argument("--grid", required=True, help="comma-separated strengths")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-json", default=None)
    p.set_defaults(fn=_cmd_perturb_sweep)

    p = sub.add_parser("probe-reg", help="expansion-term verification report")
    common(p)
    p.add_argument("--eps-grid", default="0.1,0.0316,0.01")
    p.add_argument("--paths", type=int, default=20000)
    p.set_defaults(fn=_cmd_probe_reg)

    p = sub.add_parser("margin", help="per-sample margin analysis")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--max-samples", type=int, default=32)
    p.add_argument("--r-max", type=float, default=2.0)
    p.add_argument("--directions", type=int, default=32)
    p.add_argument("--hull-samples", type=int, default=64)
    p.set_defaults(fn=_cmd_margin)

    p = sub.add_parser("lyapunov", help="sample Lyapunov exponent estimate")
    common(p)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--scalar-oracle", nargs="*", default=None,
                   help="key=value pairs, e.g. a=1 sigma=2")
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--horizon", type=float, default=1000.0)
    p.add_argument("--paths", type=int, default=32)
    p.add_argument("--mult-coeff", type=float, default=0.0)
    p.set_defaults(fn=_cmd_lyapunov)

    p = sub.add_parser("stabilize", help="noise-level stabilization scan")
    common(p)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--a", type=float, default=0.5, help="scalar drift rate")
    p.add_argument("--sigmas", default="0.0,0.5,1.0,1.5,2.0")
    p.add_argument("--cross-check", action="store_true")
    p.set_defaults(fn=_cmd_stabilize)

    p = sub.add_parser("convergence-test", help="strong-order check of the integrator")
    common(p)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.8)
    p.add_argument("--paths", type=int, default=10000)
    p.set_defaults(fn=_cmd_convergence_test)

    return parser


def dispatch(argv: list[str]) -> int:
    started = time.time()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        outputs = args.fn(args)
        _write_manifest(_out_dir(args), args.command, args, outputs, started)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigurationError, FileNotFoundError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


def _apply_thread_cap():
    cap = os.environ.get("NOISY_RNN_THREADS")
    if not cap or cap == "0":
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)
    try:
        import numba
        numba.set_num_threads(max(1, int(cap)))
    except (ImportError, ValueError):
        pass


def main() -> None:
    _apply_thread_cap()
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
