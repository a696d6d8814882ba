"""Command-line entry point.

Subcommands are thin shells over the library: gen (instances and streams),
train (fit the re-solve policy), run (execute a saved policy on a stream),
baseline (run one comparison method), theory (schedule bound calculators),
eval (full experiment with report files), sweep (cost grid plus the
trained-at/evaluated-at robustness matrix).

Configuration comes from a flat TOML file; command-line overrides win.
Unknown config keys are rejected. Exit codes: 0 success, 1 usage error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import baselines as bl
from . import generators as gen
from . import harness, milp
from . import policy as pol
from . import theory
from .cpd import DetectorConfig, SelectionScheme
from .errors import PocError
from .runtime import EpisodeContext

CONFIG_KEYS = {
    "family": str, "n_vars": int, "n_cons": int, "horizon": int,
    "resolve_cost": float, "seed": int, "n_train": int, "n_val": int,
    "n_test": int, "n_changes": int, "methods": list, "full_scale": bool,
    "detector_method": str, "detector_alpha": float,
    "detector_permutations": int, "detector_min_segment": int,
    "scheme": str, "scheme_ema_factor": float, "scheme_window": int,
    "ppo_hidden": list, "ppo_max_epochs": int, "ppo_update_every": int,
    "ppo_grad_steps": int, "ppo_learning_rate": float, "ppo_gamma": float,
    "ppo_clip": float, "ppo_value_coef": float, "ppo_entropy_coef": float,
    "ppo_entropy_coef_final": float,
    "ppo_mask_sample_size": bool, "ppo_normalize_features": bool,
    "ppo_reward_scale": float, "ppo_pretrain_steps": int,
    "ppo_pretrain_burst_len": float, "ppo_min_val_improvement": float,
    "node_limit": int,
}


def load_config_file(path) -> dict:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        keys = ", ".join(sorted(CONFIG_KEYS))
        raise ValueError(f"unknown config keys {sorted(unknown)}; "
                         f"known keys: {keys}")
    for key, value in raw.items():
        want = CONFIG_KEYS[key]
        if want is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, want):
            raise ValueError(f"config key {key!r} must be {want.__name__}")
        raw[key] = value
    return raw


def experiment_config(values: dict) -> harness.ExperimentConfig:
    detector = DetectorConfig(
        method=values.get("detector_method", "MeanShift"),
        alpha_sig=values.get("detector_alpha", 0.05),
        permutations=values.get("detector_permutations", 199),
        min_segment=values.get("detector_min_segment", 5),
        seed=values.get("seed", 0),
    )
    scheme = SelectionScheme(
        scheme=values.get("scheme", "CPD"),
        ema_factor=values.get("scheme_ema_factor", 0.9),
        window=values.get("scheme_window", 20),
    )
    ppo = pol.PpoConfig(resolve_cost=values.get("resolve_cost", 10.0))
    for key, attr in [("ppo_hidden", "hidden"), ("ppo_max_epochs", "max_epochs"),
                      ("ppo_update_every", "update_every"),
                      ("ppo_grad_steps", "grad_steps"),
                      ("ppo_learning_rate", "learning_rate"),
                      ("ppo_gamma", "gamma"), ("ppo_clip", "clip"),
                      ("ppo_value_coef", "value_coef"),
                      ("ppo_entropy_coef", "entropy_coef"),
                      ("ppo_entropy_coef_final", "entropy_coef_final"),
                      ("ppo_mask_sample_size", "mask_sample_size"),
                      ("ppo_normalize_features", "normalize_features"),
                      ("ppo_reward_scale", "reward_scale"),
                      ("ppo_pretrain_steps", "pretrain_steps"),
                      ("ppo_pretrain_burst_len", "pretrain_burst_len"),
                      ("ppo_min_val_improvement", "min_val_improvement")]:
        if key in values:
            val = values[key]
            if attr == "hidden":
                val = tuple(int(v) for v in val)
            ppo = replace(ppo, **{attr: val})
    kwargs = {k: values[k] for k in
              ("family", "n_vars", "n_cons", "horizon", "resolve_cost",
               "seed", "n_train", "n_val", "n_test", "n_changes",
               "node_limit", "full_scale") if k in values}
    if "methods" in values:
        kwargs["methods"] = tuple(values["methods"])
    return harness.ExperimentConfig(detector=detector, scheme=scheme,
                                    ppo=ppo, **kwargs)


def _merged_config(args) -> dict:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for key in ("family", "seed", "n_vars", "n_cons", "horizon",
                "resolve_cost", "n_changes"):
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    return values


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(args):
    spec = gen.StreamSpec(horizon=args.horizon, n_changes=args.n_changes)
    dyn = gen.gen_dynamic(args.family, args.n_vars, args.n_cons, spec,
                          args.seed)
    os.makedirs(args.out, exist_ok=True)
    stem = f"{args.family.lower()}_{args.seed}"
    inst_path = os.path.join(args.out, f"{stem}.instance.json")
    stream_path = os.path.join(args.out, f"{stem}.csv")
    milp.write_instance(dyn.instance, inst_path)
    gen.write_stream(dyn, stream_path)
    print(f"wrote {inst_path}")
    print(f"wrote {stream_path}")
    return 0


def cmd_train(args):
    config = experiment_config({**_merged_config(args), "seed": args.seed})
    config.validate()
    train_ctxs, val_ctxs, _ = harness.build_contexts(config)
    params, log = pol.train_offline(train_ctxs, val_ctxs, config.ppo,
                                    seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "policy.npz")
    params.save(model_path)
    print(f"trained {log.epochs} epochs; best validation loss "
          f"{log.best_val_cl:.2f} at epoch {log.best_epoch}")
    print(f"wrote {model_path}")
    return 0


def cmd_run(args):
    dyn = gen.ingest_stream_csv(args.stream, args.instance)
    params, _meta = pol.MlpParams.load(args.model)
    values = _merged_config(args)
    config = experiment_config(values)
    ppo = replace(config.ppo, resolve_cost=values.get("resolve_cost", 10.0))
    log = pol.run_online(dyn, params, config.detector, ppo, config.scheme,
                         seed=args.seed or 0)
    print(f"cumulative loss {log.cumulative_loss:.4f} with "
          f"{log.n_resolves} re-solves at {log.resolve_times}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "timeline.csv")
        with open(path, "w") as fh:
            fh.write("t,is_change_point,is_resolve\n")
            resolves = set(log.resolve_times)
            for t in range(1, dyn.horizon + 1):
                fh.write(f"{t},0,{int(t in resolves)}\n")
        print(f"wrote {path}")
    return 0


def cmd_baseline(args):
    dyn = gen.ingest_stream_csv(args.stream, args.instance)
    values = _merged_config(args)
    config = experiment_config(values)
    ctx = EpisodeContext(dyn, config.detector, config.scheme)
    C = values.get("resolve_cost", 10.0)
    if args.method == "adwin5":
        log = bl.run_adwin5(ctx, args.param, C)
    elif args.method == "cara_p":
        log = bl.run_cara_p(ctx, int(args.param), C)
    else:
        raise ValueError("baseline method must be adwin5 or cara_p "
                         "(upf requires offline training data; use eval)")
    print(f"{args.method}: cumulative loss {log.cumulative_loss:.4f} with "
          f"{log.n_resolves} re-solves")
    return 0


def cmd_theory(args):
    params = theory.TheoryParams(L=args.L, U=args.U, alpha=args.alpha,
                                 rho=args.rho, C=args.C, T=args.T)
    bound = theory.max_resolves(params)
    label = theory.phase_label(params)
    print(f"max re-solves bound: {bound:.6g} ({label})")
    if args.grid:
        cs = [float(v) for v in args.grid.split(",")]
        lines = ["C,bound,phase"]
        for c in cs:
            p = replace(params, C=c)
            lines.append(f"{c},{theory.max_resolves(p)},{theory.phase_label(p)}")
        text = "\n".join(lines)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text + "\n")
            print(f"wrote {args.out}")
        else:
            print(text)
    return 0


def cmd_eval(args):
    values = {**_merged_config(args), "seed": args.seed}
    config = experiment_config(values)
    report = harness.run_experiment(config)
    path = harness.write_report(report, args.out)
    for method, stats in report.summary["methods"].items():
        print(f"{method}: mean CL {stats['mean_cl']:.2f}, "
              f"mean re-solves {stats['mean_resolves']:.2f}")
    print(f"wrote {path}")
    return 0


def cmd_sweep(args):
    values = {**_merged_config(args), "seed": args.seed}
    config = experiment_config(values)
    grid = [float(v) for v in args.grid.split(",")]
    result = harness.sweep_cost(config, grid)
    os.makedirs(args.out, exist_ok=True)
    for C, report in zip(result.grid, result.reports):
        harness.write_report(report, os.path.join(args.out, f"C_{C:g}"))
    np.savetxt(os.path.join(args.out, "robustness.csv"), result.robustness,
               delimiter=",", header=",".join(f"eval_C_{c:g}" for c in grid))
    print(f"wrote {len(grid)} reports under {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poc",
        description="Decide when to re-solve a changing MILP under a "
                    "re-solving cost.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, seed_required=False):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, required=seed_required,
                       help="root random seed" +
                       (" (required)" if seed_required else ""))
        p.add_argument("--family", help="instance family")
        p.add_argument("--resolve-cost", dest="resolve_cost", type=float,
                       help="cost C charged per re-solve")

    p = sub.add_parser("gen", help="generate an instance and its stream")
    p.add_argument("--family", required=True)
    p.add_argument("--n", dest="n_vars", type=int, required=True)
    p.add_argument("--m", dest="n_cons", type=int, required=True)
    p.add_argument("--T", dest="horizon", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-changes", dest="n_changes", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the re-solve policy")
    common(p, seed_required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run a saved policy on a stream")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--stream", required=True)
    p.add_argument("--instance", help="companion instance JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("baseline", help="run one baseline on a stream")
    common(p)
    p.add_argument("--method", required=True, choices=["adwin5", "cara_p"])
    p.add_argument("--param", type=float, required=True,
                   help="distance threshold (adwin5) or period (cara_p)")
    p.add_argument("--stream", required=True)
    p.add_argument("--instance")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("theory", help="re-solve count bound calculators")
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--U", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--C", type=float, required=True)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--grid", help="comma-separated C grid for a CSV curve")
    p.add_argument("--out", help="CSV output path for --grid")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("eval", help="full experiment with report files")
    common(p, seed_required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="experiments over a cost grid")
    common(p, seed_required=True)
    p.add_argument("--grid", required=True,
                   help="comma-separated re-solving costs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PocError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    raise SystemExit(run_cli())


if __name__ == "__main__":
    main()
