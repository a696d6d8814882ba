"""Experiment orchestration: dataset splits, training, tuning, evaluation,
cost sweeps, and report persistence.

Instances are generated from the experiment seed, split into train /
validation / test, and every method is evaluated on the same test contexts.
Context warm-up (change-point prefixes and all reachable solver calls) is
the expensive part and is parallelized across instances; the worker count
is capped by the POC_THREADS environment variable.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import pickle
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import baselines as bl
from . import policy as pol
from .cpd import DetectorConfig, SelectionScheme
from .generators import StreamSpec, gen_dynamic
from .runtime import EpisodeContext, EpisodeLog, run_episode

FULL_SCALE_DIMS = (100, 50, 1000)  # reference dimensions; slow without a
                                   # commercial solver

ADWIN_GRID = tuple(range(0, 31))
CARA_GRID = tuple(range(1, 51))
UPF_GRID = tuple((l1, l2) for l1 in np.logspace(-4, 0, 5)
                 for l2 in np.logspace(-4, 0, 5))


def thread_budget() -> int:
    env = os.environ.get("POC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            warnings.warn(f"ignoring invalid POC_THREADS={env!r}")
    return os.cpu_count() or 1


@dataclass
class ExperimentConfig:
    family: str = "GMILP"
    n_vars: int = 20
    n_cons: int = 10
    horizon: int = 200
    resolve_cost: float = 10.0
    seed: int = 0
    n_train: int = 30
    n_val: int = 10
    n_test: int = 10
    n_changes: int = 3
    methods: tuple = ("POC", "ADWIN5", "CARA-P", "UPF")
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    scheme: SelectionScheme = field(default_factory=SelectionScheme)
    ppo: pol.PpoConfig = field(default_factory=pol.PpoConfig)
    node_limit: int = 100000
    full_scale: bool = False

    def validate(self):
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("split sizes must be positive")
        if not self.methods:
            raise ValueError("method list must be nonempty")
        self.detector.validate()
        self.scheme.validate()
        self.ppo.validate()
        if self.full_scale:
            warnings.warn("full-scale dimensions are slow without a "
                          "commercial solver")
            self.n_vars, self.n_cons, self.horizon = FULL_SCALE_DIMS
        return self

    def poc_label(self) -> str:
        label = "POC"
        if self.scheme.scheme != "CPD":
            label += f"-{self.scheme.scheme}"
        if self.ppo.mask_sample_size:
            label += "-nosize"
        return label


def config_hash(config: ExperimentConfig) -> str:
    def enc(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if hasattr(o, "__dict__"):
            return o.__dict__
        return str(o)

    blob = json.dumps(asdict(config), sort_keys=True, default=enc)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Report:
    config: ExperimentConfig
    config_hash: str
    rows: list                  # dicts with the CSV columns
    summary: dict               # per-method means + diagnostics
    timelines: dict             # instance_id -> list of (t, is_cp, is_resolve)
    tuned: dict                 # baseline name -> chosen hyperparameter


def _instance_seed(config, index) -> list:
    return [config.seed, index]


def _context_cache_key(config, index) -> str:
    """Cache key over everything a warmed context depends on; notably the
    re-solving cost and the learning configuration are excluded."""
    parts = {"family": config.family, "n_vars": config.n_vars,
             "n_cons": config.n_cons, "horizon": config.horizon,
             "n_changes": config.n_changes, "seed": config.seed,
             "node_limit": config.node_limit,
             "detector": config.detector.__dict__,
             "scheme": config.scheme.__dict__, "index": index}
    blob = json.dumps(parts, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def _build_context(args):
    config, index, cache_dir = args
    if cache_dir:
        path = os.path.join(cache_dir, f"ctx_{_context_cache_key(config, index)}.pkl")
        if os.path.exists(path):
            with open(path, "rb") as fh:
                return pickle.load(fh)
    spec = StreamSpec(horizon=config.horizon, n_changes=config.n_changes)
    dyn = gen_dynamic(config.family, config.n_vars, config.n_cons, spec,
                      _instance_seed(config, index))
    ctx = EpisodeContext(dyn, config.detector, config.scheme,
                         node_limit=config.node_limit)
    warm_context(ctx)
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        tmp = path + f".tmp{os.getpid()}"
        try:
            with open(tmp, "wb") as fh:
                pickle.dump(ctx, fh)
            os.replace(tmp, path)
        except (OSError, pickle.PicklingError):
            warnings.warn(f"could not cache context at {path}")
    return ctx


def warm_context(ctx: EpisodeContext):
    """Populate every policy-independent cache an episode can touch."""
    ctx.default_solution()
    for t in range(1, ctx.horizon + 1):
        ctx.clairvoyant(t)
        if t >= 2:
            ctx.resolve_at(t)
    return ctx


def build_contexts(config: ExperimentConfig, n_workers=None, cache_dir=None):
    """Generate and warm all split contexts; returns (train, val, test).

    Warmed contexts are pickled under `cache_dir` (or $POC_CACHE_DIR) so
    repeated runs over the same instances skip the solver warm-up.
    """
    total = config.n_train + config.n_val + config.n_test
    n_workers = min(n_workers or thread_budget(), total)
    cache_dir = cache_dir or os.environ.get("POC_CACHE_DIR")
    jobs = [(config, i, cache_dir) for i in range(total)]
    if n_workers > 1:
        from multiprocessing import get_context
        with get_context("fork").Pool(n_workers) as pool:
            ctxs = pool.map(_build_context, jobs)
    else:
        ctxs = [_build_context(j) for j in jobs]
    a, b = config.n_train, config.n_train + config.n_val
    return ctxs[:a], ctxs[a:b], ctxs[b:]


def _evaluate(ctxs, runner):
    logs = [runner(ctx) for ctx in ctxs]
    return logs


def _fit_upf(train_ctxs, l1, l2):
    X, y = _upf_design(train_ctxs)
    return bl.fit_elastic_net(X, y, l1, l2)


_UPF_DESIGNS = {}


def _upf_design(train_ctxs):
    key = tuple(id(c) for c in train_ctxs)
    if key not in _UPF_DESIGNS:
        _UPF_DESIGNS[key] = bl.build_upf_training_set(train_ctxs)
    return _UPF_DESIGNS[key]


def run_experiment(config: ExperimentConfig, contexts=None,
                   trained=None) -> Report:
    """Full protocol: train the learned policy on the training split, tune
    baselines on validation, evaluate everything on the test split."""
    config.validate()
    if contexts is None:
        contexts = build_contexts(config)
    train_ctxs, val_ctxs, test_ctxs = contexts
    C = config.resolve_cost
    ppo = replace(config.ppo, resolve_cost=C)

    method_logs = {}
    tuned = {}
    poc_params = trained

    for method in config.methods:
        try:
            if method == "POC":
                if poc_params is None:
                    poc_params, _ = pol.train_offline(train_ctxs, val_ctxs,
                                                      ppo, seed=config.seed)
                method_logs[config.poc_label()] = _evaluate(
                    test_ctxs,
                    lambda ctx: pol.run_online(ctx.dynamic, poc_params,
                                               config.detector, ppo,
                                               config.scheme,
                                               seed=config.seed, ctx=ctx))
            elif method == "ADWIN5":
                thr, _ = bl.tune_hyperparam("adwin5", ADWIN_GRID, val_ctxs, C)
                tuned[method] = thr
                method_logs[method] = _evaluate(
                    test_ctxs, lambda ctx: bl.run_adwin5(ctx, thr, C))
            elif method == "CARA-P":
                period, _ = bl.tune_hyperparam("cara_p", CARA_GRID, val_ctxs, C)
                tuned[method] = period
                method_logs[method] = _evaluate(
                    test_ctxs, lambda ctx: bl.run_cara_p(ctx, period, C))
            elif method == "UPF":
                fit = lambda l1, l2: _fit_upf(train_ctxs, l1, l2)
                pair, _ = bl.tune_hyperparam("upf", UPF_GRID, val_ctxs, C,
                                             {"fit": fit})
                tuned[method] = pair
                model = fit(*pair)
                method_logs[method] = _evaluate(
                    test_ctxs, lambda ctx: bl.run_upf(ctx, model, C))
            else:
                raise ValueError(f"unknown method {method!r}")
        except Exception as exc:
            raise RuntimeError(f"method {method} failed: {exc}") from exc

    bounds = [bl.compute_lower_bounds(ctx) for ctx in test_ctxs]
    rows, summary, timelines = _assemble(config, method_logs, bounds,
                                         test_ctxs)
    report = Report(config, config_hash(config), rows, summary, timelines,
                    tuned)
    report.poc_params = poc_params
    return report


def _assemble(config, method_logs, bounds, test_ctxs):
    C = config.resolve_cost
    rows = []
    summary = {"methods": {}, "C": C, "family": config.family}
    for method, logs in method_logs.items():
        cls, counts = [], []
        for i, (log, ctx, (lbw, lbwo)) in enumerate(
                zip(logs, test_ctxs, bounds)):
            rows.append({
                "method": method, "family": config.family, "C": C,
                "seed": config.seed, "instance_id": i,
                "cl": log.cumulative_loss, "n_resolves": log.n_resolves,
                "lb_wcp": lbw, "lb_wocp": lbwo,
            })
            cls.append(log.cumulative_loss)
            counts.append(log.n_resolves)
        summary["methods"][method] = {
            "mean_cl": float(np.mean(cls)),
            "std_cl": float(np.std(cls)),
            "mean_resolves": float(np.mean(counts)),
        }
    lbw_vals = [b[0] for b in bounds if b[0] is not None]
    summary["lb_wcp_mean"] = float(np.mean(lbw_vals)) if lbw_vals else None
    summary["lb_wocp_mean"] = float(np.mean([b[1] for b in bounds]))

    timelines = {}
    poc_label = config.poc_label()
    if poc_label in method_logs:
        for i, (log, ctx) in enumerate(zip(method_logs[poc_label],
                                           test_ctxs)):
            cps = set(ctx.dynamic.true_change_points or [])
            resolves = set(log.resolve_times)
            timelines[i] = [(t, int(t in cps), int(t in resolves))
                            for t in range(1, ctx.horizon + 1)]
        # Cost decomposition: re-solve spend vs excess optimization loss.
        spend = float(np.mean([C * log.n_resolves
                               for log in method_logs[poc_label]]))
        excess = float(np.mean(
            [log.optimization_loss - b[1]
             for log, b in zip(method_logs[poc_label], bounds)]))
        summary["resolve_cost_component"] = spend
        summary["excess_optimization_loss"] = excess
        summary["cost_balance_ratio"] = (spend / excess if excess > 0
                                         else float("inf"))
    return rows, summary, timelines


REPORT_COLUMNS = ["method", "family", "C", "seed", "instance_id", "cl",
                  "n_resolves", "lb_wcp", "lb_wocp"]


def write_report(report: Report, outdir):
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "report.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in report.rows:
            out = dict(row)
            if out["lb_wcp"] is None:
                out["lb_wcp"] = ""
            writer.writerow(out)
    summary = dict(report.summary)
    summary["config_hash"] = report.config_hash
    summary["tuned"] = {k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in report.tuned.items()}
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    for inst_id, series in report.timelines.items():
        path = os.path.join(outdir, f"timeline_{inst_id}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "is_change_point", "is_resolve"])
            writer.writerows(series)
    return csv_path


def read_report_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            row["C"] = float(row["C"])
            row["seed"] = int(row["seed"])
            row["instance_id"] = int(row["instance_id"])
            row["cl"] = float(row["cl"])
            row["n_resolves"] = int(row["n_resolves"])
            row["lb_wcp"] = float(row["lb_wcp"]) if row["lb_wcp"] else None
            row["lb_wocp"] = float(row["lb_wocp"])
            rows.append(row)
    return rows


@dataclass
class SweepResult:
    grid: list
    reports: list               # one Report per C, trained at that C
    robustness: np.ndarray      # [train C index, eval C index] mean test CL


def sweep_cost(config: ExperimentConfig, c_grid) -> SweepResult:
    """One full experiment per re-solving cost, plus the cross matrix of
    policies trained at one cost and evaluated at another."""
    c_grid = list(c_grid)
    if not c_grid:
        raise ValueError("cost grid must be nonempty")
    config.validate()
    contexts = build_contexts(config)
    reports = []
    for C in c_grid:
        cfg = replace(config, resolve_cost=C)
        reports.append(run_experiment(cfg, contexts=contexts))
    robust = np.zeros((len(c_grid), len(c_grid)))
    _, _, test_ctxs = contexts
    for i, rep in enumerate(reports):
        params = rep.poc_params
        for j, C_eval in enumerate(c_grid):
            ppo = replace(config.ppo, resolve_cost=C_eval)
            cls = [pol.run_online(ctx.dynamic, params, config.detector, ppo,
                                  config.scheme, seed=config.seed,
                                  ctx=ctx).cumulative_loss
                   for ctx in test_ctxs]
            robust[i, j] = float(np.mean(cls))
    return SweepResult(c_grid, reports, robust)
