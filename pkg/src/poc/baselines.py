"""Comparison methods: ADWIN-5%, CARA-P, UPF, and the two lower bounds.

All baselines run through the same episode engine, detector, and solver as
the learned policy. UPF enumerates (solve-time, decision-time) pairs from
offline data and fits an elastic-net regressor of per-step optimization
loss; online it re-solves when the predicted benefit over a lookahead
window exceeds the re-solving cost.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .runtime import EpisodeContext, EpisodeLog, run_episode

UPF_LOOKAHEAD = 50  # decision window; avoids long-horizon error blow-up


# ---------------------------------------------------------------------------
# Elastic net (coordinate descent)


@dataclass
class ElasticNetModel:
    coef: np.ndarray
    intercept: float
    l1: float
    l2: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    dropped: np.ndarray  # zero-variance columns removed under standardization

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = (X - self.x_mean) / self.x_scale
        Z[:, self.dropped] = 0.0
        return Z @ self.coef + self.intercept


def elastic_net_objective(X, y, beta, intercept, l1, l2):
    r = y - X @ beta - intercept
    n = X.shape[0]
    return (0.5 * float(r @ r) / n + l1 * float(np.abs(beta).sum())
            + 0.5 * l2 * float(beta @ beta))


def fit_elastic_net(X, y, l1, l2, standardize=True, tol=1e-8,
                    max_sweeps=1000) -> ElasticNetModel:
    """Coordinate descent on 0.5*||y - Xb||^2/N + l1*||b||_1 + 0.5*l2*||b||^2."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if standardize:
        x_mean = X.mean(axis=0)
        x_scale = X.std(axis=0)
    else:
        x_mean = np.zeros(d)
        x_scale = np.ones(d)
    dropped = x_scale <= 1e-12
    if np.any(dropped) and standardize:
        warnings.warn("dropping zero-variance features from elastic net design")
    x_scale = np.where(dropped, 1.0, x_scale)
    Z = (X - x_mean) / x_scale
    Z[:, dropped] = 0.0
    y_mean = y.mean()
    yc = y - y_mean
    beta = np.zeros(d)
    col_sq = (Z * Z).sum(axis=0) / n
    resid = yc.copy()
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(d):
            if dropped[j]:
                continue
            rho = (Z[:, j] @ resid) / n + col_sq[j] * beta[j]
            new = np.sign(rho) * max(abs(rho) - l1, 0.0) / (col_sq[j] + l2)
            delta = new - beta[j]
            if delta != 0.0:
                resid -= delta * Z[:, j]
                beta[j] = new
                max_delta = max(max_delta, abs(delta))
        if max_delta <= tol:
            break
    intercept = y_mean
    return ElasticNetModel(beta, intercept, l1, l2, x_mean, x_scale, dropped)


# ---------------------------------------------------------------------------
# Re-solve baselines


def run_adwin5(ctx: EpisodeContext, threshold: float, C: float) -> EpisodeLog:
    """Re-solve on each genuinely new significant change point; forced initial
    re-solve at t=2."""
    state = {"prev_cp": None}

    def decide(t, incumbent):
        if t == 1:
            return False
        if t == 2:
            return True
        prev = state["prev_cp"] if state["prev_cp"] is not None else -10**9
        cp = ctx.significant_cp(t, prev, threshold)
        if cp is None:
            return False
        state["prev_cp"] = cp
        return True

    return run_episode(ctx, decide, C)


def run_cara_p(ctx: EpisodeContext, period: int, C: float) -> EpisodeLog:
    """Re-solve at t = 2 and every `period` steps thereafter."""
    if period < 1:
        raise ValueError("period must be >= 1")
    return run_episode(
        ctx, lambda t, inc: t >= 2 and (t - 2) % period == 0, C
    )


def upf_features(acq_time, t, drift):
    """[acquisition time, t, drift vector, staleness norm]."""
    drift = np.asarray(drift, dtype=float)
    return np.concatenate([[acq_time, t], drift,
                           [float(np.linalg.norm(drift))]])


def build_upf_training_set(contexts):
    """Enumerate (solve-time s, decision-time t) pairs, roughly T^2/2 rows per
    series: features of holding the solution solved at s, target the realized
    per-step optimization loss at t."""
    rows, targets = [], []
    for ctx in contexts:
        T = ctx.horizon
        for s in range(2, T + 1):
            inc = ctx.resolve_at(s)
            c_old = inc.objective_used
            for t in range(s, T + 1):
                drift = (ctx.cbar(t) if t > 1 else c_old) - c_old
                rows.append(upf_features(s, t, drift))
                targets.append(ctx.step_loss(t, inc.outcome.x))
    return np.asarray(rows), np.asarray(targets)


def run_upf(ctx: EpisodeContext, model: ElasticNetModel, C: float,
            lookahead: int = UPF_LOOKAHEAD) -> EpisodeLog:
    """Predict summed future loss under keep vs re-solve; re-solve when the
    predicted benefit exceeds C. Re-solving zeroes the staleness features
    (future objectives assumed to share the current distribution)."""
    n = ctx.instance.num_vars
    zero_drift = np.zeros(n)

    def decide(t, incumbent):
        if t == 1:
            return False
        if t == 2:
            return True
        c_old = incumbent.objective_used
        drift = ctx.cbar(t) - c_old
        end = min(ctx.horizon, t + lookahead)
        horizon_ts = np.arange(t, end + 1)
        keep = np.stack([upf_features(incumbent.acquired_at, tt, drift)
                         for tt in horizon_ts])
        resolve = np.stack([upf_features(t, tt, zero_drift)
                            for tt in horizon_ts])
        benefit = float(model.predict(keep).sum() - model.predict(resolve).sum())
        return benefit > C

    return run_episode(ctx, decide, C)


def compute_lower_bounds(ctx: EpisodeContext):
    """(LBwCP, LBwoCP): cost-free re-solve-every-step losses with true vs
    detected change points; LBwCP is None without true change points."""
    lb_wocp = run_episode(ctx, lambda t, inc: t >= 2, 0.0).cumulative_loss

    cps = ctx.dynamic.true_change_points
    if cps is None:
        return None, lb_wocp
    lb_wcp = 0.0
    for t in range(1, ctx.horizon + 1):
        # latest true change point at or before t (0-based segment start)
        start = 0
        for cp in cps:
            if cp <= t:
                start = cp - 1
        inc = ctx.resolve_from(start, t)
        lb_wcp += ctx.step_loss(t, inc.outcome.x)
    return lb_wcp, lb_wocp


def tune_hyperparam(kind: str, grid, val_contexts, C: float,
                    runner_kwargs=None):
    """Grid point minimizing mean validation cumulative loss; ties break to
    the smallest grid value."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty tuning grid")
    runner_kwargs = runner_kwargs or {}
    best, best_cl = None, float("inf")
    for g in grid:
        total = 0.0
        for ctx in val_contexts:
            if kind == "adwin5":
                log = run_adwin5(ctx, g, C)
            elif kind == "cara_p":
                log = run_cara_p(ctx, g, C)
            elif kind == "upf":
                l1, l2 = g
                model = runner_kwargs["fit"](l1, l2)
                log = run_upf(ctx, model, C)
            else:
                raise ValueError(f"unknown baseline kind {kind!r}")
            total += log.cumulative_loss
        mean_cl = total / len(val_contexts)
        if mean_cl < best_cl - 1e-12:
            best, best_cl = g, mean_cl
    return best, best_cl
