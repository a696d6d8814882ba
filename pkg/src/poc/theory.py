"""Closed-form re-solve schedule bounds and small-scale verification oracles.

The analytical side: a recurrence generating lower bounds on successive
optimal re-solve times, and a piecewise bound on the total number of
re-solves with three regimes in the effective cost rho*C. The empirical
side: a brute-force/DP oracle that computes exact optimal schedules for a
synthetic loss model where expected per-step loss decays as u * n^{-alpha}
in the number n of observations used at the last solve, plus a Monte-Carlo
check that the restart-on-change value and the (1-rho)-discounted value
agree and rank policies identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import DegenerateParams, HorizonTooLarge

ENUM_MAX_T = 16
DP_MAX_T = 200


@dataclass
class TheoryParams:
    L: float
    U: float
    alpha: float
    rho: float
    C: float
    T: int
    N: int = 1

    def validate(self):
        if not 0 < self.L <= self.U:
            raise DegenerateParams("need 0 < L <= U")
        if self.alpha <= 0:
            raise DegenerateParams("need alpha > 0")
        if not 0 <= self.rho <= 1:
            raise DegenerateParams("need rho in [0, 1]")
        if self.C < 0:
            raise DegenerateParams("need C >= 0")
        if self.T < 1 or self.N < 1:
            raise DegenerateParams("need T >= 1 and N >= 1")
        return self


def lower_bound_schedule(params: TheoryParams) -> list:
    """Lower bounds on successive optimal re-solve times.

    Starts (1, 2, ...); each next term is 1 + [L / (U (t-1)^(-a) - rho C)]^(1/a).
    Stops when the denominator is nonpositive (no further re-solve is ever
    motivated), when the next term stops increasing (the recurrence is only
    informative for rho C > U - L), or past the horizon.
    """
    params.validate()
    sched = [1.0]
    t = 2.0
    while t <= params.T:
        sched.append(t)
        nxt = next_lower_bound(params, t)
        if nxt is None or nxt <= t:
            break
        t = nxt
    return sched


def next_lower_bound(params: TheoryParams, t: float):
    """One application of the recurrence; None when the effective cost
    rho*C already dominates the remaining loss decay."""
    params.validate()
    if t <= 1:
        raise ValueError("recurrence needs t > 1")
    denom = params.U * (t - 1.0) ** (-params.alpha) - params.rho * params.C
    if denom <= 0:
        return None
    return 1.0 + (params.L / denom) ** (1.0 / params.alpha)


def max_resolves(params: TheoryParams) -> float:
    """Upper bound on the number of re-solves; three regimes in rho*C.

    rho*C <= U - L gives the trivial horizon bound T; rho*C >= U gives 1
    (a single initial re-solve suffices); in between the log-ratio formula
    applies. When U = L the log form is 0/0 and the limit
    1 + (1 - rho*C/U) * L / (rho*C) is used.
    """
    params.validate()
    rc = params.rho * params.C
    if rc <= params.U - params.L:
        return float(params.T)
    if rc >= params.U:
        return 1.0
    if params.U == params.L:
        return min(float(params.T), 1.0 + (1.0 - rc / params.U) * params.L / rc)
    bound = math.log(rc / (rc + params.L - params.U)) / math.log(params.U / params.L)
    return min(float(params.T), bound)


def max_resolves_n_periods(params: TheoryParams) -> float:
    """Bound for a stream with N distinct stationary periods: N per-period
    bounds, each over the single-period parameters."""
    params.validate()
    single = TheoryParams(params.L, params.U, params.alpha, params.rho,
                          params.C, params.T, 1)
    return params.N * max_resolves(single)


def phase_label(params: TheoryParams) -> str:
    rc = params.rho * params.C
    if rc <= params.U - params.L:
        return "horizon"
    if rc >= params.U:
        return "single-resolve"
    return "log-ratio"


# ---------------------------------------------------------------------------
# Synthetic loss model and exact schedule oracles


@dataclass
class DecayLossModel:
    """Expected per-step loss u * n^{-alpha} after a solve that used n
    observations; u drawn once from [L, U] so the decay is monotone in n.
    Before any re-solve the default solution incurs `default_loss` (> U)."""

    alpha: float
    u: np.ndarray          # constant per n; kept as an array for extensions
    default_loss: float

    @classmethod
    def draw(cls, params: TheoryParams, seed) -> "DecayLossModel":
        rng = np.random.default_rng(seed)
        u = np.full(max(params.T, 2), rng.uniform(params.L, params.U))
        default = 2.0 * params.U + params.C
        return cls(params.alpha, u, default)

    def loss(self, n_samples: int) -> float:
        if n_samples <= 0:
            return self.default_loss
        return float(self.u[n_samples - 1]) * n_samples ** (-self.alpha)


def _schedule_value(model: DecayLossModel, schedule, T, C, gamma):
    """Discounted cost of a fixed re-solve schedule; the discount gamma=1-rho
    conditions on the environment not having changed. The re-solve cost at
    step t accrues before the survival draw, the loss after it."""
    resolve = set(schedule)
    value = 0.0
    n = 0
    for t in range(1, T + 1):
        disc = gamma ** (t - 1)
        if t in resolve:
            value += disc * C
            n = t - 1
        value += disc * gamma * model.loss(n)
    return value


def dp_oracle_schedule(model: DecayLossModel, T: int, C: float, rho: float):
    """Exact optimal re-solve schedule for the decay loss model.

    Exhaustive enumeration of all 2^(T-1) schedules for T <= 16; exact DP
    over (step, observations-at-last-solve) states for T <= 200. Both agree
    where both run.
    """
    if T <= ENUM_MAX_T:
        return _enumerate_schedules(model, T, C, rho)
    if T <= DP_MAX_T:
        return _dp_schedules(model, T, C, rho)
    raise HorizonTooLarge(f"T = {T} exceeds the DP limit {DP_MAX_T}")


def _enumerate_schedules(model, T, C, rho):
    gamma = 1.0 - rho
    best_sched, best_val = (), _schedule_value(model, (), T, C, gamma)
    for bits in product((False, True), repeat=T - 1):
        sched = tuple(t for t, b in zip(range(2, T + 1), bits) if b)
        if not sched:
            continue
        val = _schedule_value(model, sched, T, C, gamma)
        if val < best_val - 1e-12:
            best_sched, best_val = sched, val
    return list(best_sched), best_val


def _dp_schedules(model, T, C, rho):
    gamma = 1.0 - rho
    cache = {}

    def go(t, n):
        # min cost over steps t..T given the last solve used n observations
        if t > T:
            return 0.0, False
        if (t, n) not in cache:
            disc = gamma ** (t - 1)
            keep = disc * gamma * model.loss(n) + go(t + 1, n)[0]
            if t >= 2:
                resolve = (disc * (C + gamma * model.loss(t - 1))
                           + go(t + 1, t - 1)[0])
            else:
                resolve = math.inf
            cache[(t, n)] = (min(keep, resolve), resolve < keep - 1e-12)
        return cache[(t, n)]

    import sys
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10 * T + 100))
    try:
        value = go(1, 0)[0]
    finally:
        sys.setrecursionlimit(old)
    sched = []
    t, n = 1, 0
    while t <= T:
        if go(t, n)[1]:
            sched.append(t)
            n = t - 1
        t += 1
    return sched, value


# ---------------------------------------------------------------------------
# Restart-vs-discount equivalence


def _episode_costs(model, schedule, T):
    """Per-step (resolve_cost, loss) sequences for a fixed schedule."""
    resolve = set(schedule)
    costs, losses = np.zeros(T), np.zeros(T)
    n = 0
    for t in range(1, T + 1):
        if t in resolve:
            costs[t - 1] = 1.0
            n = t - 1
        losses[t - 1] = model.loss(n)
    return costs, losses


def discount_equivalence_gap(params: TheoryParams, schedules,
                             n_episodes: int = 10000, seed=0,
                             n_batches: int = 20):
    """Compare two value formulations for fixed schedules.

    (a) restart form: accumulate C per re-solve while the environment has
    not changed and the per-step loss while it survives the change draw;
    a change (probability rho per step) ends the episode.
    (b) discounted form: deterministic sum of (1-rho)^(t-1) * (C*xi_t +
    (1-rho)*loss_t) over the full horizon.

    Returns (disagreement_rate, details): the rate, over batches, at which
    the schedule ranked best under (a) differs from the one under (b), plus
    per-schedule means and standard errors.
    """
    params.validate()
    T, C, rho = params.T, params.C, params.rho
    gamma = 1.0 - rho
    rng = np.random.default_rng(seed)
    per = [_episode_costs(DecayLossModel.draw(params, seed), s, T)
           for s in schedules]
    disc = gamma ** np.arange(T)
    value_b = np.array([float(disc @ (C * c + gamma * l)) for c, l in per])

    # Restart-form samples; tau is the first change time (inf when rho = 0).
    batch = max(1, n_episodes // n_batches)
    batch_means = np.empty((n_batches, len(schedules)))
    for b in range(n_batches):
        if rho > 0:
            tau = rng.geometric(rho, size=batch)
        else:
            tau = np.full(batch, T + 1)
        acc = np.zeros(len(schedules))
        for i, (c, l) in enumerate(per):
            cost_prefix = np.concatenate([[0.0], np.cumsum(C * c)])
            loss_prefix = np.concatenate([[0.0], np.cumsum(l)])
            steps_alive = np.minimum(tau, T)       # acts at t <= tau
            steps_loss = np.minimum(tau - 1, T)    # loss accrues at t < tau
            acc[i] = (cost_prefix[steps_alive].mean()
                      + loss_prefix[steps_loss].mean())
        batch_means[b] = acc
    value_a = batch_means.mean(axis=0)
    se_a = batch_means.std(axis=0, ddof=1) / math.sqrt(n_batches)

    disagree = np.mean(np.argmin(batch_means, axis=1) != np.argmin(value_b))
    details = {"value_restart": value_a, "se_restart": se_a,
               "value_discounted": value_b}
    return float(disagree), details


# ---------------------------------------------------------------------------
# Decay-rate check on bounded random linear programs


def mean_solution_loss(n_vars, n_samples, trials, seed, noise=1.0):
    """Mean optimality gap of the sample-mean solution on box-constrained
    random LPs, averaged over trials."""
    from . import milp

    rng = np.random.default_rng(seed)
    A = np.eye(n_vars)
    b = np.ones(n_vars)
    senses = [milp.LE] * n_vars
    total = 0.0
    for _ in range(trials):
        c_true = rng.uniform(-1.0, 1.0, size=n_vars)
        samples = c_true + noise * rng.standard_normal((n_samples, n_vars))
        c_hat = samples.mean(axis=0)
        inst_hat = milp.MilpInstance(c_hat, A, b, senses,
                                     np.zeros(n_vars, dtype=bool))
        inst_true = milp.MilpInstance(c_true, A, b, senses,
                                      np.zeros(n_vars, dtype=bool))
        x_hat = milp.solve_lp_relaxation(inst_hat).x
        x_star = milp.solve_lp_relaxation(inst_true).x
        total += milp.optimization_loss(c_true, x_hat, x_star)
    return total / trials


def loss_decay_slope(n_values, trials=40, seed=0, n_vars=5):
    """Log-log regression slope of the sample-mean-solution loss against the
    sample count."""
    losses = [mean_solution_loss(n_vars, n, trials, [seed, n]) for n in n_values]
    logs_n = np.log(np.asarray(n_values, dtype=float))
    logs_l = np.log(np.maximum(losses, 1e-300))
    slope = np.polyfit(logs_n, logs_l, 1)[0]
    return float(slope), losses
