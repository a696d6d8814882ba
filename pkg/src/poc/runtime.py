"""Shared episode machinery: per-instance caches and the re-solve loop.

Every method (learned policy, baselines, lower bounds) runs through the same
data-selection, solving, and accounting code paths so comparisons are fair.
Change-point, weighted-mean, solver, and clairvoyant results depend only on
the objective stream, never on the acting policy, so they are cached per
dynamic instance and shared across methods and training epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cpd, milp
from .cpd import DetectorConfig, SelectionScheme
from .features import IncumbentSolution, build_state
from .generators import DynamicInstance


@dataclass
class StepRecord:
    t: int
    resolved: bool
    loss: float
    incumbent_age: int
    iota: int


@dataclass
class EpisodeLog:
    """Per-step trace of one episode plus the cumulative-loss decomposition."""

    steps: list = field(default_factory=list)
    resolve_times: list = field(default_factory=list)
    resolve_cost: float = 0.0
    cumulative_loss: float = 0.0

    @property
    def n_resolves(self) -> int:
        return len(self.resolve_times)

    @property
    def optimization_loss(self) -> float:
        return sum(s.loss for s in self.steps)

    def finalize(self, C: float):
        self.resolve_cost = C * self.n_resolves
        self.cumulative_loss = self.optimization_loss + self.resolve_cost
        return self


def cumulative_loss(log: EpisodeLog, C: float) -> float:
    """Sum of per-step optimization losses plus C per re-solve."""
    return sum(s.loss for s in log.steps) + C * log.n_resolves


class EpisodeContext:
    """Policy-independent caches for one dynamic instance."""

    def __init__(self, dynamic: DynamicInstance, detector: DetectorConfig,
                 scheme: SelectionScheme | None = None,
                 node_limit: int = 100000, relax_integrality: bool = False):
        self.dynamic = dynamic
        self.detector = detector.validate()
        self.scheme = (scheme or SelectionScheme()).validate()
        self.node_limit = node_limit
        self.instance = dynamic.instance
        if relax_integrality:
            from dataclasses import replace
            self.instance = replace(
                self.instance, integral=np.zeros(self.instance.num_vars, dtype=bool)
            )
        self._iota = {}
        self._sig_cp = {}
        self._weights = {}
        self._cbar = {}
        self._solves = {}
        self._clair = {}
        self._default = None

    @property
    def horizon(self) -> int:
        return self.dynamic.horizon

    def _solve(self, objective) -> milp.SolveOutcome:
        from dataclasses import replace
        inst = replace(self.instance, objective=np.asarray(objective, dtype=float))
        return milp.solve_milp(inst, node_limit=self.node_limit)

    # -- data selection ----------------------------------------------------

    def iota(self, t: int) -> int:
        """Start of the latest stationary segment in c_1..c_{t-1} (0-based)."""
        if t <= 1:
            return 0
        if t not in self._iota:
            if self.scheme.scheme == "CPD":
                self._iota[t] = cpd.latest_change_point(
                    self.dynamic.objectives[: t - 1], self.detector
                )
            elif self.scheme.scheme == "EMA":
                self._iota[t] = 0
            else:
                self._iota[t] = max(0, (t - 1) - self.scheme.window)
        return self._iota[t]

    def significant_cp(self, t: int, prev_cp: int, threshold: float):
        """Detector result for the ADWIN-style trigger, cached on the prefix."""
        if t <= 1:
            return None
        if t not in self._sig_cp:
            self._sig_cp[t] = cpd.detect_significant_change(
                self.dynamic.objectives[: t - 1], self.detector,
                prev_cp=-10**9, distance_threshold=0,
            )
        cp = self._sig_cp[t]
        if cp is None or abs(cp - prev_cp) <= threshold:
            return None
        return cp

    def weights(self, t: int) -> np.ndarray:
        if t not in self._weights:
            self._weights[t] = cpd.select_estimation_weights(
                self.scheme, t - 1, self.iota(t)
            )
        return self._weights[t]

    def cbar(self, t: int) -> np.ndarray:
        if t not in self._cbar:
            self._cbar[t] = self.weights(t) @ self.dynamic.objectives[: t - 1]
        return self._cbar[t]

    # -- solving -----------------------------------------------------------

    def default_solution(self) -> IncumbentSolution:
        """Incumbent at t=1: solved with an all-ones objective (original
        orientation)."""
        if self._default is None:
            c = self.instance.obj_sign * np.ones(self.instance.num_vars)
            out = self._solve(c)
            if out.status != milp.OPTIMAL:
                raise RuntimeError(f"default solve failed: {out.status}")
            self._default = IncumbentSolution(out, acquired_at=1,
                                              observations=0, objective_used=c)
        return self._default

    def resolve_at(self, t: int) -> IncumbentSolution:
        """Solve with the weighted-mean objective available at time t."""
        if t <= 1:
            return self.default_solution()
        key = (self.iota(t), t)
        if key not in self._solves:
            cbar = self.cbar(t)
            out = self._solve(cbar)
            if out.status != milp.OPTIMAL:
                raise RuntimeError(f"re-solve at t={t} failed: {out.status}")
            self._solves[key] = IncumbentSolution(
                out, acquired_at=t, observations=(t - 1) - self.iota(t),
                objective_used=cbar,
            )
        return self._solves[key]

    def resolve_from(self, start: int, t: int) -> IncumbentSolution:
        """Solve with the plain mean of c_{start+1}..c_{t-1} (0-based start);
        used by the true-change-point lower bound."""
        key = ("from", start, t)
        if t <= 1 or start >= t - 1:
            return self.default_solution()
        if key not in self._solves:
            cbar = self.dynamic.objectives[start: t - 1].mean(axis=0)
            out = self._solve(cbar)
            if out.status != milp.OPTIMAL:
                raise RuntimeError(f"re-solve at t={t} failed: {out.status}")
            self._solves[key] = IncumbentSolution(out, t, (t - 1) - start, cbar)
        return self._solves[key]

    def clairvoyant(self, t: int) -> np.ndarray:
        """Optimal solution for the realized objective c_t (hindsight)."""
        if t not in self._clair:
            out = self._solve(self.dynamic.objectives[t - 1])
            if out.status != milp.OPTIMAL:
                raise RuntimeError(f"clairvoyant solve at t={t} failed: {out.status}")
            self._clair[t] = out.x
        return self._clair[t]

    def step_loss(self, t: int, x: np.ndarray) -> float:
        c_t = self.dynamic.objectives[t - 1]
        return milp.optimization_loss(c_t, x, self.clairvoyant(t))

    # -- features ----------------------------------------------------------

    def state(self, t: int, incumbent: IncumbentSolution,
              mask_sample_size: bool = False) -> np.ndarray:
        history = self.dynamic.objectives[: t - 1]
        weights = self.weights(t) if t > 1 else None
        return build_state(self.instance, history, self.iota(t), incumbent,
                           t, self.horizon, weights,
                           mask_sample_size=mask_sample_size)


def run_episode(ctx: EpisodeContext, decide, C: float,
                on_step=None) -> EpisodeLog:
    """Run one episode; `decide(t, incumbent)` returns the re-solve action.

    At t=1 there are no observations: a re-solve action still costs C but
    reproduces the default solution. `on_step(t, incumbent, resolved, loss)`
    is invoked after each step when given.
    """
    log = EpisodeLog()
    incumbent = ctx.default_solution()
    for t in range(1, ctx.horizon + 1):
        resolved = bool(decide(t, incumbent))
        if resolved:
            incumbent = ctx.resolve_at(t)
            log.resolve_times.append(t)
        loss = ctx.step_loss(t, incumbent.outcome.x)
        log.steps.append(StepRecord(t, resolved, loss,
                                    t - incumbent.acquired_at, ctx.iota(t)))
        if on_step is not None:
            on_step(t, incumbent, resolved, loss)
    return log.finalize(C)
