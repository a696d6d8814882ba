"""Policy state construction from history, the incumbent solution and its duals.

Layout (length 3n + m + 4):

    [0]                incumbent age, t - acquisition time
    [1]                candidate observation count, t - iota
    [2]                observation count used by the incumbent
    [3]                relative time t / T
    [4 .. 4+n)         drift residual r = cbar + A^T lambda_old - mu_old
    [4+n .. 4+2n)      x_old
    [4+2n .. 4+3n)     mu_old
    [4+3n .. 4+3n+m)   lambda_old

cbar is the weighted mean of the selected history; r vanishes (to solver
tolerance) when cbar equals the objective the incumbent was solved with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .milp import MilpInstance, SolveOutcome

LAYOUT_VERSION = 1

# Indices maskable for the sample-size ablation.
SAMPLE_SIZE_FEATURES = (1, 2)


def feature_length(n_vars: int, n_cons: int) -> int:
    return 3 * n_vars + n_cons + 4


@dataclass
class IncumbentSolution:
    """A solve outcome plus the metadata needed to feature-ize it."""

    outcome: SolveOutcome
    acquired_at: int       # time step when the solution was obtained
    observations: int      # samples used to estimate the objective then
    objective_used: np.ndarray  # the (weighted mean) objective it was solved with


def build_state(instance: MilpInstance, history, iota: int,
                incumbent: IncumbentSolution, t: int, horizon: int,
                weights=None, mask_sample_size: bool = False) -> np.ndarray:
    """Assemble the state vector s_t; history is c_1..c_{t-1} (may be empty)."""
    n, m = instance.num_vars, instance.num_cons
    out = incumbent.outcome
    if out.x.shape != (n,) or out.duals.shape != (m,):
        raise DimensionMismatch("incumbent solution does not match the instance")
    history = np.asarray(history, dtype=float).reshape(-1, n) if len(history) else None
    if history is None:
        cbar = np.asarray(incumbent.objective_used, dtype=float)
    else:
        if weights is None:
            raise ValueError("weights required when history is nonempty")
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (history.shape[0],):
            raise DimensionMismatch("weights length must equal history length")
        cbar = weights @ history
    r = cbar + instance.con_matrix.T @ out.duals - out.reduced_costs
    s = np.empty(feature_length(n, m))
    s[0] = t - incumbent.acquired_at
    s[1] = (t - 1) - iota if history is not None else 0.0
    s[2] = incumbent.observations
    s[3] = t / horizon
    s[4:4 + n] = r
    s[4 + n:4 + 2 * n] = out.x
    s[4 + 2 * n:4 + 3 * n] = out.reduced_costs
    s[4 + 3 * n:] = out.duals
    if mask_sample_size:
        s[list(SAMPLE_SIZE_FEATURES)] = 0.0
    if not np.all(np.isfinite(s)):
        raise ValueError("state features contain non-finite entries")
    return s
