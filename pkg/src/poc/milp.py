"""LP relaxation solving with dual extraction and branch-and-bound MILP solving.

All problems are handled internally in the unified min form

    min c.x   s.t.   A x <= b  (or = b),   x >= 0,

with GE rows negated into LE rows and max objectives negated (the original
orientation is remembered so reported objective values keep their sign).
Duals follow the convention: lambda >= 0 for LE rows (EQ rows unrestricted),
mu >= 0 for the x >= 0 bounds, and stationarity c + A^T lambda - mu = 0.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, NodeLimitExceeded, NumericalFailure, ParseError

FEAS_TOL = 1e-8
INT_TOL = 1e-6
DUAL_TOL = 1e-6

LE, EQ, GE = "le", "eq", "ge"

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"


@dataclass
class MilpInstance:
    """Static MILP data: objective, constraint matrix, senses, integrality."""

    objective: np.ndarray
    con_matrix: np.ndarray
    rhs: np.ndarray
    row_sense: tuple
    integral: np.ndarray
    maximize: bool = False
    obj_sign: float = 1.0  # multiply min-form objective values by this to report

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.con_matrix = np.atleast_2d(np.asarray(self.con_matrix, dtype=float))
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.row_sense = tuple(self.row_sense)
        self.integral = np.asarray(self.integral, dtype=bool)

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    @property
    def num_cons(self) -> int:
        return self.rhs.shape[0]

    def validate(self):
        n, m = self.num_vars, self.num_cons
        if self.con_matrix.shape != (m, n):
            raise DimensionMismatch(
                f"con_matrix shape {self.con_matrix.shape} != ({m}, {n})"
            )
        if len(self.row_sense) != m:
            raise DimensionMismatch("row_sense length mismatch")
        if self.integral.shape != (n,):
            raise DimensionMismatch("integral length mismatch")
        if not all(s in (LE, EQ, GE) for s in self.row_sense):
            raise ValueError(f"unknown row sense in {self.row_sense}")
        for name, arr in (("objective", self.objective),
                          ("con_matrix", self.con_matrix), ("rhs", self.rhs)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        return self


@dataclass
class SolveOutcome:
    """Primal solution plus LP duals; duals refer to the min-form instance."""

    x: np.ndarray | None
    objective_value: float
    duals: np.ndarray | None
    reduced_costs: np.ndarray | None
    status: str
    nodes: int = 0


def normalize_to_min_form(instance: MilpInstance) -> MilpInstance:
    """Negate GE rows to LE and max objectives to min; solutions unchanged."""
    if (not instance.maximize) and all(s != GE for s in instance.row_sense):
        return instance
    A = instance.con_matrix.copy()
    b = instance.rhs.copy()
    senses = []
    for i, s in enumerate(instance.row_sense):
        if s == GE:
            A[i] = -A[i]
            b[i] = -b[i]
            senses.append(LE)
        else:
            senses.append(s)
    c = instance.objective.copy()
    sign = instance.obj_sign
    if instance.maximize:
        c = -c
        sign = -sign
    return replace(
        instance,
        objective=c,
        con_matrix=A,
        rhs=b,
        row_sense=tuple(senses),
        maximize=False,
        obj_sign=sign,
    )


def _simplex_min(c, A, b, senses, max_iter=20000):
    """Two-phase revised simplex for min c.x, A x {<=,=} b, x >= 0.

    Returns (status, x, y) where y are the equality-form row duals mapped back
    to the original row orientation (lambda_i = -y_i).
    """
    m, n = A.shape
    sign = np.ones(m)
    A = A.astype(float).copy()
    b = b.astype(float).copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    sign[neg] = -1.0

    # Columns: structural | slacks (LE rows) | artificials.
    slack_rows = [i for i, s in enumerate(senses) if s == LE]
    n_slack = len(slack_rows)
    art_rows = [i for i, s in enumerate(senses)
                if s == EQ or (s == LE and sign[i] < 0)]
    n_art = len(art_rows)
    ncols = n + n_slack + n_art
    T = np.zeros((m, ncols))
    T[:, :n] = A
    slack_col_of_row = {}
    for k, i in enumerate(slack_rows):
        T[i, n + k] = sign[i]
        slack_col_of_row[i] = n + k
    art_col_of_row = {}
    for k, i in enumerate(art_rows):
        T[i, n + n_slack + k] = 1.0
        art_col_of_row[i] = n + n_slack + k

    basis = np.empty(m, dtype=int)
    for i in range(m):
        if i in art_col_of_row:
            basis[i] = art_col_of_row[i]
        else:
            basis[i] = slack_col_of_row[i]

    art_mask = np.zeros(ncols, dtype=bool)
    art_mask[n + n_slack:] = True

    def refactor(basis):
        try:
            return np.linalg.inv(T[:, basis])
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis") from exc

    def run(cost, allowed, basis, iter_budget):
        """Primal simplex on the equality system; returns (status, basis).

        The basis inverse is kept explicitly and updated with eta pivots,
        refactorized periodically to control drift; the final solution is
        recomputed from a fresh factorization.
        """
        pivot_tol = 1e-9
        bland = False
        it = 0
        basis = basis.copy()
        in_basis = np.zeros(ncols, dtype=bool)
        in_basis[basis] = True
        Binv = refactor(basis)
        since_refactor = 0
        while True:
            it += 1
            if it > iter_budget:
                raise NumericalFailure("simplex iteration limit exceeded")
            if not bland and it > iter_budget // 2:
                bland = True  # anti-cycling fallback
            if since_refactor >= 40:
                Binv = refactor(basis)
                since_refactor = 0
            xB = Binv @ b
            y = cost[basis] @ Binv
            rc = cost - y @ T
            cand = np.where(allowed & ~in_basis & (rc < -pivot_tol))[0]
            if cand.size == 0:
                B = T[:, basis]
                xB = np.linalg.solve(B, b)
                y = np.linalg.solve(B.T, cost[basis])
                return OPTIMAL, basis, xB, y
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmin(rc[cand])])
            d = Binv @ T[:, j]
            pos = d > pivot_tol
            if not np.any(pos):
                return UNBOUNDED, basis, xB, y
            ratios = np.full(m, np.inf)
            ratios[pos] = xB[pos] / d[pos]
            rmin = ratios.min()
            ties = np.where(ratios <= rmin + 1e-12)[0]
            if bland:
                leave = int(ties[np.argmin(basis[ties])])
            else:
                leave = int(ties[0])
            if abs(d[leave]) < 1e-11:
                Binv = refactor(basis)
                since_refactor = 0
                d = Binv @ T[:, j]
                if abs(d[leave]) < 1e-11:
                    raise NumericalFailure("degenerate pivot")
            in_basis[basis[leave]] = False
            in_basis[j] = True
            basis[leave] = j
            # eta update of the inverse for the pivot row/column
            pivot_row = Binv[leave] / d[leave]
            Binv = Binv - np.outer(d, pivot_row)
            Binv[leave] = pivot_row
            since_refactor += 1
        # unreachable

    # Phase 1: drive artificials to zero.
    if n_art:
        cost1 = np.zeros(ncols)
        cost1[art_mask] = 1.0
        allowed1 = np.ones(ncols, dtype=bool)
        status, basis, xB, _ = run(cost1, allowed1, basis, max_iter)
        if status != OPTIMAL or float(cost1[basis] @ xB) > 1e-7:
            return INFEASIBLE, None, None
        # Pivot basic artificials out where possible.
        for i in range(m):
            if art_mask[basis[i]]:
                Binv = np.linalg.inv(T[:, basis])
                row = Binv[i] @ T[:, :n + n_slack]
                for j in np.where(np.abs(row) > 1e-7)[0]:
                    if j not in basis:
                        basis[i] = int(j)
                        break
                # else: redundant row, artificial stays basic at zero

    cost2 = np.zeros(ncols)
    cost2[:n] = c
    allowed2 = ~art_mask
    status, basis, xB, y = run(cost2, allowed2, basis, max_iter)
    if status == UNBOUNDED:
        return UNBOUNDED, None, None
    x = np.zeros(ncols)
    x[basis] = xB
    return OPTIMAL, x[:n], -y * sign


def solve_lp_relaxation(instance: MilpInstance) -> SolveOutcome:
    """Solve the LP relaxation exactly, returning primal x and duals (lambda, mu)."""
    inst = normalize_to_min_form(instance.validate())
    c, A, b = inst.objective, inst.con_matrix, inst.rhs
    status, x, lam = _simplex_min(c, A, b, inst.row_sense)
    if status != OPTIMAL:
        return SolveOutcome(None, math.nan, None, None, status)
    # Clamp pivot noise on LE-row duals, then derive mu from stationarity.
    lam = lam.copy()
    for i, s in enumerate(inst.row_sense):
        if s == LE:
            lam[i] = max(lam[i], 0.0)
    mu = c + A.T @ lam
    mu = np.maximum(mu, 0.0)
    x = np.where(np.abs(x) < 1e-12, 0.0, x)
    obj = inst.obj_sign * float(c @ x)
    return SolveOutcome(x, obj, lam, mu, OPTIMAL)


def _with_bounds(inst: MilpInstance, bounds) -> MilpInstance:
    """Append branching bounds (var, lo, hi) as explicit LE rows."""
    rows, rhs, senses = [], [], []
    n = inst.num_vars
    for j, lo, hi in bounds:
        if hi is not None:
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rhs.append(float(hi))
            senses.append(LE)
        if lo is not None and lo > 0:
            e = np.zeros(n)
            e[j] = -1.0
            rows.append(e)
            rhs.append(-float(lo))
            senses.append(LE)
    if not rows:
        return inst
    return replace(
        inst,
        con_matrix=np.vstack([inst.con_matrix] + rows),
        rhs=np.concatenate([inst.rhs, rhs]),
        row_sense=inst.row_sense + tuple(senses),
    )


def solve_milp(instance: MilpInstance, node_limit: int = 100000) -> SolveOutcome:
    """Branch-and-bound: best-bound node order, most-fractional branching.

    Duals and reduced costs in the outcome come from the root LP relaxation
    (they are consumed downstream only as policy features).
    """
    inst = normalize_to_min_form(instance.validate())
    root = solve_lp_relaxation(inst)
    if root.status != OPTIMAL:
        return root
    int_idx = np.where(inst.integral)[0]
    if int_idx.size == 0:
        return root

    c = inst.objective
    best_x = None
    best_obj = math.inf  # min-form objective
    counter = 0
    # pure-integer problems with integral objectives have integral optima,
    # so fractional LP bounds can be rounded up before pruning
    integral_obj = bool(np.all(inst.integral)
                        and np.allclose(c, np.round(c), atol=1e-9))

    def tighten(bound):
        return math.ceil(bound - 1e-6) if integral_obj else bound

    # heap entries: (parent LP bound, tiebreak counter, bounds dict); the
    # negated counter makes equal-bound ties depth-first so incumbents
    # improve quickly on degenerate objectives
    heap = [(tighten(inst.obj_sign * root.objective_value), -counter, {})]
    nodes = 0
    while heap:
        bound, _, nb = heapq.heappop(heap)
        if bound >= best_obj - 1e-9:
            break  # best-bound order: everything left is pruned
        nodes += 1
        if nodes > node_limit:
            raise NodeLimitExceeded(f"exceeded {node_limit} nodes")
        out = solve_lp_relaxation(_with_bounds(inst, [(j, lo, hi) for j, (lo, hi) in nb.items()]))
        if out.status != OPTIMAL:
            continue
        obj = tighten(inst.obj_sign * out.objective_value)
        if obj >= best_obj - 1e-9:
            continue
        x = out.x
        # rounding heuristic: a ceil incumbent tightens pruning early on
        # covering-style rows where raising variables keeps feasibility
        cand = x.copy()
        cand[int_idx] = np.ceil(cand[int_idx] - INT_TOL)
        if check_feasible(inst, cand):
            cand_obj = float(c @ cand)
            if cand_obj < best_obj - 1e-9:
                best_obj = cand_obj
                best_x = cand
        fracs = np.abs(x[int_idx] - np.round(x[int_idx]))
        if np.all(fracs <= INT_TOL):
            cand = x.copy()
            cand[int_idx] = np.round(cand[int_idx])
            if check_feasible(inst, cand):
                x = cand  # snap to exact integers when it stays feasible
            cand_obj = float(c @ x)
            if cand_obj < best_obj - 1e-9:
                best_obj = cand_obj
                best_x = x
            continue
        j = int(int_idx[np.argmax(np.minimum(fracs, 1.0 - fracs))])
        lo_j, hi_j = nb.get(j, (None, None))
        floor_v = math.floor(x[j] + INT_TOL)
        for new_lo, new_hi in (((lo_j, float(floor_v))), ((float(floor_v + 1), hi_j))):
            child = dict(nb)
            child[j] = (new_lo, new_hi)
            if new_lo is not None and new_hi is not None and new_lo > new_hi:
                continue
            counter += 1
            heapq.heappush(heap, (obj, -counter, child))

    if best_x is None:
        return SolveOutcome(None, math.nan, None, None, INFEASIBLE, nodes)
    return SolveOutcome(
        best_x, inst.obj_sign * best_obj, root.duals, root.reduced_costs,
        OPTIMAL, nodes,
    )


def check_feasible(instance: MilpInstance, x) -> bool:
    """True iff x satisfies all rows, nonnegativity, and integrality tolerances."""
    x = np.asarray(x, dtype=float)
    if x.shape != (instance.num_vars,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({instance.num_vars},)")
    inst = normalize_to_min_form(instance)
    if np.any(x < -1e-9):
        return False
    res = inst.con_matrix @ x
    for i, s in enumerate(inst.row_sense):
        if s == LE and res[i] > inst.rhs[i] + FEAS_TOL:
            return False
        if s == EQ and abs(res[i] - inst.rhs[i]) > FEAS_TOL:
            return False
    frac = np.abs(x[inst.integral] - np.round(x[inst.integral]))
    return bool(np.all(frac <= INT_TOL))


def optimization_loss(c_t, x, x_star) -> float:
    """Per-step regret c_t.(x - x_star), clamped at zero (min orientation)."""
    c_t = np.asarray(c_t, dtype=float)
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if not (c_t.shape == x.shape == x_star.shape):
        raise DimensionMismatch("c_t, x, x_star must share one shape")
    return max(float(c_t @ x - c_t @ x_star), 0.0)


def write_instance(instance: MilpInstance, path):
    """Serialize to the on-disk instance format (JSON with fixed key names)."""
    inst = instance.validate()
    doc = {
        "num_vars": inst.num_vars,
        "num_cons": inst.num_cons,
        "objective": inst.objective.tolist(),
        "rows": [
            {
                "coeffs": inst.con_matrix[i].tolist(),
                "sense": inst.row_sense[i],
                "rhs": float(inst.rhs[i]),
            }
            for i in range(inst.num_cons)
        ],
        "integral": inst.integral.tolist(),
        "maximize": bool(inst.maximize),
        "obj_sign": float(inst.obj_sign),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_instance(path) -> MilpInstance:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=exc.lineno) from exc
    try:
        rows = doc["rows"]
        inst = MilpInstance(
            objective=np.asarray(doc["objective"], dtype=float),
            con_matrix=np.asarray([r["coeffs"] for r in rows], dtype=float),
            rhs=np.asarray([r["rhs"] for r in rows], dtype=float),
            row_sense=tuple(r["sense"] for r in rows),
            integral=np.asarray(doc["integral"], dtype=bool),
            maximize=bool(doc.get("maximize", False)),
            obj_sign=float(doc.get("obj_sign", 1.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad instance file: {exc}") from exc
    if inst.num_vars != doc["num_vars"] or inst.num_cons != doc["num_cons"]:
        raise ParseError("declared num_vars/num_cons do not match arrays")
    return inst.validate()
