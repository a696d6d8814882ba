"""Synthetic dynamic-MILP families and objective streams with change points.

Families: set cover (SC), matching (Mat), set packing (SP), facility
location (FL), general covering MILP (GMILP), combinatorial auction (CA).
All generated instances are returned in unified min form; the objective
stream is stored in the same orientation so downstream loss arithmetic is
uniformly "smaller is better".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import milp
from .errors import DimensionMismatch, GenerationFailed, ParseError
from .milp import MilpInstance, normalize_to_min_form

FAMILIES = ("SC", "Mat", "SP", "FL", "GMILP", "CA")

MIN_PERIOD_LEN = 10  # FixedCount change points keep at least this gap


@dataclass
class StreamSpec:
    """How to synthesize the objective time series c_1..c_T."""

    horizon: int
    change_mode: str = "fixed"  # "fixed" (k points) or "prob" (rho per step)
    n_changes: int = 3
    change_prob: float = 0.0
    mean_range: tuple = (1.0, 10.0)
    noise_sigma: float = 0.5
    clamp_floor: float = 0.01

    def validate(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.change_prob <= 1.0:
            raise ValueError("change_prob must lie in [0, 1]")
        lo, hi = self.mean_range
        if lo > hi:
            raise ValueError("mean_range must satisfy lo <= hi")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.change_mode not in ("fixed", "prob"):
            raise ValueError(f"unknown change_mode {self.change_mode!r}")
        return self


@dataclass
class DynamicInstance:
    """A fixed constraint set plus a stream of objectives with change points."""

    instance: MilpInstance
    objectives: np.ndarray  # (T, n), min-form orientation
    true_change_points: list | None
    family: str = "Ingested"

    def __post_init__(self):
        self.objectives = np.asarray(self.objectives, dtype=float)
        if self.objectives.ndim != 2 or self.objectives.shape[1] != self.instance.num_vars:
            raise DimensionMismatch(
                f"objectives shape {self.objectives.shape} does not match "
                f"n={self.instance.num_vars}"
            )
        if not np.all(np.isfinite(self.objectives)):
            raise ValueError("objectives contain non-finite entries")
        if self.true_change_points is not None:
            cps = sorted(int(t) for t in self.true_change_points)
            if any(t <= 1 or t > self.horizon for t in cps):
                raise ValueError("change points must lie strictly inside (1, T]")
            self.true_change_points = cps

    @property
    def horizon(self) -> int:
        return self.objectives.shape[0]


def gen_instance(family: str, n_vars: int, n_cons: int, seed) -> MilpInstance:
    """Generate one feasible instance of the given family, in min form."""
    rng = np.random.default_rng(seed)
    canon = {f.upper(): f for f in FAMILIES}
    family = canon.get(str(family).upper(), family)
    if family == "SC":
        return _gen_cover(rng, n_vars, n_cons, extra_density=0.05)
    if family == "FL":
        return _gen_cover(rng, n_vars, n_cons, extra_density=0.3)
    if family == "Mat":
        return _gen_matching(rng, n_vars, n_cons)
    if family == "SP":
        return _gen_packing(rng, n_vars, n_cons)
    if family == "GMILP":
        return _gen_gmilp(rng, n_vars, n_cons)
    if family == "CA":
        return _gen_auction(rng, n_cons)
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def _gen_cover(rng, n_vars, n_cons, extra_density):
    # Each element covered by >= 1 set, then sprinkle extra random entries.
    A = np.zeros((n_cons, n_vars))
    for i in range(n_cons):
        A[i, rng.integers(0, n_vars)] = 1.0
    A[rng.random((n_cons, n_vars)) < extra_density] = 1.0
    b = np.ones(n_cons)
    c = rng.uniform(1, 10, size=n_vars)
    inst = MilpInstance(c, A, b, ("ge",) * n_cons, [True] * n_vars)
    return normalize_to_min_form(inst)


def _gen_matching(rng, n_edges, n_vertices):
    if n_vertices < 2:
        raise ValueError("matching needs at least 2 vertices")
    A = np.zeros((n_vertices, n_edges))
    for j in range(n_edges):
        u, v = rng.choice(n_vertices, size=2, replace=False)
        A[u, j] = 1.0
        A[v, j] = 1.0
    inst = MilpInstance(
        rng.uniform(1, 10, size=n_edges), A, np.ones(n_vertices),
        ("le",) * n_vertices, [True] * n_edges, maximize=True,
    )
    return normalize_to_min_form(inst)


def _gen_packing(rng, n_sets, n_elements):
    A = np.zeros((n_elements, n_sets))
    for j in range(n_sets):
        size = rng.integers(1, max(2, n_elements // 2))
        members = rng.choice(n_elements, size=size, replace=False)
        A[members, j] = 1.0
    inst = MilpInstance(
        rng.uniform(1, 10, size=n_sets), A, np.ones(n_elements),
        ("le",) * n_elements, [True] * n_sets, maximize=True,
    )
    return normalize_to_min_form(inst)


def _gen_gmilp(rng, n_vars, n_cons, max_attempts=50):
    for _ in range(max_attempts):
        A = rng.uniform(0, 1, size=(n_cons, n_vars))
        b = rng.uniform(1, 5, size=n_cons)
        c = rng.uniform(1, 10, size=n_vars)
        inst = normalize_to_min_form(
            MilpInstance(c, A, b, ("ge",) * n_cons, [True] * n_vars)
        )
        try:
            if milp.solve_milp(inst).status == milp.OPTIMAL:
                return inst
        except Exception:
            continue
    raise GenerationFailed("no feasible GMILP instance within attempt budget")


def _gen_auction(rng, n_items):
    # One column per nonempty bundle of items; b = 1 (each item sold once).
    n_bundles = 2 ** n_items - 1
    A = np.zeros((n_items, n_bundles))
    for j in range(n_bundles):
        mask = j + 1
        for i in range(n_items):
            if mask >> i & 1:
                A[i, j] = 1.0
    base = rng.uniform(1, 10, size=n_items)
    bids = A.T @ base * rng.uniform(0.8, 1.2, size=n_bundles)
    inst = MilpInstance(
        bids, A, np.ones(n_items), ("le",) * n_items,
        [True] * n_bundles, maximize=True,
    )
    return normalize_to_min_form(inst)


def _draw_change_points(rng, spec):
    T = spec.horizon
    if spec.change_mode == "prob":
        return [t for t in range(2, T + 1) if rng.random() < spec.change_prob]
    k = spec.n_changes
    if k == 0:
        return []
    candidates = np.arange(2, T + 1)
    for _ in range(200):
        pts = np.sort(rng.choice(candidates, size=k, replace=False))
        gaps = np.diff(np.concatenate([[1], pts, [T + 1]]))
        if np.all(gaps >= min(MIN_PERIOD_LEN, max(1, T // (k + 1)))):
            return pts.tolist()
    return pts.tolist()  # degenerate spec; accept the last draw


def gen_objective_stream(instance: MilpInstance, spec: StreamSpec, seed) -> DynamicInstance:
    """Per-period uniform mean plus Gaussian noise, clamped from below.

    Means and noise are drawn in the instance's original orientation
    (nonnegative costs/values); max-form instances store negated objectives
    so the stream is emitted in min form.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    n = instance.num_vars
    T = spec.horizon
    cps = _draw_change_points(rng, spec)
    lo, hi = spec.mean_range
    bounds = [1] + cps + [T + 1]
    objectives = np.empty((T, n))
    for start, end in zip(bounds[:-1], bounds[1:]):
        mean = rng.uniform(lo, hi, size=n)
        block = mean + rng.normal(0, spec.noise_sigma, size=(end - start, n))
        objectives[start - 1:end - 1] = np.maximum(block, spec.clamp_floor)
    inst = normalize_to_min_form(instance)
    if inst.obj_sign < 0:
        objectives = -objectives
    return DynamicInstance(inst, objectives, cps, family=_family_tag(instance))


def _family_tag(instance):
    return getattr(instance, "_family", "Ingested")


def gen_dynamic(family, n_vars, n_cons, spec: StreamSpec, seed) -> DynamicInstance:
    """Convenience: instance + stream from one seed."""
    inst = gen_instance(family, n_vars, n_cons, seed)
    dyn = gen_objective_stream(inst, spec, np.random.default_rng([seed, 1]).integers(2**32))
    dyn.family = family
    return dyn


def write_stream(dynamic: DynamicInstance, path):
    """CSV with header t,c_1,...,c_n, one row per period."""
    n = dynamic.instance.num_vars
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"c_{j}" for j in range(1, n + 1)])
        for t in range(dynamic.horizon):
            w.writerow([t + 1] + [repr(float(v)) for v in dynamic.objectives[t]])


def ingest_stream_csv(path, instance_path=None) -> DynamicInstance:
    """Load an objective stream; companion instance file defaults to
    <stem>.instance.json next to the stream."""
    path = Path(path)
    if instance_path is None:
        instance_path = path.with_suffix(".instance.json")
    instance = milp.read_instance(instance_path)
    n = instance.num_vars
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:1] != ["t"] or len(header) != n + 1:
            raise ParseError(
                f"expected header t,c_1,...,c_{n}, got {header}", line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n + 1:
                raise ParseError(
                    f"expected {n + 1} fields, got {len(row)}", line=lineno
                )
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return DynamicInstance(instance, np.asarray(rows), None, family="Ingested")
