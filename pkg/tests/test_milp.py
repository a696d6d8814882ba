import itertools

import numpy as np
import pytest

from poc import milp as M
from poc.errors import DimensionMismatch


def brute_force_binary(inst):
    """Enumerate all 0/1 points; independent oracle for small MILPs."""
    best = None
    n = inst.num_vars
    for pt in itertools.product([0, 1], repeat=n):
        x = np.array(pt, dtype=float)
        if M.check_feasible(inst, x):
            v = float(inst.objective @ x)
            if best is None or v < best:
                best = v
    return best


def random_binary_instance(rng):
    n = int(rng.integers(2, 9))
    m = int(rng.integers(1, 7))
    A = rng.integers(-4, 5, size=(m, n)).astype(float)
    b = rng.integers(0, 9, size=m).astype(float)
    c = rng.integers(-16, 17, size=n).astype(float) / 16
    senses = tuple(rng.choice(["le", "ge"], size=m))
    # explicit x <= 1 rows keep enumeration finite
    A = np.vstack([A, np.eye(n)])
    b = np.concatenate([b, np.ones(n)])
    senses = senses + ("le",) * n
    return M.MilpInstance(c, A, b, senses, [True] * n)


def kkt_residuals(inst, out):
    inst = M.normalize_to_min_form(inst)
    c, A = inst.objective, inst.con_matrix
    stat = np.max(np.abs(c + A.T @ out.duals - out.reduced_costs))
    slack = inst.rhs - A @ out.x
    cs_rows = np.max(np.abs(out.duals * slack)) if inst.num_cons else 0.0
    cs_vars = np.max(np.abs(out.reduced_costs * out.x))
    return stat, cs_rows, cs_vars


class TestLpRelaxation:
    def test_hand_kkt_example(self):
        inst = M.MilpInstance([-2, -1], [[1, 1]], [1], ("le",), [False, False])
        out = M.solve_lp_relaxation(inst)
        assert out.status == M.OPTIMAL
        np.testing.assert_allclose(out.x, [1, 0], atol=1e-9)
        assert out.objective_value == pytest.approx(-2)
        np.testing.assert_allclose(out.duals, [2], atol=1e-9)
        np.testing.assert_allclose(out.reduced_costs, [0, 1], atol=1e-9)

    def test_zero_objective_returns_origin(self):
        inst = M.MilpInstance([0, 0], [[1, 1]], [1], ("le",), [False, False])
        out = M.solve_lp_relaxation(inst)
        np.testing.assert_array_equal(out.x, [0, 0])
        assert out.objective_value == 0

    def test_ge_row_normalized(self):
        inst = M.MilpInstance([1], [[1]], [3], ("ge",), [False])
        out = M.solve_lp_relaxation(inst)
        assert out.objective_value == pytest.approx(3)
        np.testing.assert_allclose(out.x, [3])

    def test_infeasible_and_unbounded(self):
        inf = M.MilpInstance([1], [[1], [1]], [1, 3], ("le", "ge"), [False])
        assert M.solve_lp_relaxation(inf).status == M.INFEASIBLE
        unb = M.MilpInstance([-1], [[-1]], [0], ("le",), [False])
        assert M.solve_lp_relaxation(unb).status == M.UNBOUNDED

    def test_kkt_on_random_lps(self):
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(60):
            n = int(rng.integers(2, 8))
            m = int(rng.integers(1, 6))
            inst = M.MilpInstance(
                rng.normal(size=n),
                rng.normal(size=(m, n)),
                rng.uniform(0.5, 4, size=m),
                tuple(rng.choice(["le", "eq"], size=m, p=[0.8, 0.2])),
                [False] * n,
            )
            out = M.solve_lp_relaxation(inst)
            if out.status != M.OPTIMAL:
                continue
            stat, cs_rows, cs_vars = kkt_residuals(inst, out)
            assert stat <= 1e-6
            assert cs_rows <= 1e-6
            assert cs_vars <= 1e-6
            checked += 1
        assert checked >= 20

    def test_determinism(self):
        rng = np.random.default_rng(3)
        inst = M.MilpInstance(
            rng.normal(size=6), rng.normal(size=(4, 6)),
            rng.uniform(1, 3, size=4), ("le",) * 4, [False] * 6,
        )
        a = M.solve_lp_relaxation(inst)
        b = M.solve_lp_relaxation(inst)
        assert np.array_equal(a.x, b.x)
        assert a.objective_value == b.objective_value
        assert np.array_equal(a.duals, b.duals)


class TestMilp:
    def test_set_cover_example(self):
        inst = M.MilpInstance(
            [1, 1, 1.5], [[1, 0, 1], [0, 1, 1]], [1, 1], ("ge", "ge"), [True] * 3
        )
        out = M.solve_milp(inst)
        assert out.objective_value == pytest.approx(1.5)
        np.testing.assert_allclose(out.x, [0, 0, 1])

    def test_integral_relaxation_shortcut(self):
        inst = M.MilpInstance([-1, -1], [[1, 0], [0, 1]], [2, 3], ("le", "le"), [True, True])
        lp = M.solve_lp_relaxation(inst)
        mip = M.solve_milp(inst)
        assert mip.objective_value == lp.objective_value
        np.testing.assert_allclose(mip.x, lp.x)

    def test_binary_example(self):
        inst = M.MilpInstance(
            [-3, -2], [[2, 1], [1, 0], [0, 1]], [2, 1, 1], ("le",) * 3, [True, True]
        )
        out = M.solve_milp(inst)
        assert out.objective_value == pytest.approx(-3)
        np.testing.assert_allclose(out.x, [1, 0])

    def test_matches_enumeration_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            inst = random_binary_instance(rng)
            best = brute_force_binary(inst)
            out = M.solve_milp(inst)
            if best is None:
                assert out.status == M.INFEASIBLE
            else:
                assert out.status == M.OPTIMAL
                assert out.objective_value == best


class TestFeasibilityAndLoss:
    def test_check_feasible(self):
        inst = M.MilpInstance([0, 0], [[1, 1]], [1], ("le",), [True, False])
        assert M.check_feasible(inst, [1, 0])
        assert not M.check_feasible(inst, [1, 1])
        assert not M.check_feasible(inst, [0.5, 0])

    def test_check_feasible_dim_mismatch(self):
        inst = M.MilpInstance([0, 0], [[1, 1]], [1], ("le",), [False, False])
        with pytest.raises(DimensionMismatch):
            M.check_feasible(inst, [1, 0, 0])

    def test_optimization_loss(self):
        assert M.optimization_loss([1, 2], [1, 0], [1, 0]) == 0
        assert M.optimization_loss([1, 2], [1, 1], [1, 0]) == pytest.approx(2)

    def test_loss_scales_linearly(self):
        c = np.array([1.5, -2.0, 3.0])
        x = np.array([0.0, 2.0, 1.0])
        xs = np.array([1.0, 2.0, 0.0])
        base = M.optimization_loss(c, x, xs)
        assert base > 0
        assert M.optimization_loss(3 * c, x, xs) == pytest.approx(3 * base)


class TestNormalization:
    def test_identity_on_min_le(self):
        inst = M.MilpInstance([1, 2], [[1, 1]], [1], ("le",), [False, False])
        assert M.normalize_to_min_form(inst) is inst

    def test_max_negated(self):
        inst = M.MilpInstance([1, 2], [[1, 1]], [1], ("le",), [False, False], maximize=True)
        norm = M.normalize_to_min_form(inst)
        np.testing.assert_array_equal(norm.objective, [-1, -2])
        out = M.solve_lp_relaxation(inst)
        # reported in the original (max) orientation
        assert out.objective_value == pytest.approx(2)
        np.testing.assert_allclose(out.x, [0, 1])

    def test_ge_membership_preserved(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=4)
        inst = M.MilpInstance(np.zeros(4), [a], [0.3], ("ge",), [False] * 4)
        norm = M.normalize_to_min_form(inst)
        for _ in range(50):
            x = rng.uniform(0, 2, size=4)
            assert (a @ x >= 0.3 - 1e-12) == (norm.con_matrix[0] @ x <= norm.rhs[0] + 1e-12)


class TestInstanceIo:
    def test_round_trip(self, tmp_path):
        inst = M.MilpInstance(
            [1, 2, 3], [[1, 0, 1], [0, 1, 1]], [1, 2], ("le", "eq"), [True, False, True]
        )
        p = tmp_path / "inst.json"
        M.write_instance(inst, p)
        back = M.read_instance(p)
        np.testing.assert_array_equal(back.objective, inst.objective)
        np.testing.assert_array_equal(back.con_matrix, inst.con_matrix)
        assert back.row_sense == inst.row_sense
        np.testing.assert_array_equal(back.integral, inst.integral)
