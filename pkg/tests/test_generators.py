import numpy as np
import pytest

from poc import milp
from poc.errors import ParseError
from poc.generators import (FAMILIES, MIN_PERIOD_LEN, StreamSpec, DynamicInstance,
                            gen_dynamic, gen_instance, gen_objective_stream,
                            ingest_stream_csv, write_stream)

SMALL_DIMS = {"SC": (8, 5), "FL": (8, 5), "Mat": (8, 5), "SP": (8, 5),
              "GMILP": (6, 4), "CA": (7, 3)}


class TestInstanceFamilies:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_feasible_and_solvable(self, family):
        n, m = SMALL_DIMS[family]
        inst = gen_instance(family, n, m, seed=0)
        out = milp.solve_milp(inst)
        assert out.status == milp.OPTIMAL
        assert milp.check_feasible(inst, out.x)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_seed_determinism(self, family):
        n, m = SMALL_DIMS[family]
        a = gen_instance(family, n, m, seed=3)
        b = gen_instance(family, n, m, seed=3)
        np.testing.assert_array_equal(a.objective, b.objective)
        np.testing.assert_array_equal(a.con_matrix, b.con_matrix)
        np.testing.assert_array_equal(a.rhs, b.rhs)

    def test_family_name_case_insensitive(self):
        a = gen_instance("gmilp", 6, 4, seed=1)
        b = gen_instance("GMILP", 6, 4, seed=1)
        np.testing.assert_array_equal(a.con_matrix, b.con_matrix)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            gen_instance("TSP", 5, 5, seed=0)


class TestStreams:
    def test_fixed_count_changes(self):
        inst = gen_instance("GMILP", 6, 4, seed=0)
        spec = StreamSpec(horizon=120, change_mode="fixed", n_changes=4)
        dyn = gen_objective_stream(inst, spec, seed=5)
        cps = dyn.true_change_points
        assert len(cps) == 4
        assert all(2 <= cp <= 120 for cp in cps)
        assert cps == sorted(cps)
        gaps = np.diff([1] + list(cps) + [121])
        assert np.all(gaps >= MIN_PERIOD_LEN)

    def test_adjacent_period_means_differ(self):
        inst = gen_instance("GMILP", 6, 4, seed=0)
        spec = StreamSpec(horizon=100, n_changes=3, noise_sigma=0.0)
        dyn = gen_objective_stream(inst, spec, seed=7)
        bounds = [1] + list(dyn.true_change_points) + [101]
        for a, b, c in zip(bounds, bounds[1:], bounds[2:]):
            left = dyn.objectives[a - 1: b - 1].mean(axis=0)
            right = dyn.objectives[b - 1: c - 1].mean(axis=0)
            assert not np.allclose(left, right)

    def test_clamp_floor(self):
        inst = gen_instance("GMILP", 6, 4, seed=0)
        spec = StreamSpec(horizon=80, n_changes=2, noise_sigma=50.0,
                          clamp_floor=0.0)
        dyn = gen_objective_stream(inst, spec, seed=1)
        assert np.all(dyn.objectives >= 0.0)

    def test_per_step_prob_mode(self):
        inst = gen_instance("GMILP", 6, 4, seed=0)
        spec = StreamSpec(horizon=400, change_mode="prob", change_prob=0.05)
        dyn = gen_objective_stream(inst, spec, seed=2)
        assert len(dyn.true_change_points) > 0
        assert dyn.objectives.shape == (400, 6)

    def test_stream_determinism(self):
        spec = StreamSpec(horizon=60, n_changes=2)
        a = gen_dynamic("SC", 8, 5, spec, seed=9)
        b = gen_dynamic("SC", 8, 5, spec, seed=9)
        np.testing.assert_array_equal(a.objectives, b.objectives)
        assert a.true_change_points == b.true_change_points


class TestStreamIo:
    def test_round_trip(self, tmp_path):
        dyn = gen_dynamic("GMILP", 6, 4, StreamSpec(horizon=40, n_changes=2), 3)
        stream = tmp_path / "s.csv"
        inst_path = tmp_path / "s.instance.json"
        milp.write_instance(dyn.instance, inst_path)
        write_stream(dyn, stream)
        loaded = ingest_stream_csv(stream)
        np.testing.assert_array_equal(loaded.objectives, dyn.objectives)
        np.testing.assert_array_equal(loaded.instance.con_matrix,
                                      dyn.instance.con_matrix)
        assert loaded.true_change_points is None

    def test_short_row_names_line(self, tmp_path):
        dyn = gen_dynamic("GMILP", 6, 4, StreamSpec(horizon=5, n_changes=0), 3)
        stream = tmp_path / "s.csv"
        milp.write_instance(dyn.instance, tmp_path / "s.instance.json")
        write_stream(dyn, stream)
        lines = stream.read_text().splitlines()
        lines[3] = ",".join(lines[3].split(",")[:-1])  # drop one field
        stream.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as err:
            ingest_stream_csv(stream)
        assert err.value.line == 4

    def test_wide_stream_shape(self, tmp_path):
        n, T = 313, 300
        rng = np.random.default_rng(0)
        inst = milp.MilpInstance(np.ones(n), np.ones((2, n)), np.array([n, n]),
                                 [milp.LE, milp.LE], np.zeros(n, dtype=bool))
        milp.write_instance(inst, tmp_path / "wide.instance.json")
        obj = rng.uniform(1, 2, size=(T, n))
        dyn = DynamicInstance(inst, obj, None, "GMILP")
        write_stream(dyn, tmp_path / "wide.csv")
        loaded = ingest_stream_csv(tmp_path / "wide.csv")
        assert loaded.objectives.shape == (300, 313)
