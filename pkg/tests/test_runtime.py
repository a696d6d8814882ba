import numpy as np
import pytest

from conftest import make_context, stationary_context
from poc import baselines as bl
from poc.runtime import EpisodeLog, StepRecord, cumulative_loss, run_episode


class TestAccounting:
    def test_cumulative_loss_identity(self, small_ctx):
        C = 7.5
        log = bl.run_cara_p(small_ctx, 5, C)
        total = sum(s.loss for s in log.steps) + C * log.n_resolves
        assert log.cumulative_loss == pytest.approx(total, abs=1e-9)
        assert cumulative_loss(log, C) == pytest.approx(total, abs=1e-9)

    def test_resolve_cost_component(self, small_ctx):
        log = bl.run_cara_p(small_ctx, 4, 3.0)
        assert log.resolve_cost == pytest.approx(3.0 * log.n_resolves)
        assert log.cumulative_loss == pytest.approx(
            log.optimization_loss + log.resolve_cost)

    def test_finalize_is_idempotent(self):
        log = EpisodeLog(steps=[StepRecord(1, False, 2.0, 0, 0),
                                StepRecord(2, True, 1.0, 0, 0)],
                         resolve_times=[2])
        log.finalize(10.0)
        log.finalize(10.0)
        assert log.cumulative_loss == pytest.approx(13.0)


class TestEpisodeLoop:
    def test_resolve_times_strictly_increasing(self, small_ctx):
        log = bl.run_cara_p(small_ctx, 3, 1.0)
        times = np.asarray(log.resolve_times)
        assert np.all(np.diff(times) > 0)

    def test_never_resolve_accrues_default_losses(self, small_ctx):
        log = run_episode(small_ctx, lambda t, inc: False, 5.0)
        x0 = small_ctx.default_solution().outcome.x
        expected = sum(small_ctx.step_loss(t, x0)
                       for t in range(1, small_ctx.horizon + 1))
        assert log.n_resolves == 0
        assert log.cumulative_loss == pytest.approx(expected, abs=1e-9)

    def test_step_records_age_and_length(self, small_ctx):
        log = bl.run_cara_p(small_ctx, 4, 1.0)
        assert len(log.steps) == small_ctx.horizon
        for step in log.steps:
            last = max([t for t in log.resolve_times if t <= step.t],
                       default=1)
            assert step.incumbent_age == step.t - last

    def test_on_step_callback_runs_every_step(self, small_ctx):
        seen = []
        run_episode(small_ctx, lambda t, inc: t == 2, 1.0,
                    on_step=lambda t, inc, r, l: seen.append((t, r)))
        assert len(seen) == small_ctx.horizon
        assert seen[1] == (2, True)

    def test_losses_nonnegative(self, small_ctx):
        log = bl.run_cara_p(small_ctx, 2, 1.0)
        assert all(s.loss >= -1e-9 for s in log.steps)


class TestContextCaches:
    def test_resolve_objective_is_weighted_mean(self, small_ctx):
        t = 12
        inc = small_ctx.resolve_at(t)
        expected = small_ctx.weights(t) @ small_ctx.dynamic.objectives[: t - 1]
        np.testing.assert_allclose(inc.objective_used, expected)
        assert inc.acquired_at == t
        assert inc.observations == (t - 1) - small_ctx.iota(t)

    def test_resolve_at_cached(self, small_ctx):
        assert small_ctx.resolve_at(9) is small_ctx.resolve_at(9)

    def test_default_solution_shape(self, small_ctx):
        inc = small_ctx.default_solution()
        assert inc.acquired_at == 1 and inc.observations == 0
        assert inc.outcome.x.shape == (small_ctx.instance.num_vars,)

    def test_early_resolve_falls_back_to_default(self, small_ctx):
        assert small_ctx.resolve_at(1) is small_ctx.default_solution()

    def test_iota_bounds(self, small_ctx):
        for t in range(1, small_ctx.horizon + 1):
            assert 0 <= small_ctx.iota(t) <= max(0, t - 2)

    def test_clairvoyant_loss_is_zero(self, small_ctx):
        t = 5
        assert small_ctx.step_loss(t, small_ctx.clairvoyant(t)) == pytest.approx(
            0.0, abs=1e-9)

    def test_relax_integrality_flag(self):
        ctx = make_context(3)
        from poc.runtime import EpisodeContext
        relaxed = EpisodeContext(ctx.dynamic, ctx.detector, ctx.scheme,
                                 relax_integrality=True)
        assert not relaxed.instance.integral.any()


class TestStationaryStream:
    def test_resolve_recovers_optimal(self, flat_ctx):
        # constant objectives: the t >= 2 re-solve is exactly optimal
        log = run_episode(flat_ctx, lambda t, inc: t == 2, 0.0)
        assert sum(s.loss for s in log.steps[1:]) == pytest.approx(0.0, abs=1e-8)
