import numpy as np
import pytest

from poc.cpd import DetectorConfig
from poc.generators import DynamicInstance, StreamSpec, gen_dynamic, gen_instance
from poc.runtime import EpisodeContext


def make_context(seed=0, n_vars=6, n_cons=4, horizon=30, n_changes=1,
                 sigma=0.5):
    spec = StreamSpec(horizon=horizon, n_changes=n_changes, noise_sigma=sigma)
    dyn = gen_dynamic("GMILP", n_vars, n_cons, spec, seed)
    return EpisodeContext(dyn, DetectorConfig(seed=seed))


def stationary_context(seed=0, n_vars=6, n_cons=4, horizon=25, cps=()):
    """Constant objective stream; cps=None marks unknown change points."""
    inst = gen_instance("GMILP", n_vars, n_cons, seed)
    rng = np.random.default_rng([seed, 7])
    c = rng.uniform(1.0, 5.0, inst.num_vars)
    objectives = np.tile(c, (horizon, 1))
    cps = None if cps is None else list(cps)
    dyn = DynamicInstance(inst, objectives, cps, family="GMILP")
    return EpisodeContext(dyn, DetectorConfig(seed=seed))


@pytest.fixture(scope="session")
def small_ctx():
    return make_context(0)


@pytest.fixture(scope="session")
def small_ctxs():
    return [make_context(s) for s in range(3)]


@pytest.fixture(scope="session")
def flat_ctx():
    return stationary_context(0)
