import numpy as np
import pytest

from leoris.experiment import reference_step
from leoris.geometry import assemble_observation
from leoris.scenario import build_snapshot, desk_scenario, generate_trajectory, trial_rng, STREAM_CHANNEL


def make_reference(config=None, region="urban"):
    """Desk snapshot at the first RIS-visible step: (config, snap, rho, ue)."""
    config = desk_scenario() if config is None else config
    step = reference_step(config)
    ue = generate_trajectory(config).states[step]
    snap, sats, riss = build_snapshot(config, step * config.update_interval, ue, region,
                                      trial_rng(config.seed, 0, STREAM_CHANNEL))
    rho = assemble_observation(ue, sats, riss, config.wave)
    return config, snap, rho, ue


@pytest.fixture(scope="session")
def reference():
    return make_reference()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng, n=None):
    from leoris.manifold import so3_exp
    shape = (3,) if n is None else (n, 3)
    e = rng.normal(size=shape)
    e *= (rng.uniform(0, np.pi - 1e-3, size=shape[:-1]) / np.linalg.norm(e, axis=-1))[..., None]
    return so3_exp(e)
