import numpy as np
import pytest

from tenrec.pasd_solver import PasdConfig
from tenrec.pasd_solver import pasd_recover
from tenrec.synth_bench import corrupt_sparse
from tenrec.synth_bench import gen_lowrank_tucker
from tenrec.synth_bench import SynthSpec


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow acceptance tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_instance():
    """A 20^3 tensor of Tucker rank 2 with 5% of its entries corrupted."""
    spec = SynthSpec((20, 20, 20), 2, 0.05, seed=7)
    t0 = gen_lowrank_tucker(spec)
    t, _ = corrupt_sparse(t0, spec.corruption_fraction, spec.seed)
    return spec, t0, t


@pytest.fixture(scope="session")
def pasd_run(small_instance):
    spec, _, t = small_instance
    config = PasdConfig.for_tensor(t.dims, target_rank=spec.ranks)
    return config, pasd_recover(t, config)
