import numpy as np
import pytest

from hyperod.config import RunConfig
from hyperod.data import synth_testbed
from hyperod.meta import meta_train


def tiny_config(**kw) -> RunConfig:
    """A 16-config grid and short training so pipeline tests run in seconds."""
    base = dict(seed=3, grid_n_layers=[2, 4], grid_compression=[1.0, 2.0], grid_dropout=[0.0, 0.2],
                grid_weight_decay=[0.0, 1e-5], hn_hidden=32, hn_epochs=15, hash_dim=32, h_epochs=3,
                g_epochs=3, g_max_scores=64, fval_trees=20, search_T=10, search_V=20, max_iterations=4,
                online_pretrain_epochs=10, scratch_epochs=5)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_tasks():
    return synth_testbed(9, n_samples=80, dim_range=(5, 7), seed=11, prefix="tiny")


@pytest.fixture(scope="session")
def tiny_meta(tiny_tasks, tiny_cfg):
    return meta_train(tiny_tasks[:8], tiny_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion number -> PASS/FAIL line, filled by test_acceptance.py
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
