import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperod.config import make_rng
from hyperod.search import (
    SamplingRangeError, SearchReport, SearchSpace, final_select, gaussian_entropy, hyper_select,
    sample_local_batch,
)
from hyperod.space import HpConfig, HpGrid


def test_entropy_closed_form():
    assert gaussian_entropy([1.0]) == pytest.approx(0.5 * math.log(2 * math.pi * math.e))
    assert gaussian_entropy([2.0, 0.5]) == pytest.approx(math.log(2 * math.pi * math.e))
    with pytest.raises(ValueError):
        gaussian_entropy([0.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=6), st.floats(1.01, 10.0))
def test_entropy_grows_with_scale(sigma, factor):
    scaled = [s * factor for s in sigma]
    assert gaussian_entropy(scaled) - gaussian_entropy(sigma) == pytest.approx(len(sigma) * math.log(factor))


def test_samples_are_canonical_grid_points(rng):
    grid = HpGrid()
    space = SearchSpace(grid, 11)
    start = space.canonical(HpConfig(4, 1.4, 0.2, 1e-6))
    samples = sample_local_batch(start, [0.5, 0.3, 0.1, 0.5], 300, rng, space)
    canon = set(space.configs)
    assert all(s in canon for s in samples)
    assert len(set(samples)) > 5


def test_tiny_sigma_returns_start(rng):
    space = SearchSpace(HpGrid(), 11)
    start = space.canonical(HpConfig(4, 1.4, 0.2, 1e-6))
    assert set(sample_local_batch(start, [1e-6] * 4, 50, rng, space)) == {start}


def test_huge_depth_sigma_raises(rng):
    space = SearchSpace(HpGrid(n_layers=[2]), 8)
    with pytest.raises(SamplingRangeError):
        sample_local_batch(HpConfig(2, 1.0, 0.0, 0.0), [50.0, 0.1, 0.1, 0.1], 20, rng, space, max_tries=3)


def test_final_select_prefers_smaller_on_ties():
    pool = [HpConfig(4, 1.0, 0.0, 0.0), HpConfig(2, 1.0, 0.0, 0.0), HpConfig(2, 2.0, 0.0, 0.0)]
    chosen, value = final_select(pool, lambda hps: np.array([0.9, 0.9, 0.5]), 10)
    assert chosen == HpConfig(2, 1.0, 0.0, 0.0) and value == 0.9


def test_report_text_excludes_timings():
    rep = SearchReport({"n_layers": 2}, 0.8, 3, 10, "patience", timings={"pretrain": 1.23})
    assert "pretrain" not in rep.to_text()
    assert json.loads(rep.timings_text()) == {"pretrain": 1.23}


def test_single_config_grid_short_circuits(tiny_meta, tiny_tasks, tiny_cfg):
    store = tiny_meta.store
    one = HpGrid([2], [1.0], [0.0], [0.0])
    store_one = type(store)(store.h, store.g, store.fval, store.perf, one, HpConfig(2, 1.0, 0.0, 0.0),
                            store.sigma_init)
    hp, report = hyper_select(tiny_tasks[8].X, store_one, tiny_cfg, make_rng(0, "one"))
    assert hp == HpConfig(2, 1.0, 0.0, 0.0) and report.stopped_by == "single_config"


def test_search_is_deterministic_and_tracks_pool(tiny_meta, tiny_tasks, tiny_cfg):
    X = tiny_tasks[8].X
    hp1, rep1 = hyper_select(X, tiny_meta.store, tiny_cfg, make_rng(0, "s"))
    hp2, rep2 = hyper_select(X, tiny_meta.store, tiny_cfg, make_rng(0, "s"))
    assert hp1 == hp2 and rep1.to_text() == rep2.to_text()
    sizes = [t["pool_size"] for t in rep1.trace]
    assert sizes == sorted(sizes)
    best = [t["best_fval"] for t in rep1.trace]
    assert best == sorted(best)
    assert rep1.iterations == len(rep1.trace) <= tiny_cfg.max_iterations
    assert hp1 in SearchSpace(tiny_cfg.grid(), X.shape[1]).configs
