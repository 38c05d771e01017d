import csv

import numpy as np
import pytest

from deepmc.evaluation import als_complete
from deepmc.experiments import (
    BENCH_HEADER,
    BenchSettings,
    generalization_run,
    regularizer_grid,
    run_method,
    summarize,
    synth_bench,
    synthetic_instance,
    write_rows,
)
from deepmc.trainer import EarlyStopping

pytestmark = pytest.mark.filterwarnings("ignore:rank .* is not below:RuntimeWarning")

TINY = BenchSettings(m=10, n=12, rank=2, col_hidden=(3,), row_hidden=(4,), max_iters=10, als_iters=5)


def test_model_config_per_method():
    shape = (10, 12)
    full = TINY.model_config(shape, 1)
    assert full.use_linear and full.use_nonlinear and full.seed == 1
    nl = BenchSettings(target_range=(-3, 3)).model_config((100, 200), 0, "nonlinear-only")
    assert not nl.use_linear and nl.target_range is None
    lin = TINY.model_config(shape, 0, "linear-only")
    assert not lin.use_nonlinear
    assert full.col_layer_dims == (2, 3, 10) and full.row_layer_dims == (2, 4, 12)
    with pytest.raises(ValueError):
        TINY.model_config(shape, 0, "als")


def test_run_method_als_matches_baseline():
    _, Y = synthetic_instance(TINY, 0.3, 0)
    np.testing.assert_array_equal(run_method("als", Y, TINY, 0), als_complete(Y, 2, 5, 1e-3, 0))


def test_synth_bench_rows_sorted_and_counted():
    rows = synth_bench([0.5, 0.3], [1, 0], TINY, ("full", "als"))
    assert len(rows) == 2 * 2 * 2
    keys = [(r["mask_fraction"], r["method"], r["seed"]) for r in rows]
    assert keys == sorted(keys)
    assert all(r["evaluated_on"] == "hidden-only" for r in rows)
    means = summarize(rows)
    assert set(means) == {(0.3, "als"), (0.3, "full"), (0.5, "als"), (0.5, "full")}


def test_generalization_run_needs_split():
    truth, Y = synthetic_instance(TINY, 0.5, 0)
    with pytest.raises(ValueError):
        generalization_run(Y, truth, TINY.model_config(Y.shape, 0))
    cfg = TINY.model_config(Y.shape, 0, early_stop=EarlyStopping(0.1, patience=None, restore_best=False))
    out = generalization_run(Y, truth, cfg)
    assert out["gap"] == out["validation_mse"] - out["train_mse"]
    assert out["holdout_nmae"] > 0


def test_regularizer_grid_rows():
    rows = regularizer_grid([(0.0, 0.0), (1.0, 0.5)], [0, 1], TINY, fraction=0.5, validation_fraction=0.1)
    assert [(r["gamma"], r["lambda"], r["seed"]) for r in rows] == [
        (0.0, 0.0, 0), (0.0, 0.0, 1), (1.0, 0.5, 0), (1.0, 0.5, 1),
    ]


def test_write_rows_formats(tmp_path):
    p = tmp_path / "r.csv"
    row = dict(mask_kind="random", mask_fraction=0.3, method="full", seed=2, psnr=float("inf"),
               ssim=0.1, nmae=1 / 3, evaluated_on="hidden-only")
    write_rows([row], p, BENCH_HEADER)
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(BENCH_HEADER)
    assert lines[1] == "random,0.3,full,2,inf,0.1,0.3333333333333333,hidden-only"
    assert float(next(csv.DictReader(open(p)))["nmae"]) == 1 / 3
