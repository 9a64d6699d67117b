import numpy as np
import pytest

from remd.data import make_dataset
from remd.field import Grid2D, ScalarField, field_fill
from remd.nnet import ModelConfig, init_params, load_checkpoint
from remd import rng as rng_mod
from remd.training import (TrainConfig, TrainingDivergedError, batch_indices, make_pair, train)
from remd.transfer import restrict_avg

SMALL = ModelConfig(levels=2, d_emb=8, hidden=8, channels=4)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(scale_factor=3)


def test_make_pair_examples():
    g = Grid2D(64, 64)
    u = ScalarField(g, np.random.default_rng(0).standard_normal(g.shape))
    lr, hr = make_pair(u, 2)
    assert lr.grid.shape == (32, 32) and hr is u
    c = make_pair(field_fill(g, 4.5), 2)[0]
    assert np.all(c.values == 4.5)
    lr4 = make_pair(u, 4)[0]
    assert np.max(np.abs(lr4.values - restrict_avg(restrict_avg(u)).values)) <= 1e-14
    with pytest.raises(ValueError):
        make_pair(field_fill(Grid2D(6, 6), 0), 4)


def test_zero_iterations_returns_init():
    ds = make_dataset(2, Grid2D(16, 16), seed=1)
    res = train(TrainConfig(iterations=0, seed=3), ds, SMALL)
    ref = init_params(SMALL, rng_mod.generator(3, "init"))
    assert np.array_equal(res.params.flat, ref.flat)
    assert np.all(res.params["head.w2"] == 0) and res.losses == []


def test_empty_dataset():
    with pytest.raises(ValueError):
        train(TrainConfig(iterations=1), [], SMALL)


def test_loss_log_deterministic(tmp_path):
    ds = make_dataset(4, Grid2D(16, 16), seed=2)
    cfg = TrainConfig(iterations=10, batch_size=2, seed=5, checkpoint_every=100)
    a = train(cfg, ds, SMALL, out_dir=tmp_path / "a")
    b = train(cfg, ds, SMALL, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()
    assert np.array_equal(a.params.flat, b.params.flat)
    lines = (tmp_path / "a" / "loss.csv").read_text().splitlines()
    assert lines[0] == "iter,loss" and len(lines) == 11


def test_resume_from_checkpoint_bit_identical(tmp_path):
    ds = make_dataset(4, Grid2D(16, 16), seed=2)
    full = train(TrainConfig(iterations=8, batch_size=2, seed=5, checkpoint_every=4), ds, SMALL,
                 out_dir=tmp_path)
    params, state, meta = load_checkpoint(tmp_path / "checkpoint_000004.rmdp")
    rest = train(TrainConfig(iterations=4, batch_size=2, seed=5), ds, SMALL, init=(params, state),
                 start_iteration=4)
    assert rest.losses == full.losses[4:]
    assert np.array_equal(rest.params.flat, full.params.flat)
    assert meta["T"] == 1000


def test_shuffle_deterministic_and_covering():
    a = [batch_indices(7, it, 3, 10) for it in range(10)]
    b = [batch_indices(7, it, 3, 10) for it in range(10)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    flat = np.concatenate(a)
    for epoch in range(3):
        assert sorted(flat[epoch * 10:(epoch + 1) * 10]) == list(range(10))
    c = np.concatenate([batch_indices(8, it, 3, 10) for it in range(10)])
    assert not np.array_equal(flat, c)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts():
    ds = make_dataset(2, Grid2D(16, 16), seed=2)
    with pytest.raises(TrainingDivergedError, match="iteration"):
        train(TrainConfig(iterations=50, batch_size=1, learning_rate=1e150), ds, SMALL)


def test_bad_checkpoint_path(tmp_path):
    ds = make_dataset(1, Grid2D(16, 16), seed=2)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        train(TrainConfig(iterations=1, batch_size=1), ds, SMALL, out_dir=blocker / "sub")


def test_convergence_run():
    """500 iterations on 32 fields: last-50 mean loss <= 0.2 x first-50 mean loss.

    The epsilon-prediction loss has an irreducible floor: the fine-scale part
    of the injected noise cannot be separated from fine-scale signal. For
    this data the Bayes-optimal mean loss over uniform t is about 0.41,
    while the initial loss is about 0.87, so the ratio cannot go below
    roughly 0.47. The target is kept as stated.
    """
    ds = make_dataset(32, Grid2D(32, 32), seed=11)
    res = train(TrainConfig(iterations=500, seed=12), ds)
    first, last = np.mean(res.losses[:50]), np.mean(res.losses[-50:])
    print(f"first-50 mean {first:.4f}, last-50 mean {last:.4f}, ratio {last / first:.3f}")
    assert last <= 0.2 * first
