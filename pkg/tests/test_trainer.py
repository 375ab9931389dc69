import numpy as np
import pytest

from pacc.errors import ClassTooSmall, ConfigError
from pacc.trainer import (ABLATIONS, TrainConfig, load_model, run_ablations, save_model, split,
                          summarize_sweep, sweep, train, write_ablation_table, write_sweep)
from pacc.model import predict
from pacc.views import Layer, MultiviewDataset, ViewMatrix

SMALL = dict(latent_dim=4, hidden=(8,), decoder_hidden=6, proj_dim=3, gate_dim=3, gate_hidden=2,
             dropout=0.0, batch_size=32, lr=1e-2)


def separable(n=400, seed=0, noise=0.3):
    """Two views where each view alone separates the two classes."""
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(n) % 2)
    sign = 2.0 * y[:, None] - 1.0
    views = [ViewMatrix(layer, (sign * rng.uniform(0.5, 1.0, size=(n, 5))
                                + noise * rng.normal(size=(n, 5))).astype(np.float32))
             for layer in (Layer.NETWORK, Layer.TRANSPORT)]
    return MultiviewDataset(views=views, labels=y, class_count=2, kind="synthetic")


def test_split_811_sizes_and_stratification():
    labels = np.repeat([0, 1], [50, 50])
    tr, va, te = split(labels, "8:1:1", seed=3)
    assert (len(tr), len(va), len(te)) == (80, 10, 10)
    for part, k in ((tr, 40), (va, 5), (te, 5)):
        assert (labels[part] == 0).sum() == k
    assert len(np.unique(np.concatenate([tr, va, te]))) == 100
    tr2, va2, te2 = split(labels, "8:1:1", seed=3)
    np.testing.assert_array_equal(te, te2)
    assert not np.array_equal(te, split(labels, "8:1:1", seed=4)[2])


def test_split_91_and_small_classes():
    labels = np.repeat([0, 1], [50, 50])
    tr, va, te = split(labels, "9:1", seed=0)
    assert len(te) == 10 and len(va) == 10 and len(tr) == 80
    tiny = np.array([0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1])
    tr, va, te = split(tiny, "9:1")
    assert set(tiny[tr]) == {0, 1}
    with pytest.raises(ClassTooSmall):
        split(np.array([0, 0, 1] + [1] * 10), "8:1:1")
    with pytest.raises(ConfigError):
        split(tiny, "7:3")


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    with pytest.raises(ConfigError):
        TrainConfig(beta_cb=1.0)
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_separable_views_are_learned():
    ds = separable()
    res = train(ds, TrainConfig(epochs=15, patience=15, **SMALL))
    assert res.history.best_val_accuracy >= 0.95
    tr, va, te = res.split
    X = [v.data[te].astype(float) for v in ds.views]
    assert (predict(res.model, X).classes == ds.labels[te]).mean() >= 0.95
    assert res.history.epochs[-1].loss.total < res.history.initial_loss


def test_training_is_deterministic():
    ds = separable(n=120)
    cfg = TrainConfig(epochs=3, seed=5, **{**SMALL, "dropout": 0.2})
    a, b = train(ds, cfg), train(ds, cfg)
    for (na, xa), (nb, xb) in zip(a.model.named_arrays(), b.model.named_arrays()):
        assert na == nb and xa.tobytes() == xb.tobytes()
    assert [e.loss.total for e in a.history.epochs] == [e.loss.total for e in b.history.epochs]


def test_zero_epochs_returns_initial_model():
    ds = separable(n=60)
    res = train(ds, TrainConfig(epochs=0, **SMALL))
    assert len(res.history) == 0 and res.history.best_epoch == -1
    means = res.model.input_means[0]
    np.testing.assert_allclose(means, ds.views[0].data[res.split[0]].astype(float).mean(0))


def test_early_stopping_and_history_csv(tmp_path):
    ds = separable(n=200)
    seen = []
    res = train(ds, TrainConfig(epochs=40, patience=2, **SMALL), on_epoch=seen.append)
    assert len(seen) == len(res.history) < 40
    assert res.history.best_epoch == len(res.history) - 2
    assert list(res.history.running_best())[-1] == res.history.best_val_accuracy
    res.history.write_csv(tmp_path / "h.csv", include_time=False)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].startswith("epoch,rec_mean,consensus")
    assert len(lines) == len(res.history) + 1


def test_checkpoint_roundtrip(tmp_path):
    ds = separable(n=100)
    res = train(ds, TrainConfig(epochs=2, **SMALL))
    raw = save_model(res, tmp_path / "m.ckpt")
    model, cfg = load_model(tmp_path / "m.ckpt")
    assert cfg["train"]["epochs"] == 2
    X = [v.data.astype(float) for v in ds.views]
    np.testing.assert_array_equal(predict(model, X).probs, predict(res.model, X).probs)
    assert save_model(res, tmp_path / "again.ckpt") == raw


def test_ablations_share_split_and_disable_terms(tmp_path):
    ds = separable(n=100)
    out = run_ablations(ds, TrainConfig(epochs=2, **SMALL))
    assert list(out) == list(ABLATIONS)
    splits = [r.split for _, r in out.values()]
    for s in splits[1:]:
        for a, b in zip(s, splits[0]):
            np.testing.assert_array_equal(a, b)
    last = out["w/ Classifier (nPrint)"][1].history.epochs[-1].loss
    assert last.rec_mean == 0 and last.consensus == 0 and last.layer_ce == 0
    assert last.total == pytest.approx(last.global_ce)
    write_ablation_table(out, tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "variant,accuracy,precision,recall,f1,best_epoch" and len(rows) == 6


def test_sweep_rows(tmp_path):
    ds = separable(n=100)
    runs = sweep(ds, TrainConfig(epochs=1, **SMALL), "beta", [0.0, 0.5], seeds=(0, 1))
    assert [(r.value, r.seed) for r in runs] == [(0.0, 0), (0.0, 1), (0.5, 0), (0.5, 1)]
    assert [v for v, _, _ in summarize_sweep(runs)] == [0.0, 0.5]
    write_sweep(runs, tmp_path)
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 3
    assert len((tmp_path / "sweep_runs.csv").read_text().splitlines()) == 5
    with pytest.raises(ConfigError):
        sweep(ds, TrainConfig(), "lr", [0.1])
