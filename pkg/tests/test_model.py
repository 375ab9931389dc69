import math

import numpy as np
import pytest

from pacc import autograd as ag
from pacc.errors import AllRowsDegenerate, BatchTooSmall, EmptyClass, LabelOutOfRange, ShapeMismatch
from pacc.model import (LossFlags, ModelConfig, PACCModel, class_balance_weights, consensus_loss,
                        fuse, global_ce, info_nce, layer_ce, predict, rec_loss, total_loss)

from helpers import gradient_check, tiny_problem


def test_rec_loss_exact_values():
    X = np.array([[1.0, 0.0, 2.0], [0.0, -3.0, 1.0]])
    assert rec_loss(X, X).item() == pytest.approx(0.0, abs=1e-15)
    assert rec_loss(X, -2.0 * X).item() == pytest.approx(2.0, abs=1e-15)
    orth = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    assert rec_loss(X, orth).item() == pytest.approx(1.0, abs=1e-15)


def test_rec_loss_skips_zero_rows():
    X = np.array([[1.0, 2.0], [0.0, 0.0]])
    out = rec_loss(X, np.array([[1.0, 2.0], [5.0, 1.0]]))
    assert out.item() == pytest.approx(0.0, abs=1e-15)
    assert out.flags["excluded_rows"] == 1
    with pytest.raises(AllRowsDegenerate):
        rec_loss(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ShapeMismatch):
        rec_loss(np.ones((2, 2)), np.ones((2, 3)))


@pytest.mark.parametrize("B", [2, 8, 64])
def test_constant_scorer_infonce_is_minus_log_batch(B):
    rng = np.random.default_rng(B)
    const = lambda z: ag.Tensor(np.ones((z.shape[0], 3)))  # noqa: E731
    val = info_nce(ag.Tensor(rng.normal(size=(B, 4))), ag.Tensor(rng.normal(size=(B, 4))), const)
    assert abs(val.item() + math.log(B)) < 1e-9


def test_infonce_bounds_and_batch_check():
    rng = np.random.default_rng(0)
    Z = ag.Tensor(rng.normal(size=(16, 5)))
    same = info_nce(Z, Z, lambda z: z, tau=0.05).item()
    other = info_nce(Z, ag.Tensor(rng.normal(size=(16, 5))), lambda z: z, tau=0.05).item()
    assert other < same <= 0.0
    with pytest.raises(BatchTooSmall):
        info_nce(ag.Tensor(np.ones((1, 2))), ag.Tensor(np.ones((1, 2))), lambda z: z)


def test_consensus_single_view_is_zero_and_symmetric_average():
    rng = np.random.default_rng(1)
    Z = [ag.Tensor(rng.normal(size=(6, 3))) for _ in range(3)]
    assert consensus_loss(Z[:1], lambda z: z).item() == 0.0
    ident = lambda z: z  # noqa: E731
    pairs = [info_nce(Z[i], Z[j], ident).item() for i in range(3) for j in range(i + 1, 3)]
    assert consensus_loss(Z, ident).item() == pytest.approx(-np.mean(pairs), abs=1e-12)


def test_class_balance_weights():
    np.testing.assert_array_equal(class_balance_weights([5, 100], 0.0, normalize=False), [1, 1])
    assert class_balance_weights([2], 0.5, normalize=False)[0] == 2 / 3
    lam = class_balance_weights([1000, 100], 0.99)
    assert lam.mean() == pytest.approx(1.0)
    assert lam[1] > lam[0]
    with pytest.raises(EmptyClass):
        class_balance_weights([3, 0], 0.9)
    with pytest.raises(ValueError):
        class_balance_weights([3, 3], 1.0)


def test_cross_entropy_values():
    logits = ag.Tensor(np.log(np.array([[0.5, 0.25, 0.25], [0.1, 0.1, 0.8]])))
    y = np.array([0, 2])
    expect = -(np.log(0.5) + np.log(0.8)) / 2
    assert layer_ce([logits, logits], y).item() == pytest.approx(expect, abs=1e-12)
    assert global_ce(logits, y, [1, 1, 1]).item() == pytest.approx(expect, abs=1e-12)
    weighted = -(2 * np.log(0.5) + 0.5 * np.log(0.8)) / 2
    assert global_ce(logits, y, [2, 1, 0.5]).item() == pytest.approx(weighted, abs=1e-12)
    with pytest.raises(LabelOutOfRange):
        global_ce(logits, np.array([0, 3]), [1, 1, 1])


def test_fuse_scales_blocks():
    Z = [ag.Tensor(np.ones((2, 2))), ag.Tensor(2 * np.ones((2, 3)))]
    w = np.array([[0.25, 0.75], [1.0, 0.0]])
    np.testing.assert_allclose(fuse(Z, w).data, [[0.25, 0.25, 1.5, 1.5, 1.5], [1, 1, 0, 0, 0]])
    with pytest.raises(ShapeMismatch):
        fuse(Z, np.ones((2, 3)))


def test_forward_shapes_and_weights():
    model, views, y, lam = tiny_problem(M=3, d_f=12, D=4, B=8, C=3)
    out = model.forward(views)
    assert [z.shape for z in out.Z] == [(8, 4)] * 3
    assert out.weights.shape == (8, 3)
    np.testing.assert_allclose(out.weights.data.sum(axis=1), 1.0, atol=1e-12)
    assert out.fused.shape == (8, 12)
    assert out.global_logits.shape == (8, 3)
    assert [r.shape for r in out.recon] == [(8, 12)] * 3
    pred = predict(model, views)
    np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, atol=1e-12)
    assert pred.layer_probs.shape == (3, 8, 3)


def test_uncertain_layer_gets_less_weight():
    # with the learned projection silenced, weights follow negative entropy only
    model, views, _, _ = tiny_problem(M=2, B=4, lambda_proj=0.0)
    model.params["head0.W"].data[:] = 0.0
    model.params["head0.b"].data[:] = 0.0  # uniform prediction: maximal entropy
    model.params["head1.b"].data[:] = [10.0, 0.0, 0.0]
    w = model.forward(views).weights.data
    assert (w[:, 1] > w[:, 0]).all()


def test_concat_mode_ignores_gate():
    model, views, y, lam = tiny_problem(fusion="concat")
    out = model.forward(views)
    assert out.scores is None
    np.testing.assert_array_equal(out.fused.data, np.concatenate([z.data for z in out.Z], axis=1))


def test_loss_flags_turn_terms_off():
    model, views, y, lam = tiny_problem()
    _, full, _ = total_loss(model, views, y, lam)
    assert all(r > 0 for r in full.rec_per_layer) and full.consensus != 0 and full.layer_ce > 0
    _, bare, _ = total_loss(model, views, y, lam, LossFlags(rec=False, con=False, task_info=False))
    assert bare.rec_per_layer == [0.0] * 3 and bare.consensus == 0 and bare.layer_ce == 0
    assert bare.total == pytest.approx(bare.global_ce)
    assert bare.global_ce == pytest.approx(full.global_ce)
    assert full.total == pytest.approx(np.mean(full.rec_per_layer) + full.consensus
                                       + full.layer_ce + full.global_ce)


def test_objective_gradient_small_instance():
    model, views, y, lam = tiny_problem(M=2, d_f=6, D=3, B=5, C=2, seed=4)
    assert gradient_check(model, views, y, lam) < 1e-4


def test_input_means_roundtrip_through_arrays():
    model, views, y, lam = tiny_problem()
    arrays = model.named_arrays()
    assert [n for n, _ in arrays][-3:] == ["input0.mean", "input1.mean", "input2.mean"]
    clone = PACCModel(model.config)
    clone.load_arrays(arrays)
    np.testing.assert_array_equal(predict(clone, views).probs, predict(model, views).probs)
    bad = dict(arrays)
    bad["input0.mean"] = np.zeros(5)
    with pytest.raises(ShapeMismatch):
        clone.load_arrays(bad.items())


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(input_dims=[4], num_classes=1)
    with pytest.raises(ValueError):
        ModelConfig(input_dims=[4], num_classes=2, fusion="sum")
    with pytest.raises(ShapeMismatch):
        PACCModel(ModelConfig(input_dims=[4, 4], num_classes=2)).forward([np.zeros((2, 4))])


def test_every_parameter_group_gets_gradient():
    model, views, y, lam = tiny_problem(B=8)
    obj, _, _ = total_loss(model, views, y, lam, train=True, dropout_seed=(1, 1))
    params = model.parameters()
    ag.zero_grad(params)
    grads = dict(zip(model.params, ag.backward(obj, params)))
    for group, names in model.groups().items():
        assert any(np.abs(grads[n]).max() > 0 for n in names), group


def test_infonce_near_minus_log_batch_for_near_constant_scorer():
    # small scorer weights next to a bias make every projected row point the same way
    model, views, _, _ = tiny_problem(B=16, proj_dim=8)
    rng = np.random.default_rng(0)
    model.params["scorer.W"].data *= 1e-2
    model.params["scorer.b"].data = rng.normal(size=8)
    Z = model.encode_all(views)
    val = info_nce(Z[0], Z[1], model.project, model.config.tau_nce).item()
    assert -math.log(16) - 0.1 <= val <= -math.log(16) + 0.5


def test_fusion_weights_shift_invariant_and_positive():
    from pacc.model import fusion_weights
    rng = np.random.default_rng(2)
    S = rng.normal(size=(6, 3))
    w = fusion_weights(ag.Tensor(S)).data
    shifted = fusion_weights(ag.Tensor(S + rng.normal(size=(6, 1)))).data
    np.testing.assert_allclose(w, shifted, atol=1e-15)
    assert (w > 0).all()
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_zero_encoder_gives_constant_rows():
    model, views, _, _ = tiny_problem()
    for name, p in model.params.items():
        if name.startswith("enc0.") and name.endswith(".W"):
            p.data[:] = 0.0
    Z = model.encode(0, views[0]).data
    np.testing.assert_array_equal(Z, np.broadcast_to(Z[0], Z.shape))
