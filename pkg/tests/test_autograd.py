import numpy as np
import pytest

from pacc import autograd as ag
from pacc import kernels
from pacc.errors import (FormatVersionMismatch, NonPositiveTemperature, NonScalarObjective,
                         ShapeMismatch)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def check_grad(build, *shapes, seed=0, rtol=1e-6, atol=1e-8, positive=False):
    rng = np.random.default_rng(seed)
    params = [ag.parameter(np.abs(rng.normal(size=s)) + 0.1 if positive else rng.normal(size=s))
              for s in shapes]
    out = build(*params)
    ag.backward(out)
    for p in params:
        num = numeric_grad(lambda: build(*params).item(), p.data)
        np.testing.assert_allclose(p.grad, num, rtol=rtol, atol=atol)


W = np.random.default_rng(99).normal(size=(4, 3))  # fixed projection to make scalar outputs


def _scalar(t):
    return ag.sum(ag.mul(t, ag.Tensor(W[: t.shape[0], : t.shape[1]])))


@pytest.mark.parametrize("name,build,shapes", [
    ("matmul", lambda a, b: _scalar(a @ b), [(4, 2), (2, 3)]),
    ("add_bias", lambda a, b: _scalar(a + b), [(4, 3), (3,)]),
    ("bias_add", lambda a, b: _scalar(b + a), [(4, 3), (3,)]),
    ("sub", lambda a, b: _scalar(a - b), [(4, 3), (4, 3)]),
    ("mul", lambda a, b: _scalar(a * b), [(4, 3), (4, 3)]),
    ("scale_rows", lambda a, s: _scalar(ag.scale_rows(a, s)), [(4, 3), (4, 1)]),
    ("tanh", lambda a: _scalar(ag.tanh(a)), [(4, 3)]),
    ("exp", lambda a: _scalar(ag.exp(a)), [(4, 3)]),
    ("transpose", lambda a: _scalar(a.T), [(3, 4)]),
    ("columns", lambda a: _scalar(ag.columns(a, 1, 3)), [(4, 5)]),
    ("mean_axis", lambda a: ag.sum(ag.mul(ag.mean(a, axis=0), ag.Tensor(W[0]))), [(4, 3)]),
    ("sum_keepdims", lambda a: _scalar(ag.sum(a, axis=1, keepdims=True)), [(4, 3)]),
    ("concat", lambda a, b: _scalar(ag.concat([a, b], axis=1)), [(4, 1), (4, 2)]),
    ("l2norm", lambda a: _scalar(ag.row_l2_normalize(a)), [(4, 3)]),
    ("softmax", lambda a: _scalar(ag.softmax(a, tau=0.7)), [(4, 3)]),
    ("log_softmax", lambda a: _scalar(ag.log_softmax(a, tau=0.3)), [(4, 3)]),
    ("cosine", lambda a, b: ag.sum(ag.mul(ag.cosine_similarity(a, b), ag.Tensor(W[:, 0]))),
     [(4, 3), (4, 3)]),
])
def test_op_gradients(name, build, shapes):
    check_grad(build, *shapes)


def test_log_and_relu_gradients():
    check_grad(lambda a: _scalar(ag.log(a)), (4, 3), positive=True)
    # relu away from the kink
    check_grad(lambda a: _scalar(ag.relu(a)), (4, 3), seed=3)


def test_log_floor_has_zero_gradient():
    x = ag.parameter(np.array([0.0, 2.0]))
    ag.backward(ag.sum(ag.log(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.5])
    assert ag.log(ag.Tensor([0.0])).data[0] == pytest.approx(np.log(1e-12))


def test_zero_row_normalization_is_flagged():
    x = ag.parameter(np.array([[0.0, 0.0], [3.0, 4.0]]))
    y = ag.row_l2_normalize(x)
    np.testing.assert_allclose(y.data, [[0, 0], [0.6, 0.8]])
    np.testing.assert_array_equal(y.flags["zero_rows"], [True, False])
    ag.backward(ag.sum(y))
    np.testing.assert_array_equal(x.grad[0], [0.0, 0.0])


def test_shared_node_accumulates():
    x = ag.parameter(np.array([[1.0, 2.0]]))
    y = x * x + x
    ag.backward(ag.sum(y))
    np.testing.assert_allclose(x.grad, [[3.0, 5.0]])


def test_backward_errors_and_unused_params():
    x = ag.parameter(np.ones((2, 2)))
    unused = ag.parameter(np.ones(3))
    with pytest.raises(NonScalarObjective):
        ag.backward(x * 2.0)
    (gx, gu) = ag.backward(ag.sum(x), [x, unused])
    np.testing.assert_array_equal(gx, np.ones((2, 2)))
    np.testing.assert_array_equal(gu, np.zeros(3))
    with pytest.raises(ShapeMismatch):
        ag.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeMismatch):
        ag.add(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ShapeMismatch):
        ag.mul(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(NonPositiveTemperature):
        ag.softmax(np.ones((2, 2)), tau=0.0)


def test_dropout_is_seeded_and_inverted():
    x = ag.Tensor(np.ones((50, 40)))
    a = ag.dropout(x, 0.5, True, (1, 2, 3)).data
    b = ag.dropout(x, 0.5, True, (1, 2, 3)).data
    c = ag.dropout(x, 0.5, True, (1, 2, 4)).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert set(np.unique(a)) == {0.0, 2.0}
    assert ag.dropout(x, 0.5, False, 0) is x
    with pytest.raises(ValueError):
        ag.dropout(x, 1.0, True, 0)


def test_adam_two_steps_by_hand():
    p = ag.parameter(np.array([1.0, -2.0]))
    st = ag.AdamState(lr=0.1)
    g1, g2 = np.array([0.5, -1.0]), np.array([0.1, 3.0])
    ag.adam_step([p], [g1], st)
    ag.adam_step([p], [g2], st)
    # manual recurrence
    m = v = np.zeros(2)
    w = np.array([1.0, -2.0])
    for t, g in enumerate([g1, g2], start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat, vhat = m / (1 - 0.9 ** t), v / (1 - 0.999 ** t)
        w = w - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
    np.testing.assert_allclose(p.data, w, rtol=1e-14)
    assert st.t == 2
    # the first step moves every coordinate by about lr
    q = ag.parameter(np.zeros(3))
    ag.adam_step([q], [np.array([1e-3, -5.0, 7.0])], ag.AdamState(lr=0.01))
    np.testing.assert_allclose(q.data, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_kernel_parity():
    rng = np.random.default_rng(5)
    states = []
    for fn in (kernels.adam_update_numpy, kernels.adam_update_numba):
        p, m, v = rng.normal(size=30), np.zeros(30), np.zeros(30)
        r = np.random.default_rng(0)
        for t in range(1, 6):
            fn(p, r.normal(size=30), m, v, 0.9, 0.999, 1e-2 / (1 - 0.9 ** t),
               1 / (1 - 0.999 ** t), 1e-8)
        states.append((p.copy(), m.copy(), v.copy()))
        rng = np.random.default_rng(5)
    for a, b in zip(*states):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_adam_rejects_bad_shapes():
    p = ag.parameter(np.zeros(3))
    with pytest.raises(ShapeMismatch):
        ag.adam_step([p], [np.zeros(4)], ag.AdamState())
    with pytest.raises(ShapeMismatch):
        ag.adam_step([p], [], ag.AdamState())


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    named = [("a.W", rng.normal(size=(3, 2))), ("a.b", rng.normal(size=2)),
             ("s", np.array(1.5))]
    cfg = {"model": {"latent_dim": 4}, "seed": 7}
    raw = ag.save_checkpoint(tmp_path / "c.ckpt", named, cfg)
    assert raw[:8] == b"PACCCKPT"
    back, cfg2 = ag.load_checkpoint(tmp_path / "c.ckpt")
    assert cfg2 == cfg
    assert [n for n, _ in back] == ["a.W", "a.b", "s"]
    for (_, a), (_, b) in zip(named, back):
        assert a.tobytes() == b.tobytes()
    # same content, same bytes
    assert ag.save_checkpoint(tmp_path / "d.ckpt", back, cfg2) == raw


def test_checkpoint_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(FormatVersionMismatch):
        ag.load_checkpoint(p)
    ag.save_checkpoint(p, [], {})
    raw = bytearray(p.read_bytes())
    raw[8] = 2
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatVersionMismatch, match="version"):
        ag.load_checkpoint(p)
