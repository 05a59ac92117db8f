"""Gradient tape checks: every op against central finite differences, and
the convolution forward against a quadruple-loop oracle."""

import numpy as np
import pytest

from freqadapt import autodiff as ad


def fd_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at array x."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * eps)
        it.iternext()
    return g


def check_op(build, arrays, rtol=1e-6, atol=1e-8):
    """build(tensors) -> scalar Tensor; checks each input's gradient by FD."""
    tensors = [ad.Tensor(a) for a in arrays]
    ad.backward(build(tensors))
    for t, a in zip(tensors, arrays):
        num = fd_grad(lambda: float(build([ad.Tensor(x) for x in arrays]).value), a)
        assert t.grad is not None
        np.testing.assert_allclose(t.grad, num, rtol=rtol, atol=atol)


def _sum(t: ad.Tensor) -> ad.Tensor:
    """Sum all entries to a scalar using only graph ops (flatten + matmul)."""
    flat = t.value.reshape(1, -1)
    view = ad.Tensor(flat, (t,))

    def back():
        t._acc(view.grad.reshape(t.value.shape))

    view._backward = back
    out = ad.matmul(view, ad.Tensor(np.ones((flat.shape[1], 1))))
    squeeze = ad.Tensor(out.value.reshape(()), (out,))

    def back2():
        out._acc(squeeze.grad.reshape(out.value.shape))

    squeeze._backward = back2
    return squeeze


def conv_naive(x, w, b, stride=1):
    n, c = x.shape[:2]
    spatial = x.shape[2:]
    o = w.shape[0]
    kshape = w.shape[2:]
    pads = [(k - 1) // 2 for k in kshape]
    out_sp = tuple(s if stride == 1 else s // stride for s in spatial)
    out = np.zeros((n, o) + out_sp)
    for ni in range(n):
        for oi in range(o):
            for pos in np.ndindex(*out_sp):
                acc = b[oi]
                for ci in range(c):
                    for kidx in np.ndindex(*kshape):
                        src = tuple(
                            pos[d] * stride + kidx[d] - pads[d] for d in range(len(spatial))
                        )
                        if all(0 <= src[d] < spatial[d] for d in range(len(spatial))):
                            acc += x[(ni, ci) + src] * w[(oi, ci) + kidx]
                out[(ni, oi) + pos] = acc
    return out


# ------------------------------------------------------------------- forward


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_naive(stride):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = ad.conv(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b), stride=stride)
    ref = conv_naive(x, w, b, stride)
    np.testing.assert_allclose(out.value, ref, rtol=1e-12, atol=1e-12)


def test_conv3d_matches_naive():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 2, 4, 5, 3))
    w = rng.normal(size=(3, 2, 3, 1, 3))
    b = rng.normal(size=3)
    out = ad.conv(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b))
    np.testing.assert_allclose(out.value, conv_naive(x, w, b), rtol=1e-12, atol=1e-12)


def test_conv_rank_mismatch():
    with pytest.raises(ValueError):
        ad.conv(ad.Tensor(np.zeros((1, 1, 4))), ad.Tensor(np.zeros((1, 1, 3, 3))), ad.Tensor(np.zeros(1)))


def test_batchnorm_train_normalizes():
    rng = np.random.default_rng(2)
    x = rng.normal(loc=3.0, scale=2.5, size=(8, 4, 5, 5))
    out, mean, var = ad.batchnorm_train(
        ad.Tensor(x), ad.Tensor(np.ones(4)), ad.Tensor(np.zeros(4))
    )
    axes = (0, 2, 3)
    np.testing.assert_allclose(out.value.mean(axis=axes), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.value.std(axis=axes), 1.0, atol=1e-3)  # eps slack
    np.testing.assert_allclose(mean, x.mean(axis=axes), rtol=1e-12)
    np.testing.assert_allclose(var, x.var(axis=axes), rtol=1e-9, atol=1e-12)


def test_batchnorm_eval_uses_running_stats():
    x = np.array([[[[2.0, 4.0]]]])
    rm, rv = np.array([1.0]), np.array([4.0])
    out = ad.batchnorm_eval(
        ad.Tensor(x), ad.Tensor(np.array([3.0])), ad.Tensor(np.array([0.5])), rm, rv
    )
    want = 3.0 * (x - 1.0) / np.sqrt(4.0 + ad.BN_EPS) + 0.5
    np.testing.assert_allclose(out.value, want, rtol=1e-12)


def test_softmax_ce_uniform_logits_is_log_c():
    for c in (2, 3, 5):
        logits = ad.Tensor(np.zeros((4, c)))
        loss, probs = ad.softmax_cross_entropy(logits, np.zeros(4, dtype=int))
        assert abs(float(loss.value) - np.log(c)) < 1e-9
        np.testing.assert_allclose(probs, 1.0 / c, rtol=1e-12)


def test_softmax_ce_label_validation():
    logits = ad.Tensor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ad.softmax_cross_entropy(logits, np.array([0, 2]))
    with pytest.raises(ValueError):
        ad.softmax_cross_entropy(logits, np.array([0]))


def test_channel_max_tie_routes_to_first():
    x = np.zeros((1, 3, 2))
    x[0, 0, 0] = 5.0
    x[0, 2, 0] = 5.0  # tie with channel 0
    t = ad.Tensor(x)
    trace = []
    out = ad.channel_max(t, trace)
    ad.backward(_sum(out))
    assert trace[0][0, 0] == 0
    assert t.grad[0, 0, 0] == 1.0
    assert t.grad[0, 2, 0] == 0.0


def test_grad_reverse_forward_identity_backward_negation():
    x = ad.Tensor(np.array([[1.0, -2.0]]))
    out = ad.grad_reverse(x, 0.3)
    np.testing.assert_array_equal(out.value, x.value)
    ad.backward(_sum(out))
    np.testing.assert_allclose(x.grad, -0.3 * np.ones((1, 2)))
    with pytest.raises(ValueError):
        ad.grad_reverse(x, -0.1)


def test_grad_reverse_zero_blocks_gradient():
    x = ad.Tensor(np.ones((2, 2)))
    ad.backward(_sum(ad.grad_reverse(x, 0.0)))
    np.testing.assert_array_equal(x.grad, np.zeros((2, 2)))


def test_dropout_scaling_and_determinism():
    x = ad.Tensor(np.ones((4, 100)))
    out1 = ad.dropout(x, 0.5, np.random.default_rng(7))
    out2 = ad.dropout(x, 0.5, np.random.default_rng(7))
    np.testing.assert_array_equal(out1.value, out2.value)
    vals = np.unique(out1.value)
    assert set(vals).issubset({0.0, 2.0})
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, np.random.default_rng(0))


def test_channelwise_l2_identical_maps_is_zero():
    a = np.random.default_rng(3).normal(size=(2, 4, 3, 3))
    out = ad.channelwise_l2_mean(ad.Tensor(a), ad.Tensor(a.copy()))
    assert float(out.value) == 0.0


def test_channelwise_l2_constant_offset_single_channel():
    # single channel, |a-b| = |c| everywhere, mean of per-position l2 = |c|
    for c in (0.75, -1.5):
        a = np.random.default_rng(4).normal(size=(3, 1, 4, 4))
        b = a + c
        out = ad.channelwise_l2_mean(ad.Tensor(a), ad.Tensor(b))
        assert abs(float(out.value) - abs(c)) < 1e-9


def test_channelwise_l2_shape_mismatch():
    with pytest.raises(ValueError):
        ad.channelwise_l2_mean(ad.Tensor(np.zeros((1, 2, 3))), ad.Tensor(np.zeros((1, 2, 4))))


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        ad.backward(ad.Tensor(np.zeros(3)))


def test_gradient_accumulates_across_reuse():
    x = ad.Tensor(np.array(2.0).reshape(()))
    y = ad.add(x, x)
    ad.backward(y)
    assert x.grad == pytest.approx(2.0)


# ------------------------------------------------- finite difference sweeps


def test_fd_add_mul_broadcast():
    rng = np.random.default_rng(10)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(1, 4))
    check_op(lambda ts: _sum(ad.mul(ad.add(ts[0], ts[1]), ts[0])), [a, b])


def test_fd_matmul():
    rng = np.random.default_rng(11)
    check_op(
        lambda ts: _sum(ad.matmul(ts[0], ts[1])),
        [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))],
    )


def test_fd_relu_away_from_kink():
    rng = np.random.default_rng(12)
    a = rng.normal(size=(3, 5))
    a[np.abs(a) < 0.05] = 0.1  # keep clear of the kink
    check_op(lambda ts: _sum(ad.relu(ts[0])), [a])


def test_fd_sigmoid():
    rng = np.random.default_rng(13)
    check_op(lambda ts: _sum(ad.sigmoid(ts[0])), [rng.normal(size=(2, 6))])


@pytest.mark.parametrize("stride", [1, 2])
def test_fd_conv(stride):
    rng = np.random.default_rng(14)
    x = rng.normal(size=(2, 2, 5, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    check_op(lambda ts: _sum(ad.conv(ts[0], ts[1], ts[2], stride=stride)), [x, w, b], rtol=1e-5)


def test_fd_batchnorm_train():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(4, 3, 2, 2))
    g = rng.normal(size=3) + 2.0
    be = rng.normal(size=3)
    check_op(lambda ts: _sum(ad.batchnorm_train(ts[0], ts[1], ts[2])[0]), [x, g, be], rtol=1e-4, atol=1e-6)


def test_fd_batchnorm_eval():
    rng = np.random.default_rng(16)
    x = rng.normal(size=(4, 3, 2, 2))
    rm = rng.normal(size=3)
    rv = rng.random(3) + 0.5
    check_op(
        lambda ts: _sum(ad.batchnorm_eval(ts[0], ts[1], ts[2], rm, rv)),
        [x, rng.normal(size=3), rng.normal(size=3)],
    )


def test_fd_pool_concat_channelmax():
    rng = np.random.default_rng(17)
    a = rng.normal(size=(2, 3, 4, 4))
    b = rng.normal(size=(2, 2, 4, 4))

    def build(ts):
        cc = ad.concat_channels(ts[0], ts[1])
        cm = ad.channel_max(cc)
        mean = ad.channel_mean(cc)
        both = ad.concat_channels(cm, mean)
        return _sum(ad.global_mean_pool(both))

    check_op(build, [a, b], rtol=1e-5)


def test_fd_concat_batch_and_weighted():
    rng = np.random.default_rng(18)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(4, 3))

    def build(ts):
        cb = ad.concat_batch(ts[0], ts[1])
        return ad.add_weighted([(0.7, _sum(cb)), (-0.2, _sum(ts[0]))])

    check_op(build, [a, b])


def test_fd_softmax_ce():
    rng = np.random.default_rng(19)
    logits = rng.normal(size=(5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    check_op(lambda ts: ad.softmax_cross_entropy(ts[0], labels)[0], [logits])


def test_fd_channelwise_l2():
    rng = np.random.default_rng(20)
    a = rng.normal(size=(2, 3, 3, 3))
    b = a + rng.normal(size=a.shape)  # well away from the r=0 kink
    check_op(lambda ts: ad.channelwise_l2_mean(ts[0], ts[1]), [a, b], rtol=1e-5)


def test_fd_grad_reverse_chain():
    rng = np.random.default_rng(21)
    a = rng.normal(size=(3, 3))

    def build_plain(ts):
        return _sum(ad.mul(ts[0], ts[0]))

    tensors = [ad.Tensor(a)]
    loss = _sum(ad.grad_reverse(ad.mul(tensors[0], tensors[0]), 0.6))
    ad.backward(loss)
    plain = [ad.Tensor(a)]
    ad.backward(build_plain(plain))
    np.testing.assert_allclose(tensors[0].grad, -0.6 * plain[0].grad, rtol=1e-12)
