"""Adam against a hand-rolled reference and the finite-difference checker
against losses with known-good and deliberately broken gradients."""

import numpy as np
import pytest

from freqadapt import optim


def reference_adam(params, grads_seq, lr, betas=(0.9, 0.999), eps=1e-8):
    """Textbook bias-corrected Adam, one dict of arrays, full history."""
    b1, b2 = betas
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    out = {k: p.copy() for k, p in params.items()}
    for t, grads in enumerate(grads_seq, start=1):
        for k, g in grads.items():
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mhat = m[k] / (1 - b1**t)
            vhat = v[k] / (1 - b2**t)
            out[k] = out[k] - lr * mhat / (np.sqrt(vhat) + eps)
    return out


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(0)
    params = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    grads_seq = [
        {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=4)} for _ in range(7)
    ]
    want = reference_adam(params, grads_seq, lr=0.01)
    live = {k: v.copy() for k, v in params.items()}
    state = optim.AdamState()
    for grads in grads_seq:
        optim.adam_update(live, grads, state, lr=0.01)
    assert state.t == 7
    for k in params:
        np.testing.assert_allclose(live[k], want[k], rtol=1e-12, atol=1e-15)


def test_adam_first_step_is_signed_lr():
    # bias correction makes step one equal lr * sign(g) up to eps
    params = {"w": np.zeros(3)}
    g = np.array([2.0, -0.5, 1e-3])
    optim.adam_update(params, {"w": g.copy()}, optim.AdamState(), lr=0.1)
    np.testing.assert_allclose(params["w"], -0.1 * np.sign(g), rtol=1e-5)


def test_adam_updates_only_given_keys():
    params = {"w": np.ones(2), "frozen": np.ones(2)}
    optim.adam_update(params, {"w": np.ones(2)}, optim.AdamState(), lr=0.1)
    np.testing.assert_array_equal(params["frozen"], np.ones(2))
    assert not np.array_equal(params["w"], np.ones(2))


def test_adam_validation():
    with pytest.raises(ValueError):
        optim.adam_update({"w": np.ones(1)}, {"w": np.ones(1)}, optim.AdamState(), lr=0.0)
    with pytest.raises(ValueError):
        optim.adam_update(
            {"w": np.ones(1)}, {"w": np.ones(1)}, optim.AdamState(), lr=0.1, betas=(1.0, 0.9)
        )


def test_adam_state_carries_momentum():
    # same gradient twice: second step keeps moving the same direction
    params = {"w": np.zeros(1)}
    state = optim.AdamState()
    g = {"w": np.array([1.0])}
    optim.adam_update(params, g, state, lr=0.1)
    after1 = params["w"].copy()
    optim.adam_update(params, g, state, lr=0.1)
    assert params["w"][0] < after1[0] < 0.0


# -------------------------------------------------------- gradient_check


def quadratic_loss(params, need_grad):
    # f = sum(w^2) + sum(3b), exact gradients, no kinks
    w, b = params["w"], params["b"]
    val = float((w * w).sum() + 3.0 * b.sum())
    grads = {"w": 2.0 * w, "b": np.full_like(b, 3.0)} if need_grad else None
    return val, grads, []


def test_gradient_check_accepts_exact_gradients():
    params = {"w": np.random.default_rng(1).normal(size=(4, 3)), "b": np.ones(2)}
    report = optim.gradient_check(quadratic_loss, params)
    assert report.ok
    assert report.n_checked == 14
    assert report.n_excluded == 0
    assert report.max_rel_err < 1e-6
    assert set(report.per_tensor) == {"w", "b"}


def test_gradient_check_flags_wrong_gradient():
    def broken(params, need_grad):
        w = params["w"]
        val = float((w * w).sum())
        grads = {"w": 2.5 * w} if need_grad else None  # off by 25 percent
        return val, grads, []

    params = {"w": np.random.default_rng(2).normal(size=5) + 1.0}
    report = optim.gradient_check(broken, params)
    assert not report.ok
    assert report.max_rel_err > 0.1
    assert report.worst_name.startswith("w[")


def test_gradient_check_excludes_kink_crossings():
    # |w| has a kink at 0; elements near 0 flip the sign trace under +/-eps
    def abs_loss(params, need_grad):
        w = params["w"]
        trace = [w > 0]
        grads = {"w": np.sign(w)} if need_grad else None
        return float(np.abs(w).sum()), grads, trace

    params = {"w": np.array([1.0, -1.0, 1e-5, 2.0])}
    report = optim.gradient_check(abs_loss, params, eps=1e-3)
    assert report.ok
    assert report.n_excluded == 1
    assert report.n_checked == 3


def test_gradient_check_max_per_tensor_caps_probes():
    params = {"w": np.random.default_rng(3).normal(size=100)}
    report = optim.gradient_check(
        quadratic_loss_w_only, params, max_per_tensor=10, rng=np.random.default_rng(4)
    )
    assert report.n_checked == 10


def quadratic_loss_w_only(params, need_grad):
    w = params["w"]
    grads = {"w": 2.0 * w} if need_grad else None
    return float((w * w).sum()), grads, []


def test_gradient_check_requires_gradients():
    def no_grads(params, need_grad):
        return 0.0, None, []

    with pytest.raises(ValueError):
        optim.gradient_check(no_grads, {"w": np.ones(1)})


def test_gradient_check_restores_parameters():
    params = {"w": np.random.default_rng(5).normal(size=6), "b": np.ones(3)}
    snap = {k: v.copy() for k, v in params.items()}
    optim.gradient_check(quadratic_loss, params)
    for k in params:
        np.testing.assert_array_equal(params[k], snap[k])


def test_report_text_mentions_worst_tensor():
    params = {"w": np.random.default_rng(6).normal(size=3), "b": np.ones(2)}
    text = optim.gradient_check(quadratic_loss, params).as_text()
    assert "ok=True" in text
    assert "max_rel_err=" in text
    assert "w:" in text and "b:" in text
