import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from gradcheck import COMBOS, SCHEMA, check_case, rel_error, sample_case
from rexflow.corpus import Span
from rexflow.crcnn import (
    CRCNN,
    LossConfig,
    ModelSpec,
    StaleCacheError,
    backward,
    checkpoint_bytes,
    forward,
    init_params,
    load_checkpoint,
    piecewise_segments,
    predict,
    ranking_loss,
    representation_size,
    save_checkpoint,
)
from rexflow.errors import ConfigError

CFG = LossConfig()


def _params(rng, D, sizes, nf, C, pooling, sdim=0):
    return init_params(rng, np.zeros((1, 2)), D, 2, 3, sizes, nf, C, pooling, sdim)


# --- loss -----------------------------------------------------------------

def test_loss_at_both_margins():
    loss, _ = ranking_loss(np.array([2.5, -0.5, -3.0]), 0, CFG)
    assert loss == pytest.approx(2 * math.log(2.0), abs=1e-12)
    assert loss == pytest.approx(1.386294, abs=1e-6)


def test_loss_vanishes_for_confident_correct_scores():
    loss, grad = ranking_loss(np.array([60.0, -60.0]), 0, CFG)
    assert loss < 1e-40
    assert np.all(np.abs(grad) < 1e-40)


def test_null_example_only_penalizes_the_best_score():
    cfg = LossConfig(score_null=False)
    s = np.array([0.3, -1.0, 0.7])
    loss, grad = ranking_loss(s, None, cfg)
    assert loss == pytest.approx(math.log1p(math.exp(2 * (0.5 + 0.7))))
    assert np.flatnonzero(grad).tolist() == [2]


@settings(max_examples=200)
@given(st.lists(st.floats(-4, 4), min_size=2, max_size=6), st.data())
def test_loss_gradient_matches_finite_differences(scores, data):
    s = np.array(scores)
    gold = data.draw(st.one_of(st.none(), st.integers(0, len(s) - 1)))
    others = np.delete(s, gold) if gold is not None else s
    top = np.sort(others)[::-1]
    # the competitor argmax must not switch within the step
    assume(len(top) < 2 or top[0] - top[1] > 1e-4)
    cfg = LossConfig(score_null=gold is not None)
    _, g = ranking_loss(s, gold, cfg)
    eps = 1e-6
    num = np.zeros_like(s)
    for i in range(len(s)):
        up, down = s.copy(), s.copy()
        up[i] += eps
        down[i] -= eps
        num[i] = (ranking_loss(up, gold, cfg)[0] - ranking_loss(down, gold, cfg)[0]) / (2 * eps)
    err = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-3)
    assert err.max() < 1e-6


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(gamma=0)
    with pytest.raises(ConfigError):
        LossConfig(m_pos=0.5, m_neg=0.5)


# --- predict --------------------------------------------------------------

def test_predict_argmax():
    assert predict(np.array([0.2, 1.4, -3.0]), CFG) == 1


def test_predict_threshold_returns_null():
    assert predict(np.array([-0.2, -1.4]), LossConfig(score_null=False)) is None
    assert predict(np.array([-0.2, -1.4]), CFG) == 0


def test_predict_tie_goes_to_lowest_index():
    assert predict(np.array([1.0, 1.0]), CFG) == 0


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(0.01, 5), st.booleans())
def test_predict_ignores_loss_scale(scores, c, score_null):
    s = np.array(scores)
    a = LossConfig(score_null=score_null)
    b = LossConfig(gamma=a.gamma + c, m_pos=a.m_pos + c, m_neg=a.m_neg + c, score_null=score_null)
    assert predict(s, a) == predict(s, b)


# --- forward --------------------------------------------------------------

def test_single_token_with_wide_windows():
    rng = np.random.default_rng(0)
    p = _params(rng, 6, [2, 3, 4], 5, 4, "max")
    s, cache = forward(rng.normal(size=(1, 6)), p)
    assert s.shape == (4,) and np.all(np.isfinite(s))
    assert cache.R.shape == (1, representation_size(5, [2, 3, 4], "max"))


@settings(max_examples=60)
@given(st.integers(1, 12), st.lists(st.integers(1, 5), min_size=1, max_size=3, unique=True),
       st.sampled_from(["max", "piecewise"]), st.integers(0, 3), st.integers(1, 4), st.integers(0, 2**31))
def test_output_shapes(n, sizes, pooling, sdim, C, seed):
    rng = np.random.default_rng(seed)
    p = _params(rng, 4, sizes, 3, C, pooling, sdim)
    e1 = Span(0, 0)
    e2 = Span(n - 1, n - 1)
    s, cache = forward(rng.normal(size=(n, 4)), p, pooling, e1, e2, rng.normal(size=sdim) if sdim else None)
    assert s.shape == (C,)
    assert cache.R.shape[1] == representation_size(3, sizes, pooling, sdim)


def test_piecewise_segments_follow_entity_ends():
    n = 7
    assert piecewise_segments(n, Span(0, 0), Span(n - 1, n - 1)) == [(0, 1), (1, n), (n, n)]
    assert piecewise_segments(n, Span(4, 5), Span(1, 2)) == [(0, 3), (3, 6), (6, 7)]


def test_piecewise_middle_segment_is_pooled_from_its_own_tokens():
    rng = np.random.default_rng(1)
    n, D = 6, 3
    p = _params(rng, D, [1], 2, 2, "piecewise")
    X = rng.normal(size=(n, D))
    _, cache = forward(X, p, "piecewise", Span(0, 0), Span(n - 1, n - 1))
    A = np.tanh(X @ p.filters[1].T + p.biases[1])
    r = cache.R[0]
    np.testing.assert_allclose(r[0:2], A[0])
    np.testing.assert_allclose(r[2:4], A[1:n].max(axis=0))
    np.testing.assert_array_equal(r[4:6], 0.0)


def test_max_and_piecewise_agree_on_one_token():
    rng = np.random.default_rng(2)
    sizes, nf, C, D = [2, 3, 4], 3, 4, 5
    pm = _params(rng, D, sizes, nf, C, "max")
    pp = _params(rng, D, sizes, nf, C, "piecewise")
    for h in sizes:
        pp.filters[h] = pm.filters[h].copy()
        pp.biases[h] = rng.normal(size=nf)
        pm.biases[h] = pp.biases[h].copy()
    # first segment of each window size carries the max-pool block
    for k in range(len(sizes)):
        pp.W[:, 3 * nf * k:3 * nf * k + nf] = pm.W[:, nf * k:nf * (k + 1)]
    X = rng.normal(size=(1, D))
    sm, _ = forward(X, pm, "max")
    sp, _ = forward(X, pp, "piecewise", Span(0, 0), Span(0, 0))
    np.testing.assert_allclose(sm, sp, rtol=0, atol=1e-12)


def test_piecewise_without_spans_is_rejected():
    rng = np.random.default_rng(0)
    p = _params(rng, 3, [2], 2, 2, "piecewise")
    with pytest.raises(ConfigError):
        forward(np.ones((3, 3)), p, "piecewise")


@settings(max_examples=60)
@given(st.integers(2, 8), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_translation_within_padding_keeps_window_outputs(n, k, h, seed):
    rng = np.random.default_rng(seed)
    D = 3
    p = _params(rng, D, [h], 2, 3, "max")
    p.biases[h][:] = 0.0
    X = rng.normal(size=(n, D))
    shifted = np.vstack([np.zeros((k, D)), X, np.zeros((k, D))])
    s0, c0 = forward(X, p, "max", Span(0, 0), Span(n - 1, n - 1))
    s1, c1 = forward(shifted, p, "max", Span(k, k), Span(k + n - 1, k + n - 1))
    np.testing.assert_allclose(c1.convs[0].A[k:k + n], c0.convs[0].A, atol=1e-12)
    if h == 1:
        # added positions see only zero rows and output tanh(0) = 0
        assume(np.all(c0.convs[0].A.max(axis=0) > 0))
        np.testing.assert_allclose(s1, s0, atol=1e-12)


# --- backward -------------------------------------------------------------

def _fd_low_level(X, p, pooling, e1, e2, cls, gold, eps=1e-6):
    def loss():
        s, _ = forward(X, p, pooling, e1, e2, cls)
        return ranking_loss(s, gold, CFG)[0]

    s, cache = forward(X, p, pooling, e1, e2, cls)
    _, ds = ranking_loss(s, gold, CFG)
    g = backward(cache, ds)
    pairs = [(X, g.X), (p.W, g.W), (cls, g.cls)]
    for h in p.filters:
        pairs += [(p.filters[h], g.filters[h]), (p.biases[h], g.biases[h])]
    worst = 0.0
    for arr, ana in pairs:
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            up = loss()
            arr[idx] = old - eps
            down = loss()
            arr[idx] = old
            num[idx] = (up - down) / (2 * eps)
        worst = max(worst, float(rel_error(ana, num).max()))
    return worst


@pytest.mark.parametrize("pooling", ["max", "piecewise"])
def test_tiny_model_gradients(pooling):
    rng = np.random.default_rng(3)
    n, D = 5, 6
    p = _params(rng, D, [2, 3], 2, 4, pooling, sdim=3)
    for h in p.filters:
        p.filters[h] *= 2.0
    X = rng.normal(size=(n, D))
    cls = rng.normal(size=3)
    assert _fd_low_level(X, p, pooling, Span(1, 1), Span(3, 4), cls, gold=2) < 1e-5


def test_unpooled_positions_get_exactly_zero_gradient():
    rng = np.random.default_rng(4)
    n = 6
    p = _params(rng, 3, [1], 1, 2, "max")
    s, cache = forward(rng.normal(size=(n, 3)), p)
    g = backward(cache, np.array([1.0, -0.5]))
    winners = {int(cache.convs[0].argmax[0][0][0])}
    for j in range(n):
        if j not in winners:
            assert np.all(g.X[j] == 0.0)
    assert np.any(g.X[next(iter(winners))] != 0.0)


def test_gradients_are_linear_in_the_upstream_signal():
    rng = np.random.default_rng(5)
    p = _params(rng, 4, [2, 3], 3, 3, "piecewise", sdim=2)
    s, cache = forward(rng.normal(size=(6, 4)), p, "piecewise", Span(0, 1), Span(3, 3), rng.normal(size=2))
    d = rng.normal(size=3)
    g1, g2 = backward(cache, d), backward(cache, 2 * d)
    np.testing.assert_allclose(g2.X, 2 * g1.X, rtol=1e-14)
    np.testing.assert_allclose(g2.W, 2 * g1.W, rtol=1e-14)
    np.testing.assert_allclose(g2.cls, 2 * g1.cls, rtol=1e-14)
    for h in p.filters:
        np.testing.assert_allclose(g2.filters[h], 2 * g1.filters[h], rtol=1e-14)
        np.testing.assert_allclose(g2.biases[h], 2 * g1.biases[h], rtol=1e-14)


def test_stale_cache_is_refused():
    rng = np.random.default_rng(6)
    p = _params(rng, 3, [2], 2, 2, "max")
    _, cache = forward(rng.normal(size=(4, 3)), p)
    p.bump()
    with pytest.raises(StaleCacheError):
        backward(cache, np.ones(2))


@pytest.mark.parametrize("pooling,contextual", COMBOS)
def test_model_gradients_cover_embeddings(pooling, contextual):
    rng = np.random.default_rng(hash((pooling, contextual)) % 1000)
    for _ in range(3):
        worst = check_case(sample_case(rng, pooling, contextual))
        assert max(worst.values()) < 1e-5, worst


def test_batch_gradient_is_sum_of_instance_gradients():
    rng = np.random.default_rng(7)
    case = sample_case(rng, "piecewise", "tokens")
    while len(case.encoded) < 2:
        case = sample_case(rng, "piecewise", "tokens")
    model = case.model
    total, g = model.loss_and_grads(case.encoded)
    parts = [model.loss_and_grads(e) for e in case.encoded]
    assert total == pytest.approx(sum(l for l, _ in parts), rel=1e-12)
    for name, arr in model.params.named():
        if isinstance(g[name], tuple):
            def dense(t):
                d = np.zeros_like(arr)
                np.add.at(d, t[0], t[1])
                return d
            np.testing.assert_allclose(dense(g[name]), sum(dense(pg[name]) for _, pg in parts), atol=1e-12)
        else:
            np.testing.assert_allclose(g[name], sum(pg[name] for _, pg in parts), atol=1e-12)


# --- model wrapper and checkpoints -----------------------------------------

def _model(seed, score_null=True):
    return CRCNN.build(SCHEMA, ModelSpec(word_dim=4), LossConfig(score_null=score_null), ["a", "b", "c"],
                       window_sizes=[2, 3], n_filters=3, pos_dim=2, max_dist=5, seed=seed)


def test_scored_classes_drop_null_when_unscored():
    assert _model(0).params.W.shape[0] == 4
    assert _model(0, score_null=False).params.W.shape[0] == 3


def test_checkpoint_round_trip(tmp_path):
    m = _model(11)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m.params, path, 11, {"note": "x"})
    params, seed, meta = load_checkpoint(path)
    assert seed == 11 and meta == {"note": "x"}
    for (na, a), (nb, b) in zip(m.params.named(), params.named()):
        assert na == nb
        np.testing.assert_array_equal(a, b)
    assert checkpoint_bytes(params, 11, {"note": "x"}) == path.read_bytes()


def test_checkpoint_bytes_are_stable_across_builds():
    assert checkpoint_bytes(_model(3).params, 3) == checkpoint_bytes(_model(3).params, 3)
    assert checkpoint_bytes(_model(3).params, 3) != checkpoint_bytes(_model(4).params, 4)
