import numpy as np
import pytest

from gaid import tensor_core as tc
from gaid.fusion import (
    AttnParams,
    GateParams,
    Granularity,
    aggregate,
    aggregate_backward,
    fuse,
    fuse_backward,
    gate,
    gate_backward,
)
from oracles import aggregate_loop, frame_gates_loop


def _feats(rng, B=2, F=3, d=4):
    return rng.standard_normal((B, F, d)), rng.standard_normal((B, F, d)), rng.standard_normal((B, d))


def _attn(rng, d, scale=0.5):
    return AttnParams(*(scale * rng.standard_normal((d, d)) for _ in range(4)))


def _numgrad(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = fn()
        x[idx] = old - h
        down = fn()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


@pytest.mark.parametrize("gran,shape", [("sample", (2,)), ("frame", (2, 3)), ("token", (2, 3, 4))])
def test_zero_gate_params_give_half(rng, gran, shape):
    f, a, t = _feats(rng)
    g, _ = gate(f, a, t, GateParams.zeros(4, gran))
    assert g.shape == shape
    assert np.all(g == 0.5)


def test_saturated_bias_gives_one(rng):
    f, a, t = _feats(rng)
    p = GateParams.zeros(4, "frame", np.float64)
    p.b_g[:] = 40.0
    g, _ = gate(f, a, t, p)
    np.testing.assert_allclose(g, 1.0, atol=1e-15)


def test_frame_gate_matches_loop(rng, f64):
    f, a, t = _feats(rng)
    p = GateParams(rng.standard_normal((1, 12)), rng.standard_normal(1), Granularity.FRAME)
    g, _ = gate(f, a, t, p)
    np.testing.assert_allclose(g, frame_gates_loop(f, a, t, p.W_g, p.b_g), atol=1e-12, rtol=0)


def test_gate_rejects_bad_shapes(rng):
    f, a, t = _feats(rng)
    with pytest.raises(tc.DimensionError):
        gate(f, a[:, :2], t, GateParams.zeros(4, "frame"))
    with pytest.raises(tc.DimensionError):
        gate(f, a, t, GateParams.zeros(5, "frame"))
    with pytest.raises(ValueError):
        gate(f, a, t, GateParams(np.zeros((1, 12)), np.zeros(1), Granularity.NONE))


def test_fuse_extremes(rng):
    f, a, _ = _feats(rng)
    np.testing.assert_array_equal(fuse(f, a, np.zeros((2, 3))), f)
    np.testing.assert_array_equal(fuse(f, a, np.ones((2, 3))), a)
    g = rng.random((2, 3))
    np.testing.assert_array_equal(fuse(f, np.zeros_like(a), g), (1 - g)[..., None] * f)


def test_fuse_shape_check(rng):
    f, a, _ = _feats(rng)
    with pytest.raises(tc.DimensionError):
        fuse(f, a, np.zeros((3, 2)))


def test_frame_equals_sample_on_static_clips(rng, f64):
    B, F, d = 3, 4, 5
    f = np.repeat(rng.standard_normal((B, 1, d)), F, axis=1)
    a = np.repeat(rng.standard_normal((B, 1, d)), F, axis=1)
    t = rng.standard_normal((B, d))
    W, b = rng.standard_normal((1, 3 * d)), rng.standard_normal(1)
    gf, _ = gate(f, a, t, GateParams(W, b, Granularity.FRAME))
    gs, _ = gate(f, a, t, GateParams(W, b, Granularity.SAMPLE))
    np.testing.assert_array_equal(fuse(f, a, gf), fuse(f, a, gs))


def test_aggregate_matches_loop(rng, f64):
    v = rng.standard_normal((2, 3, 4))
    t = rng.standard_normal((2, 4))
    p = _attn(rng, 4)
    e, _ = aggregate(v, t, p)
    np.testing.assert_allclose(e, aggregate_loop(v, t, p.W_q, p.W_k, p.W_v, p.W_o), atol=1e-12, rtol=0)


def test_aggregate_uniform_attention(rng, f64):
    v = rng.standard_normal((2, 5, 4))
    t = rng.standard_normal((2, 4))
    p = _attn(rng, 4)
    p.W_q[:] = 0
    p.W_k[:] = 0
    e, cache = aggregate(v, t, p)
    np.testing.assert_allclose(cache[5], 0.2, atol=1e-15)
    m = v.mean(axis=1)
    u = (m @ p.W_v) @ p.W_o + m
    np.testing.assert_allclose(e, u / np.linalg.norm(u, axis=1, keepdims=True), atol=1e-12)


def test_aggregate_single_frame_weight_one(rng):
    v = rng.standard_normal((3, 1, 4))
    _, cache = aggregate(v, rng.standard_normal((3, 4)), _attn(rng, 4, 3.0))
    assert np.all(cache[5] == 1.0)


def test_aggregate_unit_norm(rng):
    e, _ = aggregate(rng.standard_normal((4, 6, 8)), rng.standard_normal((4, 8)), _attn(rng, 8))
    np.testing.assert_allclose(np.linalg.norm(e, axis=-1), 1.0, atol=1e-6)


@pytest.mark.parametrize("gran", ["sample", "frame", "token"])
def test_gate_and_fuse_backward(rng, f64, gran):
    f, a, t = _feats(rng)
    g_out = 4 if gran == "token" else 1
    p = GateParams(rng.standard_normal((g_out, 12)), rng.standard_normal(g_out), Granularity(gran))
    w = rng.standard_normal(f.shape)

    def loss():
        g, _ = gate(f, a, t, p)
        return float(np.sum(w * fuse(f, a, g)))

    g, cache = gate(f, a, t, p)
    df1, da1, dg = fuse_backward(w, f, a, g)
    dW, db, df2, da2, dt = gate_backward(dg, cache, p)
    for analytic, x in ((dW, p.W_g), (db, p.b_g), (df1 + df2, f), (da1 + da2, a), (dt, t)):
        np.testing.assert_allclose(analytic, _numgrad(loss, x), atol=1e-8, rtol=1e-6)


@pytest.mark.parametrize("with_mask", [False, True])
def test_aggregate_backward(rng, f64, with_mask):
    v = rng.standard_normal((2, 3, 4))
    t = rng.standard_normal((2, 4))
    p = _attn(rng, 4)
    mask = (rng.random((2, 3)) > 0.3) / 0.7 if with_mask else None
    w = rng.standard_normal((2, 4))

    def loss():
        return float(np.sum(w * aggregate(v, t, p, mask)[0]))

    _, cache = aggregate(v, t, p, mask)
    dv, dt, dp = aggregate_backward(w, cache, p)
    np.testing.assert_allclose(dv, _numgrad(loss, v), atol=1e-8, rtol=1e-6)
    np.testing.assert_allclose(dt, _numgrad(loss, t), atol=1e-8, rtol=1e-6)
    for k in ("W_q", "W_k", "W_v", "W_o"):
        np.testing.assert_allclose(getattr(dp, k), _numgrad(loss, getattr(p, k)), atol=1e-8, rtol=1e-6)
