import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifagents import nn
from ifagents.errors import CheckpointError, DimMismatch, SeqTooLong
from ifagents.nn import autodiff as ad


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def generic_point(shapes, seed, spread=0.5):
    """Well-conditioned parameters for gradient checks: the +/-0.08 init
    makes many gradients ~1e-8, where central differences lose to roundoff."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, (shape, kind) in shapes.items():
        if kind == "scale":
            out[name] = 1.0 + rng.uniform(-0.3, 0.3, size=shape)
        else:
            out[name] = rng.uniform(-spread, spread, size=shape)
    return out


# -- init


def test_init_deterministic_and_bounded():
    shapes = {"w": ((4, 5), "weight"), "b": ((5,), "bias"), "s": ((3,), "scale")}
    a, b = nn.init_params(shapes, 3), nn.init_params(shapes, 3)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert np.all(a["b"] == 0.0)
    assert np.all(np.abs(a["w"]) < 0.08)
    assert np.all(a["s"] == 1.0)


# -- GRU


def test_gru_zero_params_zero_hidden():
    p = {k: np.zeros(s) for k, (s, _) in nn.gru_shapes("gru", 3, 4).items()}
    final, allh = nn.gru_forward(ad.constant(p), np.random.default_rng(0).normal(size=(5, 3)))
    assert np.all(allh.data == 0.0)


def test_gru_empty_sequence():
    p = nn.init_params(nn.gru_shapes("gru", 3, 4), 0)
    final, _ = nn.gru_forward(ad.constant(p), np.zeros((0, 3)))
    assert np.array_equal(final.data, np.zeros(4))


def test_gru_dim_mismatch():
    p = nn.init_params(nn.gru_shapes("gru", 3, 4), 0)
    with pytest.raises(DimMismatch):
        nn.gru_forward(ad.constant(p), np.zeros((2, 5)))


def test_gru_scalar_hand_evaluation():
    # gate order z, r, candidate
    wx, wh, b = (0.5, -0.3, 0.8), (0.2, 0.7, -0.6), (0.1, 0.0, -0.2)
    xs = (1.0, -2.0)
    h = 0.0
    for x in xs:
        z = sig(wx[0] * x + wh[0] * h + b[0])
        r = sig(wx[1] * x + wh[1] * h + b[1])
        c = math.tanh(wx[2] * x + wh[2] * (r * h) + b[2])
        h = (1 - z) * h + z * c
    params = {"gru.wx": np.array([wx]), "gru.wh": np.array([wh]), "gru.b": np.array(b)}
    final, allh = nn.gru_forward(ad.constant(params), np.array([[xs[0]], [xs[1]]]))
    assert final.data[0] == pytest.approx(h, abs=1e-12)
    assert allh.data.shape == (2, 1)


def test_gru_lengths_carry_last_hidden():
    p = generic_point(nn.gru_shapes("gru", 2, 3), 0)
    x = np.random.default_rng(1).normal(size=(1, 4, 2))
    short, _ = nn.gru_forward(ad.constant(p), x[0, :2])
    final, _ = nn.gru_forward(ad.constant(p), x, lengths=[2])
    assert np.allclose(final.data[0], short.data)


# -- attention encoder


def tiny_cfg(**kw):
    return nn.EncoderConfig(**{"vocab_size": 12, "dim": 8, "heads": 2, "layers": 2, "max_len": 10, "ff_dim": 16, **kw})


def test_attn_shape_and_too_long():
    cfg = tiny_cfg()
    p = ad.constant(nn.init_params(nn.encoder_shapes(cfg), 0))
    assert nn.attn_encode(p, cfg, np.array([2, 5, 6])).shape == (3, 8)
    with pytest.raises(SeqTooLong):
        nn.attn_encode(p, cfg, np.arange(11) % 12)


def test_attn_pad_tail_ignored():
    cfg = tiny_cfg()
    p = ad.constant(generic_point(nn.encoder_shapes(cfg), 1))
    a = np.array([[2, 5, 6, 7, 0, 9]])
    b = np.array([[2, 5, 6, 7, 11, 3]])
    mask = np.array([[False] * 4 + [True] * 2])
    ea = nn.attn_encode(p, cfg, a, mask).data
    eb = nn.attn_encode(p, cfg, b, mask).data
    assert np.allclose(ea[0, :4], eb[0, :4], atol=1e-12)


def test_attn_zero_weights_is_layernorm_of_input():
    cfg = tiny_cfg(layers=1)
    shapes = nn.encoder_shapes(cfg)
    p = {k: (np.ones(s) if kind == "scale" else np.zeros(s)) for k, (s, kind) in shapes.items()}
    rng = np.random.default_rng(0)
    p["tok_emb"] = rng.normal(size=p["tok_emb"].shape)
    p["pos_emb"] = rng.normal(size=p["pos_emb"].shape)
    out = nn.attn_encode(ad.constant(p), cfg, np.array([4])).data[0]
    x = p["tok_emb"][4] + p["pos_emb"][0]
    ln = (x - x.mean()) / np.sqrt(x.var() + 1e-10)
    assert np.allclose(out, ln, atol=1e-9)


def test_mlm_logits_zero_projection():
    cfg = tiny_cfg()
    p = nn.init_params(nn.encoder_shapes(cfg), 0)
    p["mlm_out"][:] = 0
    P = ad.constant(p)
    enc = nn.attn_encode(P, cfg, np.array([2, 5, 6]))
    logits = nn.mlm_logits(P, enc, [0, 2]).data
    assert logits.shape == (2, 12) and np.all(logits == 0)


# -- losses


def test_cross_entropy_values():
    assert nn.cross_entropy(np.zeros(4), 0).item() == pytest.approx(math.log(4))
    assert nn.cross_entropy(np.array([1000.0, 0.0]), 0).item() == pytest.approx(0.0, abs=1e-12)
    # -log(e^3 / (e + e^2 + e^3))
    expected = -3 + math.log(math.exp(1) + math.exp(2) + math.exp(3))
    assert expected == pytest.approx(0.40761, abs=5e-6)
    assert nn.cross_entropy(np.array([1.0, 2.0, 3.0]), 2).item() == pytest.approx(expected, abs=1e-12)


def test_cross_entropy_gradient_closed_form():
    z = np.array([0.3, -1.2, 2.0, 0.1])
    _, g = ad.value_and_grad(lambda P: nn.cross_entropy(P["z"], 1), {"z": z})
    onehot = np.eye(4)[1]
    assert np.allclose(g["z"], ad.softmax_np(z) - onehot, atol=1e-14)


def test_unused_param_zero_gradient():
    params = {"a": np.array([1.0, 2.0]), "b": np.array([3.0])}
    _, g = ad.value_and_grad(lambda P: ad.sum(ad.mul(P["a"], P["a"])), params)
    assert np.array_equal(g["b"], np.zeros(1))
    assert np.allclose(g["a"], [2.0, 4.0])


@settings(max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_is_distribution(xs):
    p = ad.softmax_np(np.array(xs))
    assert np.all(p >= 0) and abs(p.sum() - 1.0) < 1e-12


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_layer_norm_moments(seed):
    x = np.random.default_rng(seed).normal(size=(3, 7)) * 5 + 2
    out = ad.layer_norm(ad.Tensor(x), np.ones(7), np.zeros(7)).data
    assert np.allclose(out.mean(-1), 0, atol=1e-6)
    assert np.allclose(out.var(-1), 1, atol=1e-6)


# -- optimiser


def test_adam_zero_grad_and_identity():
    p = {"w": np.array([1.0, -2.0])}
    st0 = nn.AdamState.zeros_like(p)
    p1, st1 = nn.adam_step(p, {"w": np.zeros(2)}, st0, 1e-3)
    assert np.array_equal(p1["w"], p["w"]) and st1.step == 1
    p2, _ = nn.adam_step(p, {"w": np.array([5.0, -1.0])}, st0, 0.0)
    assert np.array_equal(p2["w"], p["w"])


def test_adam_first_step_is_sign():
    p = {"w": np.array([0.0, 0.0, 0.0])}
    g = {"w": np.array([3.0, -0.01, 100.0])}
    p1, _ = nn.adam_step(p, g, nn.AdamState.zeros_like(p), 1e-3)
    assert np.allclose(p1["w"], -1e-3 * np.sign(g["w"]), rtol=1e-5)


def test_adam_pure():
    p = {"w": np.array([0.5])}
    s = nn.AdamState.zeros_like(p)
    g = {"w": np.array([0.2])}
    a, b = nn.adam_step(p, g, s, 0.1), nn.adam_step(p, g, s, 0.1)
    assert np.array_equal(a[0]["w"], b[0]["w"]) and s.step == 0


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    c = nn.clip_by_global_norm(g, 1.0)
    assert nn.optim.global_norm(c) == pytest.approx(1.0)
    assert nn.clip_by_global_norm(g, 10.0) is g


# -- finite differences


def test_fd_quadratic():
    theta = {"t": np.random.default_rng(0).normal(size=6)}
    err = nn.finite_diff_check(lambda P: ad.sum(ad.mul(P["t"], P["t"])), theta, eps=1e-5)
    assert err < 1e-9


def test_fd_rejects_large_containers():
    with pytest.raises(ValueError):
        nn.finite_diff_check(lambda P: ad.sum(P["t"]), {"t": np.zeros(6000)})


def test_fd_stacked_gru():
    shapes = nn.gru_shapes("g", 3, 4, groups=2)
    p = generic_point(shapes, 2)
    x = np.random.default_rng(3).normal(size=(2, 3, 5, 3))
    lengths = np.array([[5, 2, 0], [3, 5, 1]])
    w = np.random.default_rng(4).normal(size=(2, 3, 4))

    def loss(P):
        return ad.sum(ad.mul(nn.stacked_gru(P, "g", x, lengths), w))

    assert nn.finite_diff_check(loss, p) < 1e-4


# -- checkpoints


def test_checkpoint_round_trip(tmp_path):
    p = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(1.5), "c": np.zeros((0, 4))}
    nn.save_checkpoint(tmp_path / "x.ckpt", p, {"kind": "test", "n": [1, 2]})
    q, meta = nn.load_checkpoint(tmp_path / "x.ckpt")
    assert meta == {"kind": "test", "n": [1, 2]}
    assert nn.fingerprint(p) == nn.fingerprint(q)


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"hello")
    with pytest.raises(CheckpointError):
        nn.load_checkpoint(tmp_path / "bad")
    nn.save_checkpoint(tmp_path / "t.ckpt", {"a": np.ones(4)})
    blob = (tmp_path / "t.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        nn.load_checkpoint(tmp_path / "t.ckpt")
