import math

import numpy as np
import pytest

from ifagents import corpus as C
from ifagents import lm, nn
from ifagents.nn import autodiff as ad

from test_nn import generic_point

SMALL = C.Corpus((
    ("room a . a bare white room .", "go east"),
    ("room b . a small grey room . you see a coin .", "take coin"),
    ("nothing happens | you are empty handed .", "go west"),
) * 4)


def test_mlm_loss_uniform_logits():
    vocab = C.Vocab(C.SPECIALS + ("x",))
    cfg = nn.EncoderConfig(vocab_size=6, dim=4, heads=1, layers=1, max_len=4, ff_dim=4)
    p = nn.init_params(nn.encoder_shapes(cfg), 0)
    p["mlm_out"][:] = 0
    batch = C.collate([C.mask_sequence(C.TokenSequence((C.CLS_ID, 5)), 1.0, np.random.default_rng(0))])
    assert len(vocab) == 6
    assert lm.mlm_loss(ad.constant(p), cfg, batch).item() == pytest.approx(math.log(6))


def test_mlm_loss_no_targets_is_zero():
    cfg = nn.EncoderConfig(vocab_size=6, dim=4, heads=1, layers=1, max_len=4, ff_dim=4)
    p = nn.init_params(nn.encoder_shapes(cfg), 0)
    batch = C.MaskedBatch(np.array([[2, 5]]), [], np.zeros((1, 2), dtype=bool))
    loss, grads = ad.value_and_grad(lm.mlm_loss, p, cfg, batch)
    assert loss.item() == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def mlm_check_case(seed, spread):
    cfg = nn.EncoderConfig(vocab_size=10, dim=8, heads=2, layers=2, max_len=8, ff_dim=8)
    p = generic_point(nn.encoder_shapes(cfg), seed, spread)
    rng = np.random.default_rng(seed + 1)
    rows = [C.mask_sequence(C.TokenSequence((C.CLS_ID, 5, 6, 7, C.SEP_ID, 8, 9)), 0.4, rng),
            C.mask_sequence(C.TokenSequence((C.CLS_ID, 9, 5, C.SEP_ID, 6)), 0.5, rng)]
    batch = C.collate(rows)
    return (lambda P: lm.mlm_loss(P, cfg, batch)), p


def test_mlm_gradient_matches_finite_differences():
    loss, p = mlm_check_case(2, 1.0)
    assert nn.finite_diff_check(loss, p, eps=1e-5) < 1e-4


def test_mlm_gradient_small_coordinates_are_roundoff():
    # this point has a ~1e-7 coordinate: eps=1e-5 hits roundoff, a wider step agrees
    loss, p = mlm_check_case(0, 0.5)
    assert nn.finite_diff_check(loss, p, eps=1e-4) < 1e-5


def test_pretrain_zero_epochs_is_init():
    cfg = lm.PretrainConfig(epochs=0, seed=5, dim=8, heads=2, ff_dim=8)
    enc, hist = lm.pretrain(SMALL, cfg)
    init = nn.init_params(nn.encoder_shapes(cfg.encoder_config(len(enc.vocab))), 5)
    assert hist == []
    assert all(np.array_equal(enc.params[k], init[k]) for k in init)


def test_pretrain_deterministic():
    cfg = lm.PretrainConfig(epochs=2, batch_size=4, dim=8, heads=2, ff_dim=8)
    a, ha = lm.pretrain(SMALL, cfg)
    b, hb = lm.pretrain(SMALL, cfg)
    assert a.fingerprint == b.fingerprint and ha == hb


def test_config_validation():
    with pytest.raises(ValueError):
        lm.PretrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        lm.PretrainConfig(mask_rate=0.0)


@pytest.fixture(scope="module")
def small_encoder():
    return lm.pretrain(SMALL, lm.PretrainConfig(epochs=1, batch_size=4, dim=8, heads=2, ff_dim=8, max_len=8))[0]


def test_encode_text_shapes(small_encoder):
    assert lm.encode_text(small_encoder, "").shape == (1, 8)
    assert lm.encode_text(small_encoder, "room a .").shape == (4, 8)
    # longer than max_len: left-truncated, [CLS] kept
    assert lm.encode_text(small_encoder, "a b c d e f g h i j k").shape == (8, 8)


def test_encode_text_never_mutates(small_encoder):
    before = small_encoder.fingerprint
    for i in range(10_000):
        lm.encode_text(small_encoder, f"room {i % 7} .")
    assert small_encoder.verify() and small_encoder.fingerprint == before
    with pytest.raises(ValueError):
        small_encoder.params["tok_emb"][0, 0] = 1.0


def test_encoder_save_load(tmp_path, small_encoder):
    small_encoder.save(tmp_path / "enc.ckpt")
    back = lm.FrozenEncoder.load(tmp_path / "enc.ckpt")
    assert back.fingerprint == small_encoder.fingerprint
    assert back.vocab == small_encoder.vocab
    assert np.array_equal(back.encode_text("room b"), small_encoder.encode_text("room b"))


def test_heldout_ce_deterministic_and_untrained_baseline():
    train, held = C.split_heldout(C.load_corpus())
    cfg = lm.PretrainConfig()
    untrained, _ = lm.pretrain(train, lm.PretrainConfig(epochs=0))
    a = lm.heldout_masked_ce(untrained, held, cfg)
    assert a == lm.heldout_masked_ce(untrained, held, cfg)
    assert abs(a - math.log(len(untrained.vocab))) <= 0.1 * math.log(len(untrained.vocab))
