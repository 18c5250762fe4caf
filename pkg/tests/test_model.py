import math

import numpy as np
import pytest

from gradcases import TINY, TOL, model_trial
from duotrain.model import (
    PRESETS,
    ModelConfig,
    build_model,
    decode_logits,
    decoder_io,
    encode_speech,
    encode_text,
    label_smoothed_loss,
    layer_param_count,
    pad_batch,
    subsampled_length,
)
from duotrain.numcore import Tensor, backward


def tiny(**kw):
    cfg = dict(TINY)
    cfg.update(kw)
    return ModelConfig(**cfg)


def _support(params):
    return {n for n, t in params.unique().items() if t.grad is not None and np.any(t.grad != 0)}


# -- configuration ------------------------------------------------------------------


def test_presets():
    assert PRESETS == {"S": (256, 2048), "M": (512, 2048), "L": (768, 3072)}
    for name, heads in (("S", 4), ("M", 8), ("L", 12)):
        cfg = ModelConfig.preset(name)
        assert (cfg.embed_dim, cfg.ffn_dim) == PRESETS[name]
        assert cfg.heads == heads
    with pytest.raises(ValueError):
        ModelConfig.preset("XL")


@pytest.mark.parametrize(
    "kw", [{"embed_dim": 64, "heads": 3}, {"share_mode": "tie_top6", "text_layers": 13}, {"share_mode": "half"},
           {"embed_dim": 512, "ffn_dim": 1024, "size_preset": "M"}]
)
def test_invalid_configs(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_config_dict_round_trip():
    cfg = ModelConfig.preset("S", share_mode="none")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# -- parameters ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def m_counts():
    tied = build_model(ModelConfig.preset("M"), seed=0)
    untied = build_model(ModelConfig.preset("M", share_mode="none"), seed=0)
    return tied.num_parameters(), untied.num_parameters(), tied.breakdown()


def test_m_preset_bracket(m_counts):
    total, _, breakdown = m_counts
    assert 65e6 <= total <= 85e6
    assert breakdown["total"] == total
    assert breakdown["speech_encoder"] + breakdown["text_encoder"] + breakdown["decoder"] == total


def test_tying_saves_six_layers(m_counts):
    tied, untied, _ = m_counts
    d, ffn = 512, 2048
    per_layer = 4 * d * d + 4 * d + 2 * d * ffn + ffn + d + 4 * d
    assert layer_param_count(d, ffn) == per_layer
    assert untied - tied == 6 * per_layer


def test_aliasing_is_shared_storage():
    p = build_model(tiny(speech_layers=3, text_layers=2), seed=0)
    off = p.config.tied_offset
    assert off == 1
    name = "text_encoder.layers.0.ffn.fc1.weight"
    assert p[name] is p[f"speech_encoder.layers.{off}.ffn.fc1.weight"]
    p[name].data[0, 0] = 123.0
    assert p[f"speech_encoder.layers.{off}.ffn.fc1.weight"].data[0, 0] == 123.0
    assert name not in p.unique() and name in p.named()


def test_m_preset_aliases_top_six():
    cfg = ModelConfig.preset("M")
    p = build_model(cfg, seed=0)
    for i in range(6):
        assert p[f"text_encoder.layers.{i}.self_attn.q.weight"] is p[f"speech_encoder.layers.{6 + i}.self_attn.q.weight"]


def test_init_is_seeded_and_xavier():
    a, b = build_model(tiny(), seed=3), build_model(tiny(), seed=3)
    assert all(np.array_equal(a.unique()[n].data, b.unique()[n].data) for n in a.unique())
    w = a["decoder.layers.0.ffn.fc1.weight"].data
    assert np.abs(w).max() <= math.sqrt(6 / (16 + 32))
    assert not a["decoder.layers.0.ffn.fc1.bias"].data.any()
    assert np.all(a["decoder.final_norm.gamma"].data == 1)


# -- speech encoder ---------------------------------------------------------------------


def test_subsampled_length_formula():
    n = np.arange(4, 1001)
    assert np.array_equal(subsampled_length(n), np.ceil(n / 4).astype(int))
    assert subsampled_length(98) == 25 and subsampled_length(4) == 1


@pytest.fixture(scope="module")
def small():
    return build_model(tiny(speech_layers=1, decoder_layers=1, text_layers=1), seed=0)


def test_encoder_output_length_matches_formula(small):
    rng = np.random.default_rng(0)
    for n in list(range(4, 40)) + [97, 98, 99, 100, 1000]:
        mem, lens = encode_speech(small, rng.standard_normal((1, n, 6)), [n])
        assert mem.shape == (1, math.ceil(n / 4), 16)
        assert lens.tolist() == [math.ceil(n / 4)]


def test_padding_does_not_leak(small):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 30, 6)).astype(np.float32)
    lengths = [30, 17]
    a, la = encode_speech(small, x, lengths)
    y = x.copy()
    y[1, 17:] = rng.standard_normal((13, 6))
    b, _ = encode_speech(small, y, lengths)
    n = la[1]
    assert np.array_equal(a.data[1, :n], b.data[1, :n])
    # the padded item equals the same item run alone
    alone, _ = encode_speech(small, x[1:2, :17], [17])
    np.testing.assert_allclose(alone.data[0], a.data[1, :n], atol=1e-5)


def test_zero_length_rejected(small):
    with pytest.raises(ValueError):
        encode_speech(small, np.zeros((2, 8, 6)), [8, 0])


# -- text encoder -----------------------------------------------------------------------


def test_single_eos(small):
    mem, lens = encode_text(small, [[2]])
    assert mem.shape == (1, 1, 16) and lens.tolist() == [1]


def test_out_of_vocab_id(small):
    with pytest.raises(IndexError):
        encode_text(small, [[4, 99, 2]])


def test_batch_permutation(small):
    ids = pad_batch([[4, 5, 6, 2], [7, 2], [8, 8, 2]])
    mem, _ = encode_text(small, ids)
    perm = [2, 0, 1]
    mem_p, _ = encode_text(small, ids[perm])
    np.testing.assert_allclose(mem_p.data, mem.data[perm], atol=1e-6)


def test_tied_text_layers_run_speech_layers():
    from duotrain.model import encoder_layer, key_padding_mask

    p = build_model(tiny(speech_layers=3, text_layers=2), seed=1)
    x = Tensor(np.random.default_rng(2).standard_normal((1, 5, 16)).astype(np.float32))
    mask = key_padding_mask([5], 5, np.float32)
    t = s = x
    for i in range(2):
        t = encoder_layer(p, f"text_encoder.layers.{i}", t, mask, p.config, None)
        s = encoder_layer(p, f"speech_encoder.layers.{1 + i}", s, mask, p.config, None)
    assert np.array_equal(t.data, s.data)


# -- decoder ----------------------------------------------------------------------------


def test_logits_shape_and_causality(small):
    rng = np.random.default_rng(3)
    mem, lens = encode_speech(small, rng.standard_normal((1, 20, 6)), [20])
    prefix = np.array([[2, 5, 6, 7, 8]])
    a = decode_logits(small, mem, lens, prefix).data
    assert a.shape == (1, 5, 11) and np.isfinite(a).all()
    for j in range(1, 5):
        changed = prefix.copy()
        changed[0, j] = 9
        b = decode_logits(small, mem, lens, changed).data
        assert np.array_equal(a[0, :j], b[0, :j])


def test_decoder_limits(small):
    mem, lens = encode_speech(small, np.zeros((1, 8, 6)), [8])
    with pytest.raises(ValueError):
        decode_logits(small, mem, lens, np.full((1, 1025), 4))
    with pytest.raises(ValueError):
        decode_logits(small, Tensor(np.zeros((1, 0, 16))), [0], [[2]])


def test_inference_is_deterministic(small):
    x = np.random.default_rng(4).standard_normal((1, 12, 6))
    a, _ = encode_speech(small, x, [12])
    b, _ = encode_speech(small, x, [12])
    assert np.array_equal(a.data, b.data)


# -- loss -------------------------------------------------------------------------------


def test_uniform_logits_give_log_v():
    for eps in (0.0, 0.1, 0.5):
        loss, n = label_smoothed_loss(Tensor(np.zeros((2, 3, 10))), [[4, 5, 3], [6, 3, 0]], smoothing=eps)
        assert n == 5
        assert float(loss.data) == pytest.approx(math.log(10), rel=1e-6)


def test_sharp_logits_hand_oracle():
    v, eps = 10, 0.1
    logits = np.full((1, 1, v), -20.0)
    logits[0, 0, 4] = 20.0
    loss, _ = label_smoothed_loss(Tensor(logits, dtype=np.float64), [[4]], smoothing=eps)
    lse = 20 + math.log(1 + (v - 1) * math.exp(-40))
    nll_target = lse - 20
    nll_other = lse + 20
    # smoothing mass spreads over the 9 non-pad ids; pad (id 0) is one of the -20 entries
    smooth = (nll_target + (v - 2) * nll_other) / (v - 1)
    assert float(loss.data) == pytest.approx((1 - eps) * nll_target + eps * smooth, abs=1e-5)


def test_no_smoothing_is_cross_entropy():
    rng = np.random.default_rng(5)
    z = rng.standard_normal((2, 4, 7))
    tgt = np.array([[1, 2, 3, 0], [4, 5, 6, 3]])
    loss, n = label_smoothed_loss(Tensor(z, dtype=np.float64), tgt, smoothing=0.0)
    lp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    keep = tgt != 0
    ref = -np.take_along_axis(lp, tgt[..., None], -1)[..., 0][keep].mean()
    assert float(loss.data) == pytest.approx(ref, rel=1e-12)
    assert n == 7


def test_all_pad_rejected():
    with pytest.raises(ValueError):
        label_smoothed_loss(Tensor(np.zeros((1, 2, 5))), [[0, 0]])


# -- gradient support per batch type ------------------------------------------------------


def _speech_loss(p, rng):
    feats = rng.standard_normal((2, 12, 6))
    prefix, gold = decoder_io([[4, 5], [6]], 2, 3)
    mem, ml = encode_speech(p, feats, [12, 9])
    return label_smoothed_loss(decode_logits(p, mem, ml, prefix), gold)[0]


def _text_loss(p, rng):
    prefix, gold = decoder_io([[4, 5], [6]], 2, 3)
    mem, ml = encode_text(p, pad_batch([[4, 5, 6, 2], [7, 2]]))
    return label_smoothed_loss(decode_logits(p, mem, ml, prefix), gold)[0]


@pytest.mark.parametrize("share", ["none", "tie_top6"])
def test_gradient_support_sets(share):
    p = build_model(tiny(share_mode=share, speech_layers=3, text_layers=2), seed=0)
    rng = np.random.default_rng(6)
    names = set(p.unique())
    speech = {n for n in names if n.startswith("speech_encoder.")}
    text = {n for n in names if n.startswith("text_encoder.")}
    dec = {n for n in names if n.startswith("decoder.")}

    p.zero_grad()
    backward(_speech_loss(p, rng))
    assert _support(p) == speech | dec

    p.zero_grad()
    backward(_text_loss(p, rng))
    tied = {p.aliases[a] for a in p.aliases}
    expected = text | dec | (tied if share == "tie_top6" else set())
    assert _support(p) == expected
    if share == "tie_top6":
        assert tied and tied <= speech
        assert not any(n.startswith("speech_encoder.layers.0.") for n in _support(p))


@pytest.mark.parametrize("seed", range(5))
def test_end_to_end_gradient_check(seed):
    assert model_trial(seed, entries_per_trial=20) < TOL
    assert model_trial(100 + seed, share_mode="none", entries_per_trial=20) < TOL
