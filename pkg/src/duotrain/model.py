"""Speech encoder, phoneme text encoder and shared decoder.

All three stacks are pre-layer-norm transformers. The speech encoder puts two
stride-2 convolutions in front of its stack; the text encoder embeds input
tokens. With ``share_mode="tie_top6"`` the text-encoder layers are the very
same tensors as the top speech-encoder layers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .numcore import Tensor, default_dtype, ops, sinusoidal_positions
from .numcore.ops import MASK_VALUE
from .textpipe.subwords import PAD_ID as SUBWORD_PAD_ID
from .textpipe.vocab import PAD_ID as PHONEME_PAD_ID

PRESETS = {"S": (256, 2048), "M": (512, 2048), "L": (768, 3072)}
SHARE_MODES = ("none", "tie_top6")
MAX_TARGET_LEN = 1024


@dataclass
class ModelConfig:
    embed_dim: int = 512
    ffn_dim: int = 2048
    speech_layers: int = 12
    text_layers: int = 6
    decoder_layers: int = 6
    heads: int | None = None
    dropout: float = 0.1
    label_smoothing: float = 0.1
    share_mode: str = "tie_top6"
    phoneme_vocab_size: int = 142
    subword_vocab_size: int = 10000
    size_preset: str | None = None
    input_dim: int = 80
    max_target_len: int = MAX_TARGET_LEN

    def __post_init__(self):
        if self.heads is None:
            self.heads = max(1, self.embed_dim // 64)
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.embed_dim % 2:
            raise ValueError("embed_dim must be even for sinusoidal positions")
        if self.share_mode not in SHARE_MODES:
            raise ValueError(f"share_mode must be one of {SHARE_MODES}")
        if self.share_mode == "tie_top6" and self.text_layers > self.speech_layers:
            raise ValueError("tie_top6 needs text_layers <= speech_layers")
        if self.size_preset is not None and PRESETS.get(self.size_preset) != (self.embed_dim, self.ffn_dim):
            raise ValueError(f"size_preset {self.size_preset} does not match dims")

    @classmethod
    def preset(cls, name, **overrides):
        if name not in PRESETS:
            raise ValueError(f"unknown size preset {name!r}; choose from {sorted(PRESETS)}")
        d, ffn = PRESETS[name]
        return cls(embed_dim=d, ffn_dim=ffn, size_preset=name, **overrides)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @property
    def tied_offset(self):
        return self.speech_layers - self.text_layers


COMPONENTS = ("speech_encoder", "text_encoder", "decoder")


class ModelParameters:
    """Named parameter tensors plus the alias map used for encoder tying.

    ``tensors`` holds each distinct tensor once under its canonical name;
    ``aliases`` maps extra names (tied text-encoder layers) onto canonical ones.
    """

    def __init__(self, config: ModelConfig, tensors: dict, aliases: dict | None = None):
        self.config = config
        self.tensors = tensors
        self.aliases = aliases or {}

    def __getitem__(self, name):
        return self.tensors[self.aliases.get(name, name)]

    def __contains__(self, name):
        return name in self.tensors or name in self.aliases

    def unique(self):
        return self.tensors

    def named(self):
        out = dict(self.tensors)
        out.update({a: self.tensors[c] for a, c in self.aliases.items()})
        return out

    def component_names(self, component):
        prefix = component + "."
        return sorted(n for n in self.named() if n.startswith(prefix))

    def num_parameters(self):
        return int(sum(t.data.size for t in self.tensors.values()))

    def breakdown(self):
        """Trainable parameter count per component, tied tensors counted once."""
        out = {c: 0 for c in COMPONENTS}
        for name, t in self.tensors.items():
            out[name.split(".", 1)[0]] += t.data.size
        out["total"] = sum(out.values())
        return out

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self):
        tensors = {n: Tensor(t.data.copy(), requires_grad=True, dtype=t.dtype) for n, t in self.tensors.items()}
        return ModelParameters(self.config, tensors, dict(self.aliases))


# -- construction --------------------------------------------------------------

def _xavier(rng, shape, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _layer_shapes(d, ffn, cross):
    shapes = {}
    attn_blocks = ("self_attn", "cross_attn") if cross else ("self_attn",)
    for blk in attn_blocks:
        for proj in ("q", "k", "v", "o"):
            shapes[f"{blk}.{proj}.weight"] = (d, d)
            shapes[f"{blk}.{proj}.bias"] = (d,)
    shapes["ffn.fc1.weight"] = (d, ffn)
    shapes["ffn.fc1.bias"] = (ffn,)
    shapes["ffn.fc2.weight"] = (ffn, d)
    shapes["ffn.fc2.bias"] = (d,)
    for i in range(3 if cross else 2):
        shapes[f"norm{i + 1}.gamma"] = (d,)
        shapes[f"norm{i + 1}.beta"] = (d,)
    return shapes


def _init(rng, name, shape):
    if name.endswith(".bias") or name.endswith(".beta"):
        return np.zeros(shape)
    if name.endswith(".gamma"):
        return np.ones(shape)
    if len(shape) == 3:  # conv: (kernel, in, out)
        k, cin, cout = shape
        return _xavier(rng, shape, k * cin, k * cout)
    return _xavier(rng, shape, shape[0], shape[1])


def build_model(cfg: ModelConfig, seed=0) -> ModelParameters:
    """Freshly initialised parameters; Xavier-uniform weights, zero biases, unit norms."""
    rng = np.random.default_rng(seed)
    d, ffn = cfg.embed_dim, cfg.ffn_dim
    shapes = {
        "speech_encoder.conv1.weight": (3, cfg.input_dim, d),
        "speech_encoder.conv1.bias": (d,),
        "speech_encoder.conv2.weight": (3, d, d),
        "speech_encoder.conv2.bias": (d,),
    }
    for i in range(cfg.speech_layers):
        for k, s in _layer_shapes(d, ffn, cross=False).items():
            shapes[f"speech_encoder.layers.{i}.{k}"] = s
    shapes["speech_encoder.final_norm.gamma"] = (d,)
    shapes["speech_encoder.final_norm.beta"] = (d,)

    aliases = {}
    shapes["text_encoder.embed"] = (cfg.phoneme_vocab_size, d)
    for i in range(cfg.text_layers):
        for k, s in _layer_shapes(d, ffn, cross=False).items():
            name = f"text_encoder.layers.{i}.{k}"
            if cfg.share_mode == "tie_top6":
                aliases[name] = f"speech_encoder.layers.{cfg.tied_offset + i}.{k}"
            else:
                shapes[name] = s
    shapes["text_encoder.final_norm.gamma"] = (d,)
    shapes["text_encoder.final_norm.beta"] = (d,)

    shapes["decoder.embed"] = (cfg.subword_vocab_size, d)
    for i in range(cfg.decoder_layers):
        for k, s in _layer_shapes(d, ffn, cross=True).items():
            shapes[f"decoder.layers.{i}.{k}"] = s
    shapes["decoder.final_norm.gamma"] = (d,)
    shapes["decoder.final_norm.beta"] = (d,)

    dtype = default_dtype()
    tensors = {
        name: Tensor(_init(rng, name, shape), requires_grad=True, dtype=dtype)
        for name, shape in shapes.items()
    }
    return ModelParameters(cfg, tensors, aliases)


def layer_param_count(d, ffn, cross=False):
    return int(sum(np.prod(s) for s in _layer_shapes(d, ffn, cross).values()))


# -- forward pieces ------------------------------------------------------------

_POS_CACHE: dict = {}


def _positions(length, dim, dtype):
    key = (dim, np.dtype(dtype).str)
    table = _POS_CACHE.get(key)
    if table is None or len(table) < length:
        table = sinusoidal_positions(max(length, 256), dim).data.astype(dtype)
        _POS_CACHE[key] = table
    return table[:length]


def _lin(p, prefix, x):
    return ops.linear(x, p[prefix + ".weight"], p[prefix + ".bias"])


def _norm(p, prefix, x):
    return ops.layer_norm(x, p[prefix + ".gamma"], p[prefix + ".beta"])


def _split_heads(x, heads):
    b, t, d = x.shape
    return ops.transpose(ops.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, t, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def multi_head_attention(p, prefix, query, memory, mask, heads):
    q = _split_heads(_lin(p, prefix + ".q", query), heads)
    k = _split_heads(_lin(p, prefix + ".k", memory), heads)
    v = _split_heads(_lin(p, prefix + ".v", memory), heads)
    return _lin(p, prefix + ".o", _merge_heads(ops.attention(q, k, v, mask)))


def _dropout(x, cfg, rng):
    return ops.dropout(x, cfg.dropout, rng, training=rng is not None)


def encoder_layer(p, prefix, x, mask, cfg, rng):
    h = _norm(p, prefix + ".norm1", x)
    x = ops.add(x, _dropout(multi_head_attention(p, prefix + ".self_attn", h, h, mask, cfg.heads), cfg, rng))
    h = _norm(p, prefix + ".norm2", x)
    h = _lin(p, prefix + ".ffn.fc2", ops.relu(_lin(p, prefix + ".ffn.fc1", h)))
    return ops.add(x, _dropout(h, cfg, rng))


def decoder_layer(p, prefix, x, self_mask, memory, mem_mask, cfg, rng):
    h = _norm(p, prefix + ".norm1", x)
    x = ops.add(x, _dropout(multi_head_attention(p, prefix + ".self_attn", h, h, self_mask, cfg.heads), cfg, rng))
    h = _norm(p, prefix + ".norm2", x)
    x = ops.add(x, _dropout(multi_head_attention(p, prefix + ".cross_attn", h, memory, mem_mask, cfg.heads), cfg, rng))
    h = _norm(p, prefix + ".norm3", x)
    h = _lin(p, prefix + ".ffn.fc2", ops.relu(_lin(p, prefix + ".ffn.fc1", h)))
    return ops.add(x, _dropout(h, cfg, rng))


def key_padding_mask(lengths, width, dtype):
    """Additive mask (batch, 1, 1, width) hiding positions >= length."""
    valid = np.arange(width)[None, :] < np.asarray(lengths)[:, None]
    return np.where(valid, 0.0, MASK_VALUE).astype(dtype)[:, None, None, :]


def causal_mask(n, dtype):
    return np.triu(np.full((n, n), MASK_VALUE), k=1).astype(dtype)[None, None]


def subsampled_length(n):
    """Frames left after the two stride-2 convolutions: ceil(ceil(n/2)/2)."""
    return (((np.asarray(n) + 1) // 2) + 1) // 2


def _run_stack(p, prefix, x, n_layers, mask, cfg, rng, first=0):
    for i in range(first, first + n_layers):
        x = encoder_layer(p, f"{prefix}.layers.{i}", x, mask, cfg, rng)
    return x


def encode_speech(params: ModelParameters, features, lengths, rng=None):
    """Speech memory (batch, L', d) and per-item lengths L' = ceil(N/4)-ish.

    ``features`` is a padded (batch, N, input_dim) array. ``rng`` enables
    dropout; pass ``None`` for inference.
    """
    cfg = params.config
    lengths = np.asarray(lengths)
    if (lengths <= 0).any():
        raise ValueError("zero-length utterance in batch")
    dtype = params["speech_encoder.conv1.weight"].dtype
    feats = np.asarray(features, dtype=dtype)
    b, n, _ = feats.shape
    frame_mask = (np.arange(n)[None, :] < lengths[:, None]).astype(dtype)[..., None]
    x = Tensor(feats * frame_mask, dtype=dtype)
    x = ops.conv1d(x, params["speech_encoder.conv1.weight"], params["speech_encoder.conv1.bias"], stride=2, padding=1)
    len1 = (lengths + 1) // 2
    keep1 = (np.arange(x.shape[1])[None, :] < len1[:, None]).astype(dtype)[..., None]
    x = ops.mul(ops.relu(x), keep1)
    x = ops.conv1d(x, params["speech_encoder.conv2.weight"], params["speech_encoder.conv2.bias"], stride=2, padding=1)
    out_len = subsampled_length(lengths)
    x = ops.add(x, _positions(x.shape[1], cfg.embed_dim, dtype))
    x = _dropout(x, cfg, rng)
    mask = key_padding_mask(out_len, x.shape[1], dtype)
    x = _run_stack(params, "speech_encoder", x, cfg.speech_layers, mask, cfg, rng)
    return _norm(params, "speech_encoder.final_norm", x), out_len


def text_lengths(ids, pad_id=PHONEME_PAD_ID):
    return (np.asarray(ids) != pad_id).sum(axis=1)


def encode_text(params: ModelParameters, ids, lengths=None, rng=None):
    """Text memory (batch, M, d); ``ids`` is a padded (batch, M) id array ending in <eos>."""
    cfg = params.config
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    lengths = text_lengths(ids) if lengths is None else np.asarray(lengths)
    if (lengths <= 0).any():
        raise ValueError("zero-length text input in batch")
    table = params["text_encoder.embed"]
    dtype = table.dtype
    x = ops.mul(ops.embedding(ids, table), math.sqrt(cfg.embed_dim))
    x = ops.add(x, _positions(ids.shape[1], cfg.embed_dim, dtype))
    x = _dropout(x, cfg, rng)
    mask = key_padding_mask(lengths, ids.shape[1], dtype)
    x = _run_stack(params, "text_encoder", x, cfg.text_layers, mask, cfg, rng)
    return _norm(params, "text_encoder.final_norm", x), lengths


def decode_logits(params: ModelParameters, memory, memory_lengths, prefix, rng=None):
    """Next-token logits (batch, K, vocab) for every prefix position."""
    cfg = params.config
    prefix = np.asarray(prefix)
    if prefix.ndim == 1:
        prefix = prefix[None, :]
    if prefix.shape[1] > cfg.max_target_len:
        raise ValueError(f"target prefix length {prefix.shape[1]} exceeds {cfg.max_target_len}")
    memory_lengths = np.asarray(memory_lengths)
    if memory.shape[1] == 0 or (memory_lengths <= 0).any():
        raise ValueError("cross-attention over an empty memory")
    table = params["decoder.embed"]
    dtype = table.dtype
    k = prefix.shape[1]
    x = ops.mul(ops.embedding(prefix, table), math.sqrt(cfg.embed_dim))
    x = ops.add(x, _positions(k, cfg.embed_dim, dtype))
    x = _dropout(x, cfg, rng)
    pad = prefix != SUBWORD_PAD_ID
    self_mask = causal_mask(k, dtype) + np.where(pad, 0.0, MASK_VALUE).astype(dtype)[:, None, None, :]
    mem_mask = key_padding_mask(memory_lengths, memory.shape[1], dtype)
    for i in range(cfg.decoder_layers):
        x = decoder_layer(params, f"decoder.layers.{i}", x, self_mask, memory, mem_mask, cfg, rng)
    x = _norm(params, "decoder.final_norm", x)
    return ops.matmul(x, ops.transpose(table, (1, 0)))


def label_smoothed_loss(logits, targets, smoothing=0.1, pad_id=SUBWORD_PAD_ID):
    """Token-averaged label-smoothed cross entropy; returns (loss, n_tokens).

    Each token costs (1 - eps) * NLL(target) + eps * mean NLL over every
    non-pad vocabulary entry. Pad targets are excluded.
    """
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[None, :]
    keep = targets != pad_id
    ntok = int(keep.sum())
    if ntok == 0:
        raise ValueError("all target positions are padding")
    lp = ops.log_softmax(logits)
    vocab = logits.shape[-1]
    dtype = logits.dtype
    nll = ops.mul(ops.pick(lp, targets), -1.0)
    per_tok = ops.mul(nll, 1.0 - smoothing)
    if smoothing:
        w = np.full(vocab, 1.0 / (vocab - 1), dtype=dtype)
        w[pad_id] = 0.0
        smooth = ops.mul(ops.sum(ops.mul(lp, w), axis=-1), -smoothing)
        per_tok = ops.add(per_tok, smooth)
    total = ops.sum(ops.mul(per_tok, keep.astype(dtype)))
    return ops.mul(total, 1.0 / ntok), ntok


# -- batch helpers ------------------------------------------------------------

def pad_batch(seqs, pad_id=0, dtype=np.int64):
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad_id, dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def pad_features(feats):
    lengths = np.array([len(f) for f in feats])
    dim = feats[0].shape[1]
    out = np.zeros((len(feats), lengths.max(), dim), dtype=np.float32)
    for i, f in enumerate(feats):
        out[i, :len(f)] = f
    return out, lengths


def decoder_io(targets, bos_id, eos_id, pad_id=SUBWORD_PAD_ID):
    """Teacher-forcing (prefix, target) arrays: prefix = <bos> w, target = w <eos>."""
    prefix = pad_batch([[bos_id] + list(t) for t in targets], pad_id)
    gold = pad_batch([list(t) + [eos_id] for t in targets], pad_id)
    return prefix, gold


def with_config(params: ModelParameters, **changes) -> ModelParameters:
    return ModelParameters(replace(params.config, **changes), params.tensors, params.aliases)
