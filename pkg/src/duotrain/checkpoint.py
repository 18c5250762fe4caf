"""Binary checkpoint format and checkpoint averaging.

Layout (little-endian)::

    b"DTCKPT01"
    u32 version
    u32 header length, header bytes (UTF-8 JSON: model config, epoch, step,
        rng state, optimizer hyperparameters, metadata)
    u32 record count, records          # parameters
    u32 record count, records          # optimizer moments ("m/<name>", "v/<name>")

    record = u32 name length, name bytes, u32 rank, u32 dims[rank], f32 payload
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParameters, build_model
from .numcore import AdamState

MAGIC = b"DTCKPT01"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict  # canonical name -> float32 array
    adam: AdamState | None = None
    epoch: int = 0
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_model(cls, params: ModelParameters, adam=None, **kw):
        arrays = {n: np.array(t.data, dtype=np.float32) for n, t in params.unique().items()}
        if adam is not None:
            adam = AdamState(
                adam.lr, adam.beta1, adam.beta2, adam.eps,
                {k: v.copy() for k, v in adam.m.items()},
                {k: v.copy() for k, v in adam.v.items()},
                dict(adam.t),
            )
        return cls(params.config, arrays, adam, **kw)

    def to_model(self) -> ModelParameters:
        model = build_model(self.config, seed=0)
        load_into(model, self.params, prefixes=None)
        return model


def _write_records(buf, arrays):
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())


def _read_records(buf):
    (count,) = struct.unpack("<I", buf.read(4))
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", buf.read(4))
        name = buf.read(n).decode("utf-8")
        (rank,) = struct.unpack("<I", buf.read(4))
        dims = struct.unpack(f"<{rank}I", buf.read(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(buf.read(4 * size), dtype="<f4")
        if data.size != size:
            raise CheckpointError(f"truncated record {name!r}")
        out[name] = data.reshape(dims).astype(np.float32)
    return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "model": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "metadata": ckpt.metadata,
        "adam": None,
    }
    moments = {}
    if ckpt.adam is not None:
        a = ckpt.adam
        header["adam"] = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "t": a.t}
        for name in sorted(a.m):
            moments["m/" + name] = a.m[name]
            moments["v/" + name] = a.v[name]
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", ckpt.version, len(raw)))
    buf.write(raw)
    _write_records(buf, ckpt.params)
    _write_records(buf, moments)
    return buf.getvalue()


def from_bytes(data: bytes) -> Checkpoint:
    buf = io.BytesIO(data)
    if buf.read(8) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, n = struct.unpack("<II", buf.read(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(buf.read(n).decode("utf-8"))
    params = _read_records(buf)
    moments = _read_records(buf)
    adam = None
    if header["adam"] is not None:
        h = header["adam"]
        adam = AdamState(
            h["lr"], h["beta1"], h["beta2"], h["eps"],
            {k[2:]: v for k, v in moments.items() if k.startswith("m/")},
            {k[2:]: v for k, v in moments.items() if k.startswith("v/")},
            {k: int(v) for k, v in h["t"].items()},
        )
    return Checkpoint(
        ModelConfig.from_dict(header["model"]), params, adam,
        header["epoch"], header["step"], header["rng_state"], header["metadata"], version,
    )


def save_checkpoint(ckpt: Checkpoint, path):
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def _as_checkpoint(c):
    return c if isinstance(c, Checkpoint) else load_checkpoint(c)


def average_checkpoints(checkpoints) -> Checkpoint:
    """Element-wise mean of every parameter; newest metadata, no optimizer state.

    ``checkpoints`` are Checkpoint objects or paths, oldest first.
    """
    ckpts = [_as_checkpoint(c) for c in checkpoints]
    if not ckpts:
        raise CheckpointError("no checkpoints to average")
    ref = ckpts[-1]
    for c in ckpts:
        if c.config != ref.config:
            raise CheckpointError("cannot average checkpoints with different model configs")
    avg = {}
    for name in ref.params:
        total = np.zeros(ref.params[name].shape, dtype=np.float64)
        for c in ckpts:
            total += c.params[name]
        avg[name] = (total / len(ckpts)).astype(np.float32)
    meta = dict(ref.metadata, averaged=len(ckpts))
    return Checkpoint(ref.config, avg, None, ref.epoch, ref.step, ref.rng_state, meta)


def load_into(model: ModelParameters, arrays: dict, prefixes=None):
    """Copy ``arrays`` into the matching model tensors in place.

    Only names under ``prefixes`` (component names) are copied when given.
    Writing in place keeps tied aliases pointing at the loaded values.
    """
    for name, t in model.unique().items():
        if prefixes is not None and name.split(".", 1)[0] not in prefixes:
            continue
        if name not in arrays:
            raise CheckpointError(f"checkpoint lacks tensor {name}")
        src = arrays[name]
        if src.shape != t.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint {src.shape} vs model {t.data.shape}")
        t.data[...] = src
    return model


def init_from_pretrained(model: ModelParameters, encoder_ckpt=None, decoder_ckpt=None):
    """Load the speech encoder and/or decoder from separately trained checkpoints."""
    if encoder_ckpt is not None:
        load_into(model, _as_checkpoint(encoder_ckpt).params, prefixes={"speech_encoder"})
    if decoder_ckpt is not None:
        load_into(model, _as_checkpoint(decoder_ckpt).params, prefixes={"decoder"})
    return model
