"""Log-mel front end, global CMVN, SpecAugment and the binary feature cache."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_FFT = 512
N_MELS = 80
F_MIN = 20.0
F_MAX = 8000.0
LOG_FLOOR = 1e-10
CMVN_EPS = 1e-8
FEAT_MAGIC = b"DTFEAT01"


class AudioFormatError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self):
        return len(self.samples)


def read_wav(path) -> Waveform:
    """Read a 16-bit mono 16 kHz PCM WAV file; anything else is rejected."""
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate, n = f.getnchannels(), f.getsampwidth(), f.getframerate(), f.getnframes()
            raw = f.readframes(n)
    except wave.Error as e:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({e})") from e
    if channels != 1:
        raise AudioFormatError(f"{path}: mono required, found {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: 16-bit PCM required, found {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: {SAMPLE_RATE} Hz required, found {rate} Hz (no resampling)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise AudioFormatError(f"{path}: no samples")
    return Waveform(samples, rate)


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE, f_min=F_MIN, f_max=F_MAX):
    """Triangular filters (n_mels, n_fft//2 + 1), peak 1, evenly spaced in mel."""
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def num_frames(n_samples: int) -> int:
    return (n_samples - WIN_LENGTH) // HOP_LENGTH + 1


def log_mel(w: Waveform, n_mels=N_MELS, n_fft=N_FFT, f_min=F_MIN, f_max=F_MAX) -> np.ndarray:
    """(N, n_mels) float32 log-mel energies, N = floor((len - 400) / 160) + 1."""
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < WIN_LENGTH:
        raise ValueError(f"need at least {WIN_LENGTH} samples, got {len(x)}")
    n = num_frames(len(x))
    idx = np.arange(n)[:, None] * HOP_LENGTH + np.arange(WIN_LENGTH)[None, :]
    window = np.hanning(WIN_LENGTH + 1)[:-1]
    power = np.abs(np.fft.rfft(x[idx] * window, n=n_fft)) ** 2
    mel = power @ mel_filterbank(n_mels, n_fft, w.sample_rate, f_min, f_max).T
    return np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32)


@dataclass
class CmvnStats:
    mean: np.ndarray
    var: np.ndarray
    count: int

    def to_dict(self):
        return {"mean": self.mean.tolist(), "var": self.var.tolist(), "count": self.count}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"]), np.asarray(d["var"]), int(d["count"]))


def fit_cmvn(corpus) -> CmvnStats:
    """Global per-coefficient mean and variance over every frame of ``corpus``."""
    corpus = list(corpus)
    total = 0
    s = s2 = None
    for feats in corpus:
        f = np.asarray(feats, dtype=np.float64)
        total += len(f)
        s = f.sum(0) if s is None else s + f.sum(0)
    if not total:
        raise ValueError("empty corpus")
    mean = s / total
    for feats in corpus:
        d = np.asarray(feats, dtype=np.float64) - mean
        s2 = (d * d).sum(0) if s2 is None else s2 + (d * d).sum(0)
    return CmvnStats(mean, s2 / total, total)


def apply_cmvn(feats, stats: CmvnStats) -> np.ndarray:
    out = (np.asarray(feats, dtype=np.float64) - stats.mean) / np.sqrt(stats.var + CMVN_EPS)
    return out.astype(np.float32)


def invert_cmvn(feats, stats: CmvnStats) -> np.ndarray:
    return (np.asarray(feats, dtype=np.float64) * np.sqrt(stats.var + CMVN_EPS) + stats.mean)


@dataclass(frozen=True)
class SpecAugmentPolicy:
    time_warp_W: int = 0
    freq_mask_F: int = 0
    num_freq_masks: int = 0
    time_mask_T: int = 0
    time_mask_p: float = 1.0
    num_time_masks: int = 0

    def __post_init__(self):
        for name in ("time_warp_W", "freq_mask_F", "num_freq_masks", "time_mask_T", "num_time_masks"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.time_mask_p <= 1.0:
            raise ValueError("time_mask_p must lie in [0, 1]")


# Masking budgets of the LibriSpeech double (LD) and basic (LB) policies, time warp off.
LD_POLICY = SpecAugmentPolicy(0, 27, 2, 100, 1.0, 2)
LB_POLICY = SpecAugmentPolicy(0, 27, 1, 100, 1.0, 1)


def _time_warp(f, w, rng):
    n = len(f)
    if w <= 0 or n <= 2 * w + 1:
        return f
    center = int(rng.integers(w, n - w))
    dest = center + int(rng.integers(-w, w + 1))
    if dest <= 0 or dest >= n - 1:
        return f
    # piecewise-linear map from output frame to source frame
    src = np.where(
        np.arange(n) <= dest,
        np.arange(n) * center / dest,
        center + (np.arange(n) - dest) * (n - 1 - center) / (n - 1 - dest),
    )
    grid = np.arange(n)
    return np.stack([np.interp(src, grid, f[:, c]) for c in range(f.shape[1])], axis=1).astype(f.dtype)


def spec_augment(feats, policy: SpecAugmentPolicy, seed) -> np.ndarray:
    """Zero-fill frequency bands and time spans of a copy of ``feats``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = np.array(feats, copy=True)
    n, d = out.shape
    out = _time_warp(out, policy.time_warp_W, rng)
    for _ in range(policy.num_freq_masks):
        width = int(rng.integers(0, policy.freq_mask_F + 1))
        start = int(rng.integers(0, d - width + 1))
        out[:, start:start + width] = 0
    cap = min(policy.time_mask_T, int(policy.time_mask_p * n))
    for _ in range(policy.num_time_masks):
        width = int(rng.integers(0, cap + 1))
        start = int(rng.integers(0, n - width + 1))
        out[start:start + width, :] = 0
    return out


def save_features(path, feats):
    feats = np.ascontiguousarray(feats, dtype="<f4")
    if feats.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<II", *feats.shape))
        f.write(feats.tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(8) != FEAT_MAGIC:
            raise ValueError(f"{path}: not a feature cache file")
        n, d = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(4 * n * d), dtype="<f4")
    if data.size != n * d:
        raise ValueError(f"{path}: truncated feature file")
    return data.reshape(n, d).astype(np.float32)
