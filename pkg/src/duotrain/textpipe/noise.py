"""Denoising-autoencoder input corruption."""

from __future__ import annotations

import math

import numpy as np

from .vocab import NOISE_ID, PhonemeSequence


def mask_count(length: int, ratio: float) -> int:
    """round(ratio * length) with halves rounded up."""
    return int(math.floor(ratio * length + 0.5))


def apply_noise(seq, ratio: float, seed, noise_id: int = NOISE_ID):
    """Replace exactly ``mask_count(M, ratio)`` uniformly drawn positions with ``noise_id``.

    Accepts a :class:`PhonemeSequence` or a plain id list and returns the same kind.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}")
    ids = list(seq.tokens if isinstance(seq, PhonemeSequence) else seq)
    k = mask_count(len(ids), ratio)
    if k:
        rng = np.random.default_rng(seed)
        for pos in rng.choice(len(ids), size=k, replace=False):
            ids[pos] = noise_id
    if isinstance(seq, PhonemeSequence):
        return PhonemeSequence(ids, seq.oov)
    return ids
