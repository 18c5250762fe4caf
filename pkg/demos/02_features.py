"""
Speech features: log-mel frames, CMVN and SpecAugment
=====================================================
"""

import numpy as np

from duotrain.audiofeat import (
    LD_POLICY,
    Waveform,
    apply_cmvn,
    fit_cmvn,
    log_mel,
    num_frames,
    spec_augment,
)

# %%
# One second of a 440 Hz tone at 16 kHz: 25 ms windows every 10 ms.
sr = 16000
t = np.arange(sr) / sr
tone = Waveform(0.3 * np.sin(2 * np.pi * 440 * t), sr)
feats = log_mel(tone)
print("frames:", feats.shape, "expected", num_frames(sr))
print("loudest mel band:", int(feats.mean(0).argmax()))

# %%
# CMVN statistics pooled over a toy corpus, then applied per utterance.
rng = np.random.default_rng(0)
corpus = [log_mel(Waveform(0.1 * rng.standard_normal(int(n)), sr)) for n in rng.integers(8000, 24000, 5)]
stats = fit_cmvn(corpus)
normed = np.concatenate([apply_cmvn(f, stats) for f in corpus])
print("after CMVN: mean %.3f  std %.3f" % (normed.mean(), normed.std()))

# %%
# The LD policy masks two frequency bands and two time spans.
# On a one-second clip a 100-frame time mask can cover everything, so use 5 s.
long = log_mel(Waveform(np.tile(tone.samples, 5), sr))
aug = spec_augment(long, LD_POLICY, seed=1)
print("zeroed cells: %.1f%%" % (100 * np.mean(aug == 0)))
