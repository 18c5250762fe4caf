"""
Text-only data teaches words the paired speech never contains
=============================================================

Ten words appear only in the 1,000 text sentences. The speech-only
baseline cannot learn them; joint training with phoneme denoising can,
and masking 20% of the phonemes does better than copying them through.

Each run takes roughly 45 s on one core. Pass a seed as the first argument.
"""

import sys

from duotrain.experiments import held_out_run

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
for label, kw in (
    ("speech only", {"text_task": "none"}),
    ("joint, mask 0.0", {"mask_ratio": 0.0}),
    ("joint, mask 0.2", {"mask_ratio": 0.2}),
):
    r = held_out_run(seed, **kw)
    print(f"{label:16s} test WER {r['wer']:.3f}  held-out words {r['held_out_wer']:.3f}  ({r['seconds']:.0f}s)")
