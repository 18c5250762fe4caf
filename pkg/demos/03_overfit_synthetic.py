"""
Overfitting the synthetic speech corpus
=======================================

A speech-only model learns 200 pseudo-utterances (4 frames per phoneme,
one template vector per phoneme plus noise). About 20 s on one core.
"""

from duotrain.experiments import overfit_run

result = overfit_run(seed=0)
print("loss %.3f -> %.3f" % (result["first_loss"], result["last_loss"]))
print("training-set WER %.2f%%" % (100 * result["wer"]))
print(result["breakdown"])
