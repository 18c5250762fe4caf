"""
Text front end: lexicon lookup, word marks, noise, subwords
===========================================================

Run with ``python demos/01_text_front_end.py``.
"""

# %%
# The bundled CMU dictionary drives grapheme-to-phoneme lookup.
from duotrain.textpipe import (
    apply_noise,
    build_phoneme_vocab,
    encode_subwords,
    learn_subwords,
    load_cmudict,
    phonemize,
)

lexicon = load_cmudict()
vocab = build_phoneme_vocab(lexicon)
print("lexicon entries:", len(lexicon), " phoneme vocabulary:", len(vocab))

# %%
# Every word's first phoneme carries a leading "_" so word boundaries survive.
seq = phonemize("It's delightful", lexicon, vocab)
print(" ".join(vocab.decode(seq.tokens)))

# %%
# Denoising input: a seeded mask replaces round(ratio * length) phonemes.
for seed in (12, 13, 14):
    noisy = apply_noise(seq, 0.1, seed=seed)
    print(seed, " ".join(vocab.decode(noisy.tokens)))

# %%
# Words missing from the dictionary are spelled letter by letter.
print(" ".join(vocab.decode(phonemize("zq", lexicon, vocab).tokens)))

# %%
# Subword targets come from a small BPE model learned on the target side.
corpus = [
    "the quick brown fox jumps over the lazy dog",
    "a lazy afternoon in the quiet town",
    "the brown dog sleeps over there",
]
sub = learn_subwords(corpus, 60)
enc = encode_subwords("the lazy brown fox", sub)
print(len(sub.tokens), "subwords:", [sub.tokens[i] for i in enc.tokens])
