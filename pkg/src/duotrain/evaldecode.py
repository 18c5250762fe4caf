"""Beam-search inference and WER / BLEU scoring."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .model import decode_logits, encode_speech
from .numcore import Tensor, no_grad
from .textpipe.subwords import BOS_ID, EOS_ID, PAD_ID, decode_subwords


@dataclass
class Hypothesis:
    tokens: list[int]  # generated ids, ending with <eos>
    score: float

    @property
    def normalized_score(self):
        return self.score / len(self.tokens)


def beam_search_core(step_fn, bos, eos, beam, max_len):
    """Length-normalised beam search over an arbitrary next-token model.

    ``step_fn(prefixes)`` receives a list of id lists (each starting with
    ``bos``) and returns an (n, vocab) array of next-token log-probabilities.
    Each step keeps the ``beam`` best expansions by raw score; expansions
    ending in ``eos`` are set aside as finished. At position ``max_len`` only
    ``eos`` is allowed. The finished hypothesis with the best score/length wins.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    active = [([bos], 0.0)]
    finished: list[Hypothesis] = []
    for t in range(max_len):
        logp = np.asarray(step_fn([p for p, _ in active]), dtype=np.float64)
        if t == max_len - 1:
            forced = np.full_like(logp, -np.inf)
            forced[:, eos] = logp[:, eos]
            logp = forced
        scores = np.array([s for _, s in active])[:, None] + logp
        flat = scores.reshape(-1)
        order = np.argsort(-flat, kind="stable")[:beam]
        vocab = logp.shape[1]
        nxt = []
        for idx in order:
            if not np.isfinite(flat[idx]):
                break
            i, w = divmod(int(idx), vocab)
            seq = active[i][0] + [w]
            if w == eos:
                finished.append(Hypothesis(seq[1:], float(flat[idx])))
            else:
                nxt.append((seq, float(flat[idx])))
        active = nxt
        if not active or len(finished) >= beam:
            break
    if not finished:
        raise RuntimeError("beam search produced no finished hypothesis")
    # max() keeps the earliest on ties, which is the higher raw score
    return max(finished, key=lambda h: h.normalized_score)


def exhaustive_search(step_fn, bos, eos, vocab_size, max_len):
    """Best score/length over every sequence ``w_1..w_k eos`` with k+1 <= max_len."""
    best = None
    stack = [([bos], 0.0)]
    while stack:
        prefix, score = stack.pop()
        logp = np.asarray(step_fn([prefix])[0], dtype=np.float64)
        end = Hypothesis(prefix[1:] + [eos], score + logp[eos])
        if best is None or end.normalized_score > best.normalized_score:
            best = end
        if len(prefix) < max_len:
            for w in range(vocab_size):
                if w != eos and np.isfinite(logp[w]):
                    stack.append((prefix + [w], score + logp[w]))
    return best


def model_step_fn(params, memory, memory_len):
    """Adapter exposing the decoder as a ``step_fn`` for :func:`beam_search_core`."""

    def step(prefixes):
        arr = np.array(prefixes)
        n = len(prefixes)
        mem = Tensor(np.repeat(memory.data, n, axis=0)) if n > 1 else memory
        logits = decode_logits(params, mem, np.repeat(memory_len, n), arr)
        z = logits.data[:, -1, :].astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp[:, PAD_ID] = -np.inf
        logp[:, BOS_ID] = -np.inf
        return logp

    return step


def beam_search(params, features, beam=5, max_len_factor=1.0):
    """Decode one utterance (N, input_dim) with the speech encoder and decoder."""
    if beam < 1:
        raise ValueError("beam must be >= 1")
    feats = np.asarray(features, dtype=np.float32)[None]
    with no_grad():
        memory, mem_len = encode_speech(params, feats, [feats.shape[1]])
        max_len = int(max_len_factor * int(mem_len[0])) + 10
        max_len = min(max_len, params.config.max_target_len - 1)
        return beam_search_core(model_step_fn(params, memory, mem_len), BOS_ID, EOS_ID, beam, max_len)


def decode_corpus(params, examples, vocab, beam=5, max_len_factor=1.0):
    """Rows of (id, hypothesis text, normalized score) for speech examples."""
    rows = []
    for ex in examples:
        hyp = beam_search(params, ex.features, beam=beam, max_len_factor=max_len_factor)
        rows.append((ex.id, decode_subwords(hyp.tokens, vocab), hyp.normalized_score))
    return rows


# -- WER -----------------------------------------------------------------------

_WER_STRIP = re.compile(r"[^\w\s']", re.UNICODE)


def normalize_for_wer(text: str) -> list[str]:
    """Lowercase and drop punctuation other than apostrophes, then split."""
    return _WER_STRIP.sub(" ", text.lower()).split()


@dataclass
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    reference_words: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self):
        return self.errors / self.reference_words

    def __add__(self, other):
        return WerBreakdown(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_words + other.reference_words,
        )

    def to_dict(self):
        return {
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "reference_words": self.reference_words,
            "wer": self.wer,
        }


def align_words(ref, hyp):
    """Unit-cost Levenshtein alignment; returns (S, D, I).

    On equal cost the backtrace prefers match/substitution, then deletion,
    then insertion.
    """
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    s = d = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return int(s), d, ins


def wer(reference: str, hypothesis: str, normalize=True) -> WerBreakdown:
    split = normalize_for_wer if normalize else str.split
    ref, hyp = split(reference), split(hypothesis)
    if not ref:
        raise ValueError("empty reference")
    s, d, i = align_words(ref, hyp)
    return WerBreakdown(s, d, i, len(ref))


def corpus_wer(references, hypotheses, normalize=True) -> WerBreakdown:
    if len(references) != len(hypotheses):
        raise ValueError("reference and hypothesis counts differ")
    if not references:
        raise ValueError("empty corpus")
    total = WerBreakdown(0, 0, 0, 0)
    for r, h in zip(references, hypotheses):
        total = total + wer(r, h, normalize)
    return total


# -- BLEU ----------------------------------------------------------------------

_TOK_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


def tokenize_13a(line: str) -> list[str]:
    """mteval-v13a style tokenization: split punctuation off words, keep case."""
    line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = (line.replace("&quot;", '"').replace("&amp;", "&")
                .replace("&lt;", "<").replace("&gt;", ">"))
    line = f" {line} "
    for pattern, repl in _TOK_RULES:
        line = pattern.sub(repl, line)
    return line.split()


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuResult:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: list[int]
    totals: list[int]

    def to_dict(self):
        return {
            "precisions": self.precisions,
            "brevity_penalty": self.brevity_penalty,
            "hyp_len": self.hyp_len,
            "ref_len": self.ref_len,
        }


def bleu_stats(references, hypotheses, max_order=4):
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for ref, hyp in zip(references, hypotheses):
        r, h = tokenize_13a(ref), tokenize_13a(hyp)
        ref_len += len(r)
        hyp_len += len(h)
        for n in range(1, max_order + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)
    return matches, totals, hyp_len, ref_len


def bleu(references, hypotheses, max_order=4) -> BleuResult:
    """Corpus BLEU in [0, 100] with exponential smoothing of zero n-gram matches."""
    if len(references) != len(hypotheses):
        raise ValueError("reference and hypothesis counts differ")
    if not references:
        raise ValueError("empty corpus")
    matches, totals, hyp_len, ref_len = bleu_stats(references, hypotheses, max_order)
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1 - ref_len / hyp_len)
    else:
        bp = 1.0
    if not any(matches):
        # nothing to smooth: a fully disjoint corpus scores zero
        return BleuResult(0.0, [0.0] * max_order, bp, hyp_len, ref_len, matches, totals)
    precisions = []
    smooth = 1.0
    for n in range(max_order):
        if totals[n] == 0:
            precisions.append(0.0)
        elif matches[n] == 0:
            smooth *= 2
            precisions.append(100.0 / (smooth * totals[n]))
        else:
            precisions.append(100.0 * matches[n] / totals[n])
    if min(precisions) <= 0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_order)
    return BleuResult(score, precisions, bp, hyp_len, ref_len, matches, totals)
