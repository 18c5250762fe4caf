"""Glue between raw corpora and trainer examples, plus the on-disk corpus formats."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .audiofeat import apply_cmvn, load_features, log_mel, read_wav
from .textpipe import (
    PhonemeVocab,
    SubwordVocab,
    characterize,
    encode_subwords,
    phonemize,
)
from .trainer import SpeechExample, TextExample

MANIFEST_COLUMNS = ("id", "audio", "n_frames", "transcript", "translation")


@dataclass
class ManifestRow:
    id: str
    audio: str
    n_frames: int
    transcript: str
    translation: str


def read_manifest(path):
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_COLUMNS:
            raise ValueError(f"{path}: manifest header must be {' / '.join(MANIFEST_COLUMNS)}")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if len(rec) != len(MANIFEST_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} columns")
            rows.append(ManifestRow(rec[0], rec[1], int(rec[2] or 0), rec[3], rec[4]))
    return rows


def write_manifest(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow((r.id, r.audio, r.n_frames, r.transcript, r.translation))


def read_text_corpus(path):
    """List of (source, target-or-None) from a monolingual or tab-separated parallel file."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if "\t" in line:
            src, tgt = line.split("\t", 1)
            out.append((src, tgt))
        else:
            out.append((line, None))
    return out


def load_audio_features(row: ManifestRow, base_dir=".", cmvn=None):
    path = Path(base_dir) / row.audio
    if path.suffix == ".wav":
        feats = log_mel(read_wav(path))
    else:
        feats = load_features(path)
    return apply_cmvn(feats, cmvn) if cmvn is not None else feats


def speech_examples(rows, subwords: SubwordVocab, base_dir=".", task="ASR", cmvn=None):
    out = []
    for r in rows:
        text = r.translation if task == "ST" else r.transcript
        if task == "ST" and not text:
            raise ValueError(f"utterance {r.id} has no translation for the ST task")
        feats = load_audio_features(r, base_dir, cmvn)
        out.append(SpeechExample(r.id, feats, encode_subwords(text, subwords).tokens))
    return out


def text_examples(pairs, lexicon, src_vocab: PhonemeVocab, subwords: SubwordVocab, repr="phoneme"):
    """TextExamples from (source, target-or-None) pairs.

    Monolingual lines reconstruct themselves (denoising); parallel lines map
    source to translation. Sentences with no mappable word are skipped.
    """
    out = []
    for src, tgt in pairs:
        try:
            seq = phonemize(src, lexicon, src_vocab) if repr == "phoneme" else characterize(src, src_vocab)
        except ValueError:
            continue
        target = tgt if tgt is not None else src
        out.append(TextExample(seq.tokens, encode_subwords(target, subwords).tokens, parallel=tgt is not None))
    return out
