"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training experiments (criteria 5 to 7) take several minutes on one CPU
core. Run just this file with ``pytest tests/test_acceptance.py -s`` to see
the per-criterion lines alongside pytest's own output.
"""

import random
import statistics
import time

import numpy as np
import pytest
import sacrebleu

from conftest import ToyData
from gradcases import PRIMITIVE_CASES, TOL, model_trial, primitive_trial
from test_evaldecode import _edit_distance, _fixture, toy_model
from duotrain.audiofeat import Waveform, log_mel, num_frames
from duotrain.checkpoint import Checkpoint, average_checkpoints, from_bytes, to_bytes
from duotrain.evaldecode import align_words, beam_search_core, bleu, exhaustive_search
from duotrain.experiments import held_out_run, overfit_run
from duotrain.model import ModelConfig, build_model
from duotrain.textpipe import NOISE_ID, apply_noise, build_phoneme_vocab, load_cmudict, phonemize
from duotrain.trainer import TaskMode, TrainConfig, Trainer, train

SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


# 1 ----------------------------------------------------------------------------------------


def test_criterion_1_gradients(report):
    start = time.time()
    worst = {name: max(primitive_trial(name, seed) for seed in range(100)) for name in PRIMITIVE_CASES}
    model_worst = max(model_trial(seed) for seed in range(100))
    elapsed = time.time() - start
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < TOL and model_worst < TOL and elapsed < 120
    report(1, ok, f"{len(worst)} primitives x100, worst {top} {worst[top]:.1e}; "
                  f"full model x100 worst {model_worst:.1e}; {elapsed:.0f}s")
    assert ok


# 2 ----------------------------------------------------------------------------------------


def test_criterion_2_worked_example(report):
    lexicon = load_cmudict()
    vocab = build_phoneme_vocab(lexicon)
    seq = phonemize("It's delightful", lexicon, vocab)
    plain = " ".join(vocab.decode(seq.tokens))
    noised = " ".join(vocab.decode(apply_noise(seq, 0.1, seed=12).tokens))
    ok = plain == "_IH1 T S _D IH0 L AY1 T F AH0 L" and noised == "_IH1 T S _D IH0 L <NOISE> T F AH0 L"
    report(2, ok, f"{plain!r} -> {noised!r}")
    assert ok


# 3 ----------------------------------------------------------------------------------------


def test_criterion_3_masking_statistics(report):
    n, m, ratio = 10_000, 25, 0.2
    rng = np.random.default_rng(3)
    masked = total = 0
    hits = np.zeros(m)
    for seed in range(n):
        length = int(rng.integers(5, 51))
        out = np.asarray(apply_noise(list(range(4, 4 + length)), ratio, seed)) == NOISE_ID
        masked += out.sum()
        total += length
        hits += np.asarray(apply_noise(list(range(4, 4 + m)), ratio, n + seed)) == NOISE_ID
    frac = masked / total
    z = np.abs(hits - n * ratio) / np.sqrt(n * ratio * (1 - ratio))
    ok = abs(frac - 0.2) <= 0.005 and z.max() < 3
    report(3, ok, f"masked fraction {frac:.4f} over {n} sequences of length 5-50; "
                  f"worst of {m} positions {z.max():.2f} sigma")
    assert ok


# 4 ----------------------------------------------------------------------------------------


def test_criterion_4_tying_invariant(report):
    toy = ToyData(seed=2, size=12)
    cfg = TrainConfig(epochs=1, speech_batch_frames=200, text_batch_tokens=60, warmup_steps=2, seed=0)
    tied_ok = untied_ok = True
    t = Trainer(cfg, TaskMode(), toy.speech, toy.text, toy.model_config(speech_layers=12, text_layers=6))
    for _ in range(4):
        t._run_step("speech", [0, 1])
        t._run_step("text", t.text_stream.next())
        for i in range(6):
            for suffix in ("self_attn.q.weight", "ffn.fc2.bias", "norm1.gamma"):
                a = t.params[f"text_encoder.layers.{i}.{suffix}"].data
                b = t.params[f"speech_encoder.layers.{6 + i}.{suffix}"].data
                tied_ok &= a.tobytes() == b.tobytes()
    u = Trainer(cfg, TaskMode(), toy.speech, toy.text, toy.model_config(share_mode="none"))
    for _ in range(4):
        u._run_step("speech", [0, 1])
        before = {n: v.data.tobytes() for n, v in u.params.unique().items() if n.startswith("speech_encoder.")}
        u._run_step("text", u.text_stream.next())
        untied_ok &= all(u.params[n].data.tobytes() == raw for n, raw in before.items())
    ok = tied_ok and untied_ok
    report(4, ok, f"tie_top6 text layer i == speech layer 6+i: {tied_ok}; "
                  f"share none text step leaves speech encoder: {untied_ok}")
    assert ok


# 5 ----------------------------------------------------------------------------------------


def test_criterion_5_synthetic_overfit(report):
    res = overfit_run(seed=0)
    ok = res["wer"] <= 0.05 and res["seconds"] < 15 * 60
    report(5, ok, f"training-set WER {res['wer']:.2%} after 30 epochs, beam 5; {res['seconds']:.0f}s")
    assert ok


# 6 and 7 -------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def held_out_results():
    runs = {}
    for seed in SEEDS:
        runs["baseline", seed] = held_out_run(seed, text_task="none")
        runs[0.2, seed] = held_out_run(seed, mask_ratio=0.2)
        runs[0.0, seed] = held_out_run(seed, mask_ratio=0.0)
    return runs


def _fmt(runs, key, field):
    return "/".join(f"{runs[key, s][field]:.3f}" for s in SEEDS)


def test_criterion_6_joint_training(report, held_out_results):
    runs = held_out_results
    base = statistics.median(runs["baseline", s]["wer"] for s in SEEDS)
    joint = statistics.median(runs[0.2, s]["wer"] for s in SEEDS)
    base_held = statistics.median(runs["baseline", s]["held_out_wer"] for s in SEEDS)
    joint_held = statistics.median(runs[0.2, s]["held_out_wer"] for s in SEEDS)
    seconds = sum(r["seconds"] for r in runs.values())
    ok = joint <= base and joint_held < base_held and seconds < 45 * 60
    report(6, ok, f"median test WER joint {joint:.3f} vs speech-only {base:.3f}; held-out words "
                  f"{joint_held:.3f} vs {base_held:.3f} (per seed joint {_fmt(runs, 0.2, 'held_out_wer')}, "
                  f"baseline {_fmt(runs, 'baseline', 'held_out_wer')}); all runs {seconds / 60:.1f} min")
    assert ok


def test_criterion_7_masking_ratio(report, held_out_results):
    runs = held_out_results
    wins = sum(runs[0.2, s]["held_out_wer"] < runs[0.0, s]["held_out_wer"] for s in SEEDS)
    ok = wins >= 2
    report(7, ok, f"ratio 0.2 beats 0.0 on held-out words in {wins}/3 seeds "
                  f"(0.2: {_fmt(runs, 0.2, 'held_out_wer')}, 0.0: {_fmt(runs, 0.0, 'held_out_wer')})")
    assert ok


# 8 ----------------------------------------------------------------------------------------


def test_criterion_8_oracles(report):
    beam_ok = 0
    for seed in range(50):
        r = random.Random(seed)
        vocab, max_len = r.randint(3, 5), r.randint(1, 4)
        step = toy_model(seed, vocab)
        full = beam_search_core(step, 0, 1, vocab**max_len, max_len)
        beam_ok += full.tokens == exhaustive_search(step, 0, 1, vocab, max_len).tokens
    r = random.Random(8)
    wer_ok = 0
    for _ in range(100):
        ref = [r.choice("abcde") for _ in range(r.randint(1, 10))]
        hyp = [r.choice("abcde") for _ in range(r.randint(0, 10))]
        wer_ok += sum(align_words(ref, hyp)) == _edit_distance(ref, hyp)
    refs, hyps = _fixture(8)
    gap = abs(bleu(refs, hyps).score - sacrebleu.corpus_bleu(hyps, [refs]).score)
    ok = beam_ok == 50 and wer_ok == 100 and gap <= 0.1
    report(8, ok, f"beam = exhaustive on {beam_ok}/50 toy models; WER = DP on {wer_ok}/100 pairs; "
                  f"BLEU gap to sacrebleu {gap:.2e} on 20 sentences")
    assert ok


# 9 ----------------------------------------------------------------------------------------


def test_criterion_9_determinism_and_formats(report, tmp_path):
    toy = ToyData(seed=4, size=12)
    cfg = toy.model_config(dropout=0.1)
    ckpt = Checkpoint.from_model(build_model(cfg, seed=1), epoch=1, step=1)
    raw = to_bytes(ckpt)
    round_trip = to_bytes(from_bytes(raw)) == raw
    avg = average_checkpoints([ckpt] * 5)
    identity = all(np.array_equal(avg.params[n], ckpt.params[n]) for n in ckpt.params)
    firsts = []
    for name in ("a", "b"):
        tc = TrainConfig(epochs=1, speech_batch_frames=200, text_batch_tokens=60, warmup_steps=2, seed=9,
                         checkpoint_dir=str(tmp_path / name))
        train(tc, TaskMode(), toy.speech, toy.text, cfg)
        firsts.append((tmp_path / name / "checkpoint0001.dtckpt").read_bytes())
    reproducible = firsts[0] == firsts[1]
    rng = np.random.default_rng(9)
    frames_ok = 0
    for n in rng.integers(400, 48000, size=50):
        expected = (n - 400) // 160 + 1
        feats = log_mel(Waveform(rng.standard_normal(n) * 0.1, 16000))
        frames_ok += num_frames(int(n)) == expected == len(feats)
    ok = round_trip and identity and reproducible and frames_ok == 50
    report(9, ok, f"checkpoint round trip {round_trip}; average of identical is identity {identity}; "
                  f"seeded first checkpoints identical {reproducible}; frame count {frames_ok}/50")
    assert ok


# 10 ---------------------------------------------------------------------------------------


def test_criterion_10_parameter_count(report):
    params = build_model(ModelConfig.preset("M"), seed=0)
    total = params.num_parameters()
    parts = params.breakdown()
    ok = 65e6 <= total <= 85e6
    detail = ", ".join(f"{k} {v / 1e6:.2f}M" for k, v in parts.items())
    report(10, ok, f"M preset tie_top6: {detail}")
    assert ok
