"""Command-line driver: ``duotrain <subcommand> ...``.

Exit status is 0 on success, 1 when inputs or configuration fail
validation, and 2 when a run fails after validation (for example a
diverged training run).

``DUOTRAIN_THREADS`` caps BLAS/OpenMP threads; it only takes effect when
set before numpy is first imported, which is the case for the console
script.
"""

from __future__ import annotations

import os

_threads = os.environ.get("DUOTRAIN_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import dataclasses  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import typing  # noqa: E402
from pathlib import Path  # noqa: E402

from . import evaldecode, pipeline, synth  # noqa: E402
from .audiofeat import CmvnStats, fit_cmvn, log_mel, read_wav, save_features  # noqa: E402
from .checkpoint import average_checkpoints, load_checkpoint, save_checkpoint  # noqa: E402
from .model import ModelConfig  # noqa: E402
from .textpipe import (  # noqa: E402
    PhonemeVocab,
    SubwordVocab,
    build_char_vocab,
    build_phoneme_vocab,
    learn_subwords,
    load_cmudict,
    parse_lexicon,
    serialize_lexicon,
)
from .trainer import TaskMode, TrainConfig, Trainer, TrainingDiverged  # noqa: E402

log = logging.getLogger("duotrain")

# files written by prepare-text
LEXICON_FILE = "lexicon.txt"
SOURCE_VOCAB_FILE = "source.vocab"
SUBWORD_VOCAB_FILE = "subwords.vocab"
SUBWORD_MERGES_FILE = "subwords.merges"
PREPARE_INFO_FILE = "prepare.json"


class ConfigError(ValueError):
    """Bad configuration; the message starts with the offending field path."""


# -- run configuration ------------------------------------------------------------


@dataclasses.dataclass
class DataConfig:
    manifest: str | None = None
    text: str | None = None
    artifacts: str | None = None
    base_dir: str | None = None  # audio paths are relative to this; default: manifest dir
    cmvn: str | None = None


@dataclasses.dataclass
class DecodeConfig:
    beam: int = 5
    max_len_factor: float = 1.0


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "task": TaskMode,
    "data": DataConfig,
    "decode": DecodeConfig,
}


def _merge(dst, src, path):
    for key, value in src.items():
        where = f"{path}.{key}" if path else key
        if not path and key not in SECTIONS:
            raise ConfigError(f"{where}: unknown section (expected one of {sorted(SECTIONS)})")
        if path:
            cls = SECTIONS[path.split(".")[0]]
            names = {f.name for f in dataclasses.fields(cls)}
            if "." not in path and key not in names:
                raise ConfigError(f"{where}: unknown key")
        if isinstance(value, dict) and not (path and key == "spec_augment"):
            _merge(dst.setdefault(key, {}), value, where)
        else:
            dst[key] = value


def parse_overrides(tokens):
    """``["--train.epochs", "3", ...]`` -> nested dict; values parse as JSON when they can."""
    out = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"{tok}: overrides look like --section.key value")
        try:
            raw = next(it)
        except StopIteration:
            raise ConfigError(f"{tok[2:]}: missing value") from None
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        *parents, leaf = tok[2:].split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return out


def _type_ok(value, hint):
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint in (str, bool):
        return isinstance(value, hint)
    args = typing.get_args(hint)
    if args:
        return any(a is type(None) and value is None or a is not type(None) and _type_ok(value, a) for a in args)
    return True


def _check_types(cls, section, name):
    hints = typing.get_type_hints(cls)
    for key, value in section.items():
        if not _type_ok(value, hints[key]):
            raise ConfigError(f"{name}.{key}: expected {hints[key]}, got {value!r}")


def load_run_config(path=None, overrides=()):
    raw = {}
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config: no such file {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON in {path}: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config: top level must be an object")
        _merge(raw, loaded, "")
    _merge(raw, parse_overrides(list(overrides)), "")
    built = {}
    for name, cls in SECTIONS.items():
        section = raw.get(name, {})
        _check_types(cls, section, name)
        try:
            built[name] = cls(**section)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{name}: {e}") from None
    return built


def _require_file(path, field):
    if path is None:
        raise ConfigError(f"{field}: required")
    if not Path(path).is_file():
        raise ConfigError(f"{field}: no such file {path}")
    return Path(path)


# -- artifacts ---------------------------------------------------------------------


def load_artifacts(directory):
    d = Path(directory)
    for name in (LEXICON_FILE, SOURCE_VOCAB_FILE, SUBWORD_VOCAB_FILE, SUBWORD_MERGES_FILE, PREPARE_INFO_FILE):
        if not (d / name).is_file():
            raise ConfigError(f"data.artifacts: {d} lacks {name}; run prepare-text first")
    info = json.loads((d / PREPARE_INFO_FILE).read_text(encoding="utf-8"))
    lexicon = parse_lexicon((d / LEXICON_FILE).read_text(encoding="utf-8"))
    src_vocab = PhonemeVocab.load(d / SOURCE_VOCAB_FILE)
    subwords = SubwordVocab.load(d / SUBWORD_VOCAB_FILE, d / SUBWORD_MERGES_FILE)
    return info, lexicon, src_vocab, subwords


# -- subcommands -------------------------------------------------------------------


def cmd_prepare_text(args):
    corpus_path = _require_file(args.corpus, "--corpus")
    sentences = [src for src, _ in pipeline.read_text_corpus(corpus_path)]
    targets = [tgt if tgt is not None else src for src, tgt in pipeline.read_text_corpus(corpus_path)]
    if args.manifest:
        rows = pipeline.read_manifest(_require_file(args.manifest, "--manifest"))
        targets += [r.translation or r.transcript for r in rows]
    if args.lexicon:
        lexicon = parse_lexicon(_require_file(args.lexicon, "--lexicon").read_text(encoding="utf-8"))
    else:
        lexicon = load_cmudict()
    if args.repr == "phoneme":
        src_vocab = build_phoneme_vocab(lexicon)
    else:
        src_vocab = build_char_vocab(sentences)
    subwords = learn_subwords(targets, args.subword_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / LEXICON_FILE).write_text(serialize_lexicon(lexicon), encoding="utf-8")
    src_vocab.save(out / SOURCE_VOCAB_FILE)
    subwords.save(out / SUBWORD_VOCAB_FILE, out / SUBWORD_MERGES_FILE)
    info = {"repr": args.repr, "source_vocab_size": len(src_vocab), "subword_vocab_size": len(subwords.tokens)}
    (out / PREPARE_INFO_FILE).write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(info))
    return 0


def cmd_prepare_audio(args):
    manifest = _require_file(args.manifest, "--manifest")
    rows = pipeline.read_manifest(manifest)
    base = Path(args.base_dir) if args.base_dir else manifest.parent
    for r in rows:
        _require_file(base / r.audio, f"manifest row {r.id}: audio")
    out = Path(args.out)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    new_rows, all_feats = [], []
    for r in rows:
        src = base / r.audio
        feats = log_mel(read_wav(src)) if src.suffix == ".wav" else pipeline.load_audio_features(r, base)
        rel = f"feats/{r.id}.feat"
        save_features(out / rel, feats)
        all_feats.append(feats)
        new_rows.append(pipeline.ManifestRow(r.id, rel, len(feats), r.transcript, r.translation))
    pipeline.write_manifest(out / "manifest.tsv", new_rows)
    if all_feats:
        stats = fit_cmvn(all_feats)
        (out / "cmvn.json").write_text(json.dumps(stats.to_dict()) + "\n", encoding="utf-8")
    print(json.dumps({"utterances": len(new_rows), "frames": int(sum(len(f) for f in all_feats))}))
    return 0


def _load_cmvn(path):
    if path is None:
        return None
    return CmvnStats.from_dict(json.loads(_require_file(path, "data.cmvn").read_text(encoding="utf-8")))


def cmd_train(args):
    run = load_run_config(args.config, args.overrides)
    data, task, train_cfg = run["data"], run["task"], run["train"]
    manifest = _require_file(data.manifest, "data.manifest")
    if data.artifacts is None:
        raise ConfigError("data.artifacts: required")
    if task.joint:
        _require_file(data.text, "data.text")
    if train_cfg.checkpoint_dir is None:
        raise ConfigError("train.checkpoint_dir: required")
    for field in ("init_encoder_ckpt", "init_decoder_ckpt", "resume_from"):
        if getattr(train_cfg, field) is not None:
            _require_file(getattr(train_cfg, field), f"train.{field}")
    info, lexicon, src_vocab, subwords = load_artifacts(data.artifacts)
    if info["repr"] != task.text_input_repr:
        raise ConfigError(
            f"task.text_input_repr: artifacts were prepared for {info['repr']!r}, not {task.text_input_repr!r}"
        )
    model_cfg = dataclasses.replace(
        run["model"], phoneme_vocab_size=len(src_vocab), subword_vocab_size=len(subwords.tokens)
    )
    cmvn = _load_cmvn(data.cmvn)
    rows = pipeline.read_manifest(manifest)
    base = Path(data.base_dir) if data.base_dir else manifest.parent
    speech = pipeline.speech_examples(rows, subwords, base, task.primary_task, cmvn)
    text = None
    if task.joint:
        pairs = pipeline.read_text_corpus(data.text)
        text = pipeline.text_examples(pairs, lexicon, src_vocab, subwords, task.text_input_repr)
    trainer = Trainer(train_cfg, task, speech, text, model_cfg)
    ckpts = trainer.run()
    last = ckpts[-1].metadata if ckpts else {}
    print(json.dumps({"epochs": trainer.epoch, "steps": trainer.step, "last": last}))
    return 0


def _checkpoint_key(path):
    return path.name


def cmd_average(args):
    paths = [Path(p) for p in args.checkpoints]
    if args.checkpoint_dir:
        d = Path(args.checkpoint_dir)
        if not d.is_dir():
            raise ConfigError(f"--checkpoint-dir: no such directory {d}")
        paths += sorted(d.glob("checkpoint*.dtckpt"), key=_checkpoint_key)
    for p in paths:
        _require_file(p, "checkpoint")
    if not paths:
        raise ConfigError("checkpoints: none given")
    if args.last < 1:
        raise ConfigError("--last: must be >= 1")
    chosen = paths[-args.last:]
    avg = average_checkpoints(chosen)
    save_checkpoint(avg, args.out)
    print(json.dumps({"averaged": [str(p) for p in chosen], "out": str(args.out)}))
    return 0


def cmd_decode(args):
    ckpt = load_checkpoint(_require_file(args.checkpoint, "--checkpoint"))
    manifest = _require_file(args.manifest, "--manifest")
    if args.beam < 1:
        raise ConfigError("--beam: must be >= 1")
    _, _, _, subwords = load_artifacts(args.artifacts)
    cmvn = _load_cmvn(args.cmvn)
    rows = pipeline.read_manifest(manifest)
    base = Path(args.base_dir) if args.base_dir else manifest.parent
    params = ckpt.to_model()
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, delimiter="\t", lineterminator="\n")
        for r in rows:
            feats = pipeline.load_audio_features(r, base, cmvn)
            hyp = evaldecode.beam_search(params, feats, beam=args.beam, max_len_factor=args.max_len_factor)
            writer.writerow((r.id, evaldecode.decode_subwords(hyp.tokens, subwords), f"{hyp.normalized_score:.6f}"))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def read_sentences(path):
    """Sentences from a plain text file, a decode TSV or a manifest, keyed by id when possible."""
    path = _require_file(path, "input")
    lines = path.read_text(encoding="utf-8").splitlines()
    if lines and tuple(lines[0].split("\t")) == pipeline.MANIFEST_COLUMNS:
        return {r.id: r.transcript for r in pipeline.read_manifest(path)}
    if lines and all(len(line.split("\t")) == 3 for line in lines):
        return {line.split("\t")[0]: line.split("\t")[1] for line in lines}
    return {str(i): line for i, line in enumerate(lines)}


def cmd_score(args):
    refs, hyps = read_sentences(args.ref), read_sentences(args.hyp)
    if set(refs) != set(hyps):
        raise ConfigError("--hyp: ids or line counts differ from --ref")
    ids = list(refs)
    r, h = [refs[i] for i in ids], [hyps[i] for i in ids]
    if args.metric == "wer":
        result = evaldecode.corpus_wer(r, h, normalize=not args.no_normalize)
        report = {"metric": "wer", "value": result.wer, "breakdown": result.to_dict()}
    else:
        result = evaldecode.bleu(r, h)
        report = {"metric": "bleu", "value": result.score, "breakdown": result.to_dict()}
    print(json.dumps(report))
    return 0


def cmd_gen_synth(args):
    if args.size < 0 or args.text_size < 0:
        raise ConfigError("--size: must be >= 0")
    synth.gen_synth(args.seed, args.size, args.out, n_words=args.words, text_size=args.text_size)
    print(json.dumps({"out": str(args.out), "utterances": args.size}))
    return 0


# -- entry point -------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="duotrain", description="Joint speech/text training toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare-text", help="build lexicon, source vocabulary and subword model")
    s.add_argument("--corpus", required=True, help="text corpus (one sentence or source<TAB>target per line)")
    s.add_argument("--manifest", help="speech manifest whose transcripts also train the subword model")
    s.add_argument("--lexicon", help="CMU-format lexicon (default: the bundled CMU dictionary)")
    s.add_argument("--repr", choices=("phoneme", "character"), default="phoneme")
    s.add_argument("--subword-size", type=int, default=10000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare_text)

    s = sub.add_parser("prepare-audio", help="extract log-mel features and CMVN statistics")
    s.add_argument("--manifest", required=True)
    s.add_argument("--base-dir", help="directory audio paths are relative to (default: manifest dir)")
    s.add_argument("--out", required=True, help="writes manifest.tsv, feats/ and cmvn.json here")
    s.set_defaults(func=cmd_prepare_audio)

    s = sub.add_parser(
        "train", help="train a model",
        description="Train from a JSON run config. Any field can be overridden with --section.key value, "
        "e.g. --train.epochs 3 --model.embed_dim 64. Sections: " + ", ".join(SECTIONS) + ".",
    )
    s.add_argument("--config", help="JSON run config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("average", help="average the last n checkpoints")
    s.add_argument("checkpoints", nargs="*", help="checkpoint files, oldest first")
    s.add_argument("--checkpoint-dir", help="also take checkpoint*.dtckpt from here, by name")
    s.add_argument("--last", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_average)

    s = sub.add_parser("decode", help="beam-search decode a manifest to id/hypothesis/score TSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--artifacts", required=True, help="prepare-text output directory")
    s.add_argument("--base-dir")
    s.add_argument("--cmvn", help="cmvn.json from prepare-audio")
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--max-len-factor", type=float, default=1.0)
    s.add_argument("--out", help="output TSV (default: stdout)")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("score", help="corpus WER or BLEU as JSON")
    s.add_argument("--metric", choices=("wer", "bleu"), required=True)
    s.add_argument("--ref", required=True, help="text file, decode TSV or manifest")
    s.add_argument("--hyp", required=True, help="text file, decode TSV or manifest")
    s.add_argument("--no-normalize", action="store_true", help="WER on raw whitespace tokens")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("gen-synth", help="write the synthetic toy corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=200)
    s.add_argument("--words", type=int, default=30)
    s.add_argument("--text-size", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_synth)
    return p


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command == "train":
        args.overrides = extra
    elif extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (TrainingDiverged, RuntimeError, OSError) as e:
        print(f"failed: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
