"""Joint speech/text training with strict speech-step / text-step alternation.

Every speech step minimises the speech-to-text loss (speech encoder +
decoder); every text step minimises the text-to-text loss (text encoder +
decoder) on noised or plain phoneme input. The two losses are weighted
equally.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audiofeat import SpecAugmentPolicy, spec_augment
from .checkpoint import Checkpoint, init_from_pretrained, load_checkpoint, load_into, save_checkpoint
from .model import (
    ModelConfig,
    ModelParameters,
    build_model,
    decode_logits,
    decoder_io,
    encode_speech,
    encode_text,
    label_smoothed_loss,
    pad_batch,
    pad_features,
)
from .numcore import AdamState, NonFiniteError, adam_step, warmup_lr
from .textpipe.noise import apply_noise
from .textpipe.subwords import BOS_ID, EOS_ID
from .textpipe.vocab import EOS_ID as SRC_EOS_ID
from .textpipe.vocab import NOISE_ID, PAD_ID as SRC_PAD_ID

log = logging.getLogger(__name__)

PRIMARY_TASKS = ("ASR", "ST")
TEXT_TASKS = ("none", "denoise", "mt", "passthrough")
INPUT_REPRS = ("phoneme", "character")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class SpeechExample:
    id: str
    features: np.ndarray  # (frames, dim)
    target: list  # subword ids, no <bos>/<eos>


@dataclass
class TextExample:
    source: list  # phoneme (or character) ids, no <eos>
    target: list  # subword ids
    parallel: bool = False


@dataclass
class TaskMode:
    primary_task: str = "ASR"
    text_task: str = "denoise"
    mask_ratio: float = 0.2
    text_input_repr: str = "phoneme"

    def __post_init__(self):
        if self.primary_task not in PRIMARY_TASKS:
            raise ValueError(f"primary_task must be one of {PRIMARY_TASKS}")
        if self.text_task not in TEXT_TASKS:
            raise ValueError(f"text_task must be one of {TEXT_TASKS}")
        if self.text_input_repr not in INPUT_REPRS:
            raise ValueError(f"text_input_repr must be one of {INPUT_REPRS}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0, 1]")

    @property
    def joint(self):
        return self.text_task != "none"

    @property
    def noise_ratio(self):
        return 0.0 if self.text_task == "passthrough" else self.mask_ratio


@dataclass
class TrainConfig:
    epochs: int = 240
    speech_batch_frames: int = 40000
    text_batch_tokens: int = 20000
    lr: float = 1e-3
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    seed: int = 1
    checkpoint_dir: str | None = None
    average_last: int = 10
    init_encoder_ckpt: str | None = None
    init_decoder_ckpt: str | None = None
    resume_from: str | None = None
    spec_augment: SpecAugmentPolicy | None = None
    log_path: str | None = None

    def __post_init__(self):
        if isinstance(self.spec_augment, dict):
            self.spec_augment = SpecAugmentPolicy(**self.spec_augment)
        if self.speech_batch_frames <= 0 or self.text_batch_tokens <= 0:
            raise ValueError("batch budgets must be positive")
        if self.average_last < 1:
            raise ValueError("average_last must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def make_batches(lengths, budget, rng):
    """Length-bucketed batches whose padded size (count x longest) fits ``budget``.

    Items longer than the budget are dropped with a warning. Batch order is
    shuffled with ``rng``.
    """
    lengths = np.asarray(lengths)
    order = np.lexsort((rng.random(len(lengths)), lengths))
    batches, cur, longest = [], [], 0
    for i in order:
        n = int(lengths[i])
        if n > budget:
            log.warning("skipping item %d: length %d exceeds batch budget %d", i, n, budget)
            continue
        if cur and max(longest, n) * (len(cur) + 1) > budget:
            batches.append(cur)
            cur, longest = [], 0
        cur.append(int(i))
        longest = max(longest, n)
    if cur:
        batches.append(cur)
    return [batches[j] for j in rng.permutation(len(batches))]


class _TextStream:
    """Endless batches over the text corpus, reshuffled every pass."""

    def __init__(self, data, budget, rng):
        self.data = data
        self.budget = budget
        self.rng = rng
        self.queue = []

    def next(self):
        if not self.queue:
            self.queue = make_batches([len(x.source) + 1 for x in self.data], self.budget, self.rng)
            if not self.queue:
                raise ValueError("no text example fits the text batch budget")
        return self.queue.pop(0)


def _rng_state(rngs):
    return {k: r.bit_generator.state for k, r in rngs.items()}


class Trainer:
    def __init__(self, cfg: TrainConfig, mode: TaskMode, speech_data, text_data=None, model=None):
        if not speech_data:
            raise ValueError("speech_data is empty")
        if mode.joint and not text_data:
            raise ValueError(f"text task {mode.text_task!r} needs text data")
        if mode.text_task == "mt" and not all(x.parallel for x in text_data):
            raise ValueError("the mt text task needs parallel (source, translation) text")
        self.cfg = cfg
        self.mode = mode
        self.speech_data = list(speech_data)
        self.text_data = list(text_data or [])
        if isinstance(model, ModelParameters):
            self.params = model
        else:
            self.params = build_model(model or ModelConfig(), seed=cfg.seed)
        init_from_pretrained(self.params, cfg.init_encoder_ckpt, cfg.init_decoder_ckpt)
        self.adam = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        streams = np.random.SeedSequence(cfg.seed).spawn(5)
        self.rngs = {
            name: np.random.default_rng(s)
            for name, s in zip(("batch", "text", "dropout", "augment", "noise"), streams)
        }
        self.text_stream = _TextStream(self.text_data, cfg.text_batch_tokens, self.rngs["text"]) if mode.joint else None
        self.step = 0
        self.epoch = 0
        self.history = []
        self._log_file = None
        if cfg.resume_from:
            self._resume(load_checkpoint(cfg.resume_from))

    def _resume(self, ckpt: Checkpoint):
        load_into(self.params, ckpt.params)
        if ckpt.adam is not None:
            self.adam = ckpt.adam
        for k, st in ckpt.rng_state.items():
            if k in self.rngs:
                self.rngs[k].bit_generator.state = st
        self.epoch, self.step = ckpt.epoch, ckpt.step

    # -- single steps -----------------------------------------------------------

    def _update(self, loss):
        self.params.zero_grad()
        loss.backward()
        grads = {n: t.grad for n, t in self.params.unique().items()}
        lr = warmup_lr(self.step, self.cfg.lr, self.cfg.warmup_steps)
        adam_step(self.params.unique(), grads, self.adam, lr=lr)
        return lr

    def speech_step(self, batch):
        feats = [self.speech_data[i].features for i in batch]
        if self.cfg.spec_augment is not None:
            feats = [spec_augment(f, self.cfg.spec_augment, self.rngs["augment"]) for f in feats]
        x, lengths = pad_features(feats)
        prefix, gold = decoder_io([self.speech_data[i].target for i in batch], BOS_ID, EOS_ID)
        memory, mem_len = encode_speech(self.params, x, lengths, rng=self.rngs["dropout"])
        logits = decode_logits(self.params, memory, mem_len, prefix, rng=self.rngs["dropout"])
        loss, ntok = label_smoothed_loss(logits, gold, self.params.config.label_smoothing)
        return loss, ntok, {"frames": int(x.shape[0] * x.shape[1])}

    def text_step(self, batch):
        ratio = self.mode.noise_ratio
        sources, masked, total = [], 0, 0
        for i in batch:
            src = list(self.text_data[i].source)
            if ratio > 0:
                seed = int(self.rngs["noise"].integers(2**63 - 1))
                src = apply_noise(src, ratio, seed)
            masked += sum(t == NOISE_ID for t in src)
            total += len(src)
            sources.append(src + [SRC_EOS_ID])
        ids = pad_batch(sources, SRC_PAD_ID)
        prefix, gold = decoder_io([self.text_data[i].target for i in batch], BOS_ID, EOS_ID)
        memory, mem_len = encode_text(self.params, ids, rng=self.rngs["dropout"])
        logits = decode_logits(self.params, memory, mem_len, prefix, rng=self.rngs["dropout"])
        loss, ntok = label_smoothed_loss(logits, gold, self.params.config.label_smoothing)
        return loss, ntok, {"source_tokens": int(ids.size), "masked": masked, "unmasked_total": total}

    def _run_step(self, task, batch):
        self.step += 1
        try:
            loss, ntok, info = (self.speech_step if task == "speech" else self.text_step)(batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteError("loss")
            lr = self._update(loss)
        except NonFiniteError as e:
            raise TrainingDiverged(f"training diverged at step {self.step} ({task} batch): {e}") from e
        record = {"step": self.step, "task": task, "loss": value, "lr": lr, "tokens": ntok}
        self.history.append(record)
        if self._log_file is not None:
            self._log_file.write(json.dumps(record) + "\n")
        return value, ntok, info

    # -- epochs ---------------------------------------------------------------

    def run_epoch(self):
        self.epoch += 1
        batches = make_batches(
            [len(x.features) for x in self.speech_data], self.cfg.speech_batch_frames, self.rngs["batch"]
        )
        sums = {"speech": [0.0, 0], "text": [0.0, 0]}
        masked = total = 0
        for sb in batches:
            loss, ntok, _ = self._run_step("speech", sb)
            sums["speech"][0] += loss * ntok
            sums["speech"][1] += ntok
            if self.text_stream is not None:
                loss, ntok, info = self._run_step("text", self.text_stream.next())
                sums["text"][0] += loss * ntok
                sums["text"][1] += ntok
                masked += info["masked"]
                total += info["unmasked_total"]
        meta = {
            "train_loss": sums["speech"][0] / max(sums["speech"][1], 1),
            "text_loss": sums["text"][0] / sums["text"][1] if sums["text"][1] else None,
            "masked_fraction": masked / total if total else None,
            "speech_steps": len(batches),
        }
        ckpt = Checkpoint.from_model(
            self.params, self.adam, epoch=self.epoch, step=self.step,
            rng_state=_rng_state(self.rngs), metadata=meta,
        )
        if self.cfg.checkpoint_dir:
            path = Path(self.cfg.checkpoint_dir) / f"checkpoint{self.epoch:04d}.dtckpt"
            save_checkpoint(ckpt, path)
        return ckpt

    def run(self):
        if self.cfg.checkpoint_dir:
            Path(self.cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
        if self.cfg.log_path:
            self._log_file = open(self.cfg.log_path, "a", encoding="utf-8")
        try:
            return [self.run_epoch() for _ in range(self.epoch, self.cfg.epochs)]
        finally:
            if self._log_file is not None:
                self._log_file.close()
                self._log_file = None


def train(cfg: TrainConfig, mode: TaskMode, speech_data, text_data=None, model=None):
    """Train and return one checkpoint per epoch.

    ``model`` is a ModelConfig (fresh init from ``cfg.seed``) or existing
    ModelParameters, which are updated in place.
    """
    return Trainer(cfg, mode, speech_data, text_data, model).run()


def config_to_dict(cfg: TrainConfig):
    d = asdict(cfg)
    if cfg.spec_augment is not None:
        d["spec_augment"] = asdict(cfg.spec_augment)
    return d
