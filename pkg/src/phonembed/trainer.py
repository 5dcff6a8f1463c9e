"""Joint training: batching, negative sampling, optimization, checkpoints.

Batches mix three independently sampled parts: spoken words drawn
uniformly from the whole corpus, text words drawn uniformly from the
lexicon, and paired items drawn uniformly from the supervised pair set,
each paired item with negative spoken words that never carry the
anchor's label.  Each part consumes its own random stream, so replacing
the audio corpus cannot perturb the text side's trajectory when the
cross-domain terms are off.

Training is plain single-threaded first-order optimization with an
adaptive-moment update, global-norm gradient clipping, per-epoch
validation on a held-out slice of the pair set, and early stopping with
a best-checkpoint guarantee.  Under a fixed seed the whole run is
bit-reproducible.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .corpus import Corpus, CorpusError, PairSet
from .nets import (
    AudioBatch,
    NetConfig,
    TextBatch,
    WordEmbedModel,
    load_checkpoint,
    save_checkpoint,
)
from .objectives import Batch, LossWeights, PairBatch, total_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters and loss weights."""

    learning_rate: float = 1e-4
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    grad_clip: float = 5.0
    negatives_per_pair: int = 1
    val_fraction: float = 0.1
    cycle_mode: str = "soft"
    steps_per_epoch: int | None = None
    adversarial: bool = False
    n_critic: int = 5
    gp_weight: float = 10.0
    adv_weight: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.cycle_mode not in ("soft", "hard"):
            raise ValueError(f"unknown cycle_mode {self.cycle_mode!r}")


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, params: list[Parameter], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class BatchStreams:
    """Independent random streams for each sampled batch part."""

    NAMES = ("audio", "text", "pairs", "negatives", "split", "critic")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(self.NAMES))
        for name, child in zip(self.NAMES, children):
            setattr(self, name, np.random.default_rng(child))

    @classmethod
    def from_rng(cls, rng: np.random.Generator) -> "BatchStreams":
        """All parts share one generator (simple, but part draws interact)."""
        obj = cls.__new__(cls)
        for name in cls.NAMES:
            setattr(obj, name, rng)
        return obj


def _as_streams(rng) -> BatchStreams:
    if isinstance(rng, BatchStreams):
        return rng
    if isinstance(rng, np.random.Generator):
        return BatchStreams.from_rng(rng)
    raise TypeError(f"expected BatchStreams or numpy Generator, got {type(rng)!r}")


def sample_negatives(
    corpus: Corpus, anchor_word_id: int, k: int, rng: np.random.Generator
) -> list[int]:
    """Uniformly sample k spoken words not labeled with the anchor word.

    Unlabeled spoken words are eligible.  Rejection sampling keeps the
    distribution uniform over eligible tokens; if rejections pile up the
    eligible set is enumerated exactly, and an empty set is an error.
    """
    anchor_surface = corpus.lexicon.surface(anchor_word_id)
    n = corpus.n_spoken
    out: list[int] = []
    budget = 50 + 10 * k
    while len(out) < k and budget > 0:
        i = int(rng.integers(n))
        budget -= 1
        if corpus.spoken[i].word_label != anchor_surface:
            out.append(i)
    if len(out) < k:
        eligible = [
            i for i, w in enumerate(corpus.spoken) if w.word_label != anchor_surface
        ]
        if not eligible:
            raise CorpusError(
                f"no spoken word outside {anchor_surface!r}; cannot sample negatives"
            )
        while len(out) < k:
            out.append(eligible[int(rng.integers(len(eligible)))])
    return out


def audio_batch(corpus: Corpus, indices) -> AudioBatch:
    return AudioBatch.from_arrays([corpus.spoken[int(i)].frames for i in indices])


def text_batch(corpus: Corpus, word_ids) -> TextBatch:
    lex = corpus.lexicon
    return TextBatch.from_units([lex.units_of(int(w)) for w in word_ids], pad_id=lex.pad_id)


def sample_batch(
    corpus: Corpus,
    pairs: PairSet | None,
    size: int,
    rng: BatchStreams | np.random.Generator,
    negatives_per_pair: int = 1,
) -> Batch:
    """Draw one training batch; see the module docstring for composition."""
    if corpus.n_spoken < 1:
        raise CorpusError("cannot sample from an empty corpus")
    streams = _as_streams(rng)
    audio_idx = streams.audio.integers(0, corpus.n_spoken, size=size)
    audio = audio_batch(corpus, audio_idx)
    word_ids = streams.text.integers(0, corpus.lexicon.n_words, size=size)
    text = text_batch(corpus, word_ids)

    if pairs is None or pairs.n_paired == 0:
        return Batch(audio=audio, text=text, pairs=None, negatives=None)

    sel = streams.pairs.integers(0, pairs.n_paired, size=size)
    chosen = [pairs.pairs[int(j)] for j in sel]
    pair_batch = PairBatch(
        audio=audio_batch(corpus, [i for i, _ in chosen]),
        text=text_batch(corpus, [w for _, w in chosen]),
    )
    neg_idx: list[int] = []
    for _, word_id in chosen:
        neg_idx.extend(sample_negatives(corpus, word_id, negatives_per_pair, streams.negatives))
    return Batch(
        audio=audio,
        text=text,
        pairs=pair_batch,
        negatives=audio_batch(corpus, neg_idx),
        negatives_per_pair=negatives_per_pair,
    )


# -- the training loop ---------------------------------------------------


@dataclass
class TrainResult:
    """Best-validation model plus the full loss history."""

    model: WordEmbedModel
    history: list[dict]
    validations: list[dict]
    best_val: float
    best_epoch: int
    steps: int
    aborted: bool = False

    def save_history(self, path) -> None:
        """Line-delimited records: per-step terms and per-epoch validation."""
        with open(path, "w", encoding="utf-8") as f:
            for rec in self.history:
                f.write(json.dumps({"kind": "step", **rec}) + "\n")
            for rec in self.validations:
                f.write(json.dumps({"kind": "validation", **rec}) + "\n")


def _snapshot(model: WordEmbedModel) -> dict[str, np.ndarray]:
    return {n: p.data.copy() for n, p in model.named_parameters().items()}


def _restore(model: WordEmbedModel, snap: dict[str, np.ndarray]) -> None:
    for n, p in model.named_parameters().items():
        p.data = snap[n].copy()


def train_joint(
    corpus: Corpus,
    pairs: PairSet | None,
    net_config: NetConfig,
    train_config: TrainConfig,
) -> TrainResult:
    """Minimize the weighted loss over the corpus and pair set.

    Returns the checkpoint with the lowest validation loss seen at any
    epoch boundary.  On divergence (non-finite loss) the run aborts and
    the last finite best checkpoint is returned.
    """
    cfg = train_config
    if net_config.feature_dim != corpus.feature_dim:
        raise CorpusError(
            f"net config expects feature dim {net_config.feature_dim}, "
            f"corpus has {corpus.feature_dim}"
        )
    streams = BatchStreams(cfg.seed)
    model = WordEmbedModel(net_config, seed=cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)

    adversary = None
    if cfg.adversarial:
        from .alignment import SpeakerAdversary  # deferred; alignment imports us

        adversary = SpeakerAdversary(
            phonetic_dim=net_config.phonetic_dim,
            seed=cfg.seed,
            gp_weight=cfg.gp_weight,
            lr=cfg.learning_rate,
        )

    # Hold out a slice of the pair set for validation.
    train_pairs: PairSet | None = pairs
    val_batch: Batch | None = None
    if pairs is not None and pairs.n_paired > 0:
        perm = streams.split.permutation(pairs.n_paired)
        n_val = int(round(cfg.val_fraction * pairs.n_paired))
        if n_val > 0:
            val_sel = [pairs.pairs[int(j)] for j in perm[:n_val]]
            train_sel = [pairs.pairs[int(j)] for j in perm[n_val:]]
            train_pairs = PairSet(pairs=tuple(train_sel)) if train_sel else None
            vp = PairBatch(
                audio=audio_batch(corpus, [i for i, _ in val_sel]),
                text=text_batch(corpus, [w for _, w in val_sel]),
            )
            neg_idx: list[int] = []
            for _, word_id in val_sel:
                neg_idx.extend(
                    sample_negatives(corpus, word_id, cfg.negatives_per_pair, streams.split)
                )
            val_batch = Batch(
                audio=vp.audio,
                text=vp.text,
                pairs=vp,
                negatives=audio_batch(corpus, neg_idx),
                negatives_per_pair=cfg.negatives_per_pair,
            )
    else:
        warnings.warn(
            "empty pair set: training with intra-domain terms only (warm-up mode)",
            stacklevel=2,
        )

    steps_per_epoch = cfg.steps_per_epoch or max(
        1, math.ceil(corpus.n_spoken / cfg.batch_size)
    )
    history: list[dict] = []
    validations: list[dict] = []
    best_val = math.inf
    best_epoch = -1
    best_snap = _snapshot(model)
    bad_epochs = 0
    step = 0
    aborted = False

    for epoch in range(cfg.max_epochs):
        epoch_total = 0.0
        for _ in range(steps_per_epoch):
            if adversary is not None:
                adversary.run_critic_steps(
                    model, corpus, streams.critic, cfg.batch_size, cfg.n_critic
                )
            batch = sample_batch(
                corpus, train_pairs, cfg.batch_size, streams, cfg.negatives_per_pair
            )
            loss, breakdown = total_loss(batch, model, cfg.weights, cfg.cycle_mode)
            if adversary is not None:
                adv_term = adversary.encoder_separation(
                    model, corpus, streams.critic, cfg.batch_size
                )
                breakdown["adversarial"] = adv_term.item()
                loss = ad.add(loss, ad.mul(adv_term, cfg.adv_weight))
                breakdown["total"] = loss.item()
            if not math.isfinite(breakdown["total"]):
                log.error("non-finite loss at step %d; aborting", step)
                aborted = True
                break
            ad.zero_grads(params)
            loss.backward()
            grad_norm = clip_global_norm(params, cfg.grad_clip)
            opt.step()
            step += 1
            epoch_total += breakdown["total"]
            history.append(
                {"step": step, "epoch": epoch, "grad_norm": grad_norm, **breakdown}
            )
        if aborted:
            break

        if val_batch is not None:
            with ad.no_grad():
                _, vb = total_loss(val_batch, model, cfg.weights, cfg.cycle_mode)
            val = vb["total"]
        else:
            val = epoch_total / steps_per_epoch
        validations.append({"epoch": epoch, "val_loss": val})
        if math.isfinite(val) and val < best_val:
            best_val = val
            best_epoch = epoch
            best_snap = _snapshot(model)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    _restore(model, best_snap)
    return TrainResult(
        model=model,
        history=history,
        validations=validations,
        best_val=best_val,
        best_epoch=best_epoch,
        steps=step,
        aborted=aborted,
    )


# -- checkpoint operations -------------------------------------------------


def checkpoint_save(model: WordEmbedModel, path, extra_meta: dict | None = None):
    """Write a checkpoint; loading it reproduces forward passes bit-exactly."""
    save_checkpoint(model, path, extra_meta)
    return Path(path)


def checkpoint_load(path, expect: dict | None = None) -> WordEmbedModel:
    return load_checkpoint(path, expect)
