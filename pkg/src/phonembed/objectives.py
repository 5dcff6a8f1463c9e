"""Training objectives over a batch of audio, text, and paired items.

Five base terms plus an optional cycle term, each a differentiable
scalar:

* audio reconstruction: mean squared error between a spoken word and its
  reconstruction from its own phonetic and speaker vectors;
* text reconstruction: negative log-likelihood of a text word under the
  teacher-forced symbol decoder driven by its own phonetic vector;
* cross audio reconstruction: as audio reconstruction, but the phonetic
  vector comes from the paired text word;
* cross text reconstruction: as text reconstruction, but the phonetic
  vector comes from the paired spoken word;
* embedding: squared distance pulling paired phonetic vectors together,
  plus a hinge pushing negative pairs at least ``margin`` apart in
  squared distance;
* cycle: map each paired item across domains and back and score the
  round trip with the matching reconstruction term.

Reduction conventions: squared errors average per item over frames and
dimensions and then over items; likelihood terms sum each item's steps
(including the end marker) and average over items.  Batch composition
therefore never rescales a term.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import AudioBatch, TextBatch

TERM_NAMES = (
    "audio_recon",
    "text_recon",
    "cross_audio",
    "cross_text",
    "embedding",
    "cycle",
)


@dataclass(frozen=True)
class LossWeights:
    """Term weights, the hinge margin, and per-term switches."""

    audio_recon: float = 0.2
    text_recon: float = 1.0
    cross_audio: float = 0.2
    cross_text: float = 1.0
    embedding: float = 5.0
    cycle: float = 1.0
    margin: float = 0.01
    enable_audio_recon: bool = True
    enable_text_recon: bool = True
    enable_cross_audio: bool = True
    enable_cross_text: bool = True
    enable_embedding: bool = True
    enable_cycle: bool = False

    def __post_init__(self):
        for name in TERM_NAMES:
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if not any(self.enabled(name) for name in TERM_NAMES):
            raise ValueError("at least one loss term must be enabled")

    def enabled(self, term: str) -> bool:
        return bool(getattr(self, f"enable_{term}"))

    def without(self, term: str) -> "LossWeights":
        """A copy with one term switched off (ablation)."""
        if term not in TERM_NAMES:
            raise ValueError(f"unknown loss term {term!r}")
        return replace(self, **{f"enable_{term}": False})

    def with_cycle(self, weight: float = 1.0) -> "LossWeights":
        return replace(self, enable_cycle=True, cycle=weight)

    def separate_learning(self) -> "LossWeights":
        """Intra-domain terms only (cross-domain losses switched off)."""
        return replace(
            self,
            enable_cross_audio=False,
            enable_cross_text=False,
            enable_embedding=False,
            enable_cycle=False,
        )


@dataclass(frozen=True)
class PairBatch:
    """Matched spoken and text words (same positions)."""

    audio: AudioBatch
    text: TextBatch

    def __post_init__(self):
        if self.audio.size != self.text.size:
            raise ValueError(
                f"paired batch sides disagree: {self.audio.size} audio vs "
                f"{self.text.size} text items"
            )

    @property
    def size(self) -> int:
        return self.audio.size


@dataclass(frozen=True)
class Batch:
    """One training batch.

    ``negatives`` holds ``negatives_per_pair`` spoken words per paired
    item, flattened in pair order; a negative must never carry the word
    label of its anchor text word (the sampler guarantees this).
    """

    audio: AudioBatch | None = None
    text: TextBatch | None = None
    pairs: PairBatch | None = None
    negatives: AudioBatch | None = None
    negatives_per_pair: int = 1

    def __post_init__(self):
        if self.negatives is not None and self.pairs is not None:
            want = self.pairs.size * self.negatives_per_pair
            if self.negatives.size != want:
                raise ValueError(
                    f"expected {want} negative samples, got {self.negatives.size}"
                )


# -- reductions ----------------------------------------------------------


def masked_frame_mse(pred: list[Tensor], target: AudioBatch) -> Tensor:
    """Mean over items of per-item mean (over real frames x dims) squared error."""
    dim = target.frames.shape[2]
    acc: Tensor | None = None
    for t, frame in enumerate(pred):
        diff = ad.sub(frame, target.frames[:, t])
        row = ad.tsum(ad.square(diff), axis=1)
        row = ad.mul(row, target.mask[:, t])
        acc = row if acc is None else ad.add(acc, row)
    per_item = ad.mul(acc, 1.0 / (target.lengths * dim))
    return ad.tmean(per_item)


def sequence_nll(logps: list[Tensor], targets: np.ndarray, step_mask: np.ndarray) -> Tensor:
    """Mean over items of the summed per-step negative log-likelihood."""
    acc: Tensor | None = None
    for t, lp in enumerate(logps):
        row = ad.mul(ad.pick(lp, targets[:, t]), step_mask[:, t])
        acc = row if acc is None else ad.add(acc, row)
    return ad.mul(ad.tsum(acc), -1.0 / targets.shape[0])


def _zero(term: str, why: str) -> Tensor:
    warnings.warn(f"{term} evaluated on {why}; defined as 0", stacklevel=3)
    return Tensor(np.zeros(()))


# -- the individual terms --------------------------------------------------


def intra_audio_recon_loss(batch: Batch, model) -> Tensor:
    """Reconstruction error of spoken words from their own embeddings."""
    if batch.audio is None or batch.audio.size == 0:
        return _zero("audio reconstruction loss", "an empty audio set")
    phon = model.audio_phonetic(batch.audio)
    spk = model.speaker(batch.audio)
    recon = model.reconstruct_audio(phon, spk, batch.audio.max_len)
    return masked_frame_mse(recon, batch.audio)


def intra_text_recon_loss(batch: Batch, model) -> Tensor:
    """Teacher-forced likelihood of text words from their own embeddings."""
    if batch.text is None or batch.text.size == 0:
        return _zero("text reconstruction loss", "an empty text set")
    phon = model.text_phonetic(batch.text)
    logps, targets, mask = model.text_teacher_logprobs(phon, batch.text)
    return sequence_nll(logps, targets, mask)


def cross_audio_recon_loss(batch: Batch, model) -> Tensor:
    """Reconstruct the spoken side of each pair from the text embedding."""
    if batch.pairs is None or batch.pairs.size == 0:
        return _zero("cross audio reconstruction loss", "an empty pair set")
    phon = model.text_phonetic(batch.pairs.text)
    spk = model.speaker(batch.pairs.audio)
    recon = model.reconstruct_audio(phon, spk, batch.pairs.audio.max_len)
    return masked_frame_mse(recon, batch.pairs.audio)


def cross_text_recon_loss(batch: Batch, model) -> Tensor:
    """Decode the text side of each pair from the audio embedding."""
    if batch.pairs is None or batch.pairs.size == 0:
        return _zero("cross text reconstruction loss", "an empty pair set")
    phon = model.audio_phonetic(batch.pairs.audio)
    logps, targets, mask = model.text_teacher_logprobs(phon, batch.pairs.text)
    return sequence_nll(logps, targets, mask)


def cross_embedding_loss(batch: Batch, model, margin: float) -> Tensor:
    """Pull paired embeddings together; hinge negatives ``margin`` apart.

    Both the pull and the hinge act on squared Euclidean distances.
    """
    if batch.pairs is None or batch.pairs.size == 0:
        return _zero("cross embedding loss", "an empty pair set")
    if batch.negatives is None or batch.negatives.size == 0:
        raise ValueError(
            "cross embedding loss requires negative samples; "
            "omitting them silently would change the objective"
        )
    phon_a = model.audio_phonetic(batch.pairs.audio)
    phon_t = model.text_phonetic(batch.pairs.text)
    pos = ad.tmean(ad.tsum(ad.square(ad.sub(phon_a, phon_t)), axis=1))

    phon_neg = model.audio_phonetic(batch.negatives)
    anchor_idx = np.repeat(np.arange(batch.pairs.size), batch.negatives_per_pair)
    anchors = ad.embedding(phon_t, anchor_idx)
    neg_sq = ad.tsum(ad.square(ad.sub(phon_neg, anchors)), axis=1)
    hinge = ad.tmean(ad.relu(ad.sub(margin, neg_sq)))
    return ad.add(pos, hinge)


def cycle_loss(batch: Batch, model, mode: str = "soft") -> Tensor:
    """Round-trip consistency through both domains, on paired items only.

    Audio side: encode a spoken word, decode it to symbols, re-encode the
    symbols, regenerate audio with the original speaker vector, and score
    against the original frames.  Text side: encode a text word, generate
    audio with the paired speaker vector, re-encode the audio, and score
    the teacher-forced decode against the original units.

    The symbol round trip needs a differentiable relaxation: ``soft``
    feeds probability-weighted embeddings back (smooth everywhere);
    ``hard`` feeds greedy one-hots with straight-through gradients.
    """
    if batch.pairs is None or batch.pairs.size == 0:
        return _zero("cycle loss", "an empty pair set")
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown cycle relaxation {mode!r}")
    pairs = batch.pairs
    spk = model.speaker(pairs.audio)

    phon_a = model.audio_phonetic(pairs.audio)
    decode = model.text_soft_decode if mode == "soft" else model.text_hard_decode
    inner_probs = decode(phon_a, pairs.text.max_len)
    phon_t2 = model.text_phonetic_soft(inner_probs, pairs.text.mask)
    audio_round = model.reconstruct_audio(phon_t2, spk, pairs.audio.max_len)
    audio_term = masked_frame_mse(audio_round, pairs.audio)

    phon_t = model.text_phonetic(pairs.text)
    generated = model.reconstruct_audio(phon_t, spk, pairs.audio.max_len)
    phon_a2 = model.audio_phonetic_seq(generated, pairs.audio.mask)
    logps, targets, mask = model.text_teacher_logprobs(phon_a2, pairs.text)
    text_term = sequence_nll(logps, targets, mask)
    return ad.add(audio_term, text_term)


class _SharedEncodings:
    """Memoizes the three encoders per batch object within one step.

    Several terms encode the same paired batch; reusing the encoding
    tensors shares the subgraph, and gradient accumulation takes care of
    the rest.
    """

    def __init__(self, model):
        self._model = model
        self._memo: dict[tuple[str, int], Tensor] = {}

    def __getattr__(self, name):
        return getattr(self._model, name)

    def _cached(self, kind: str, arg) -> Tensor:
        key = (kind, id(arg))
        if key not in self._memo:
            self._memo[key] = getattr(self._model, kind)(arg)
        return self._memo[key]

    def audio_phonetic(self, audio) -> Tensor:
        return self._cached("audio_phonetic", audio)

    def speaker(self, audio) -> Tensor:
        return self._cached("speaker", audio)

    def text_phonetic(self, text) -> Tensor:
        return self._cached("text_phonetic", text)


def total_loss(
    batch: Batch, model, weights: LossWeights, cycle_mode: str = "soft"
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the enabled terms plus a per-term breakdown.

    Disabled terms are not evaluated and contribute exactly 0.  The
    breakdown maps term name to its unweighted value (0.0 when off) and
    includes the weighted ``total``.
    """
    model = _SharedEncodings(model)
    terms: dict[str, Tensor] = {}
    if weights.enabled("audio_recon"):
        terms["audio_recon"] = intra_audio_recon_loss(batch, model)
    if weights.enabled("text_recon"):
        terms["text_recon"] = intra_text_recon_loss(batch, model)
    if weights.enabled("cross_audio"):
        terms["cross_audio"] = cross_audio_recon_loss(batch, model)
    if weights.enabled("cross_text"):
        terms["cross_text"] = cross_text_recon_loss(batch, model)
    if weights.enabled("embedding") and batch.pairs is not None and batch.pairs.size > 0:
        terms["embedding"] = cross_embedding_loss(batch, model, weights.margin)
    elif weights.enabled("embedding"):
        terms["embedding"] = _zero("cross embedding loss", "an empty pair set")
    if weights.enabled("cycle"):
        terms["cycle"] = cycle_loss(batch, model, mode=cycle_mode)

    total: Tensor | None = None
    breakdown: dict[str, float] = {}
    for name in TERM_NAMES:
        if name in terms:
            breakdown[name] = terms[name].item()
            weighted = ad.mul(terms[name], float(getattr(weights, name)))
            total = weighted if total is None else ad.add(total, weighted)
        else:
            breakdown[name] = 0.0
    assert total is not None
    breakdown["total"] = total.item()
    return total, breakdown
