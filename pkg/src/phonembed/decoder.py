"""Closed-vocabulary inference: text index, posteriors, LM, beam search.

Recognition embeds every distinct training word once (the text index),
embeds each test spoken word, and turns negative squared distances into
a posterior over the vocabulary with a softmax.  Utterances are decoded
one word per given segment by beam search over

    log P(word | segment) + beta * log P_LM(word | previous two words),

with a trigram language model trained on the training transcripts only.

Both embedding routes plug in through one interface: the joint model
compares raw phonetic vectors, while the separate-learning route
standardizes, projects, and maps audio embeddings into the text space
first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import AlignmentBundle
from .corpus import Corpus, Lexicon, SpokenWord
from .nets import WordEmbedModel, encode_audio_phonetic, encode_corpus_audio, encode_lexicon

BOS_ID = -1  # sentence-start marker in LM contexts


# -- embedding sources ---------------------------------------------------


class JointEmbeddingSource:
    """Raw phonetic vectors from a jointly trained model."""

    def __init__(self, model: WordEmbedModel):
        self.model = model

    def text_matrix(self, lexicon: Lexicon) -> np.ndarray:
        return encode_lexicon(self.model, lexicon)

    def audio_vector(self, x: SpokenWord | np.ndarray) -> np.ndarray:
        return encode_audio_phonetic(x, self.model)

    def audio_matrix(self, corpus: Corpus) -> np.ndarray:
        return encode_corpus_audio(self.model, corpus)


class AlignedEmbeddingSource:
    """Separately trained vectors bridged into the text space.

    Audio: encode, standardize, project, then apply the audio-to-text
    map.  Text: encode, standardize, project.  Comparisons happen in the
    projected text space.
    """

    def __init__(self, model: WordEmbedModel, bundle: AlignmentBundle):
        self.model = model
        self.bundle = bundle

    def text_matrix(self, lexicon: Lexicon) -> np.ndarray:
        return self.bundle.text_space.project(encode_lexicon(self.model, lexicon))

    def audio_vector(self, x: SpokenWord | np.ndarray) -> np.ndarray:
        projected = self.bundle.audio_space.project(
            encode_audio_phonetic(x, self.model)[None, :]
        )
        return (projected @ self.bundle.maps.audio_to_text.T)[0]

    def audio_matrix(self, corpus: Corpus) -> np.ndarray:
        projected = self.bundle.audio_space.project(encode_corpus_audio(self.model, corpus))
        return projected @ self.bundle.maps.audio_to_text.T


# -- text index and posteriors ---------------------------------------------


@dataclass(frozen=True)
class TextIndex:
    """One embedding row per distinct lexicon word, in word-id order."""

    vectors: np.ndarray

    @property
    def n_words(self) -> int:
        return self.vectors.shape[0]


def build_text_index(lexicon: Lexicon, source) -> TextIndex:
    """Embed every lexicon word; deterministic given the source's params."""
    matrix = source.text_matrix(lexicon)
    if matrix.shape[0] != lexicon.n_words:
        raise ValueError(
            f"index built {matrix.shape[0]} rows for {lexicon.n_words} words"
        )
    return TextIndex(vectors=matrix)


def posterior_from_embedding(embedding: np.ndarray, index: TextIndex) -> np.ndarray:
    """Softmax over negative squared distances to every index row."""
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape != (index.vectors.shape[1],):
        raise ValueError(
            f"embedding has shape {e.shape}, index rows have {index.vectors.shape[1]} dims"
        )
    neg_sq = -((index.vectors - e) ** 2).sum(axis=1)
    neg_sq -= neg_sq.max()
    p = np.exp(neg_sq)
    return p / p.sum()


def acoustic_posterior(x: SpokenWord | np.ndarray, index: TextIndex, source) -> np.ndarray:
    """Posterior over the vocabulary for one spoken word segment."""
    return posterior_from_embedding(source.audio_vector(x), index)


# -- trigram language model --------------------------------------------------


@dataclass(frozen=True)
class SmoothingConfig:
    """Fixed-factor interpolated backoff with an add-one unigram floor."""

    backoff: float = 0.4

    def __post_init__(self):
        if not 0.0 < self.backoff < 1.0:
            raise ValueError("backoff factor must be in (0, 1)")


class TrigramLM:
    """Counts for orders 1-3 over word ids, with begin/end markers.

    Outcome space is the vocabulary plus the end marker (id ``n_words``),
    so every conditional distribution sums to one exactly: each order
    interpolates its maximum-likelihood estimate with the next-lower
    order at a fixed factor, bottoming out in an add-one unigram.
    Instances are immutable after training.
    """

    def __init__(self, n_words: int, smoothing: SmoothingConfig = SmoothingConfig()):
        self.n_words = n_words
        self.smoothing = smoothing
        self.eos = n_words
        self._uni = np.zeros(n_words + 1)
        self._bi: dict[int, np.ndarray] = {}
        self._tri: dict[tuple[int, int], np.ndarray] = {}
        self._dist_cache: dict[tuple[int, int], np.ndarray] = {}

    # -- training ---------------------------------------------------------
    def _count(self, sentence: tuple[int, ...]) -> None:
        seq = [BOS_ID, BOS_ID, *sentence, self.eos]
        for t in range(2, len(seq)):
            w = seq[t]
            self._uni[w] += 1
            self._bi.setdefault(seq[t - 1], np.zeros(self.n_words + 1))[w] += 1
            self._tri.setdefault((seq[t - 2], seq[t - 1]), np.zeros(self.n_words + 1))[w] += 1

    # -- scoring ----------------------------------------------------------
    def _unigram_dist(self) -> np.ndarray:
        return (self._uni + 1.0) / (self._uni.sum() + self.n_words + 1)

    def distribution(self, context: tuple[int, ...]) -> np.ndarray:
        """P(. | last two words) over vocabulary + end marker; sums to 1."""
        a, b = self._normalize_context(context)
        key = (a, b)
        cached = self._dist_cache.get(key)
        if cached is not None:
            return cached
        g = self.smoothing.backoff
        dist = self._unigram_dist()
        bi = self._bi.get(b)
        if bi is not None and bi.sum() > 0:
            dist = (1.0 - g) * (bi / bi.sum()) + g * dist
        tri = self._tri.get((a, b))
        if tri is not None and tri.sum() > 0:
            dist = (1.0 - g) * (tri / tri.sum()) + g * dist
        self._dist_cache[key] = dist
        return dist

    def log_distribution(self, context: tuple[int, ...]) -> np.ndarray:
        return np.log(self.distribution(context))

    def prob(self, word: int, context: tuple[int, ...]) -> float:
        return float(self.distribution(context)[word])

    def _normalize_context(self, context: tuple[int, ...]) -> tuple[int, int]:
        ctx = (BOS_ID, BOS_ID, *context)[-2:]
        return int(ctx[0]), int(ctx[1])

    def perplexity(self, transcripts) -> float:
        """exp of the mean negative log-probability over all events
        (every word plus each sentence's end marker)."""
        total, events = 0.0, 0
        for sentence in _sentences(transcripts):
            ctx: tuple[int, ...] = ()
            for w in (*sentence, self.eos):
                total -= np.log(self.prob(int(w), ctx))
                ctx = (*ctx, int(w))[-2:]
                events += 1
        return float(np.exp(total / events))

    # -- serialization ------------------------------------------------------
    LM_KIND = "phonembed-trigram"
    LM_VERSION = 1

    def save(self, path) -> None:
        payload = {
            "kind": self.LM_KIND,
            "version": self.LM_VERSION,
            "n_words": self.n_words,
            "backoff": self.smoothing.backoff,
            "unigram": _sparse(self._uni),
            "bigram": {str(k): _sparse(v) for k, v in sorted(self._bi.items())},
            "trigram": {
                f"{a} {b}": _sparse(v) for (a, b), v in sorted(self._tri.items())
            },
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TrigramLM":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("kind") != cls.LM_KIND or payload.get("version") != cls.LM_VERSION:
            raise ValueError(f"{path}: not a version-{cls.LM_VERSION} language model file")
        lm = cls(int(payload["n_words"]), SmoothingConfig(backoff=float(payload["backoff"])))
        _unsparse(lm._uni, payload["unigram"])
        for key, counts in payload["bigram"].items():
            arr = np.zeros(lm.n_words + 1)
            _unsparse(arr, counts)
            lm._bi[int(key)] = arr
        for key, counts in payload["trigram"].items():
            a, b = key.split()
            arr = np.zeros(lm.n_words + 1)
            _unsparse(arr, counts)
            lm._tri[(int(a), int(b))] = arr
        return lm


def _sparse(arr: np.ndarray) -> dict[str, float]:
    nz = np.nonzero(arr)[0]
    return {str(int(i)): float(arr[i]) for i in nz}


def _unsparse(arr: np.ndarray, entries: dict[str, float]) -> None:
    for k, v in entries.items():
        arr[int(k)] = v


def _sentences(transcripts) -> list[tuple[int, ...]]:
    if isinstance(transcripts, dict):
        return [tuple(v) for _, v in sorted(transcripts.items())]
    return [tuple(v) for v in transcripts]


def train_trigram_lm(
    transcripts, n_words: int, smoothing: SmoothingConfig = SmoothingConfig()
) -> TrigramLM:
    """Count n-grams over the given word-id sequences.

    ``transcripts`` is a mapping utterance -> word ids or an iterable of
    sequences; every id must fall inside the vocabulary.
    """
    sentences = _sentences(transcripts)
    if not sentences:
        raise ValueError("cannot train a language model on zero transcripts")
    lm = TrigramLM(n_words, smoothing)
    for sentence in sentences:
        bad = [w for w in sentence if not 0 <= int(w) < n_words]
        if bad:
            raise ValueError(f"transcript word id {bad[0]} outside vocabulary of {n_words}")
        lm._count(sentence)
    return lm


# -- beam search ---------------------------------------------------------


@dataclass(frozen=True)
class BeamHypothesis:
    """A partial transcription; ``score`` is exactly the sum of its
    per-segment acoustic log-posteriors plus beta-weighted LM log-probs."""

    words: tuple[int, ...]
    score: float

    def context(self) -> tuple[int, ...]:
        return self.words[-2:]


@dataclass(frozen=True)
class BeamResult:
    words: tuple[int, ...]
    score: float
    per_word: tuple[float, ...]  # each segment's contribution to the score


def beam_search(
    log_posteriors: list[np.ndarray],
    lm: TrigramLM | None,
    beta: float,
    beam_size: int,
) -> BeamResult:
    """One word per segment, keeping the ``beam_size`` best prefixes.

    With ``beam_size >= N^segments`` nothing is ever pruned and the
    result equals exhaustive search.  Ties break toward the smaller word
    id sequence, deterministically.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if not log_posteriors:
        raise ValueError("cannot decode an empty utterance")
    n_words = log_posteriors[0].shape[0]

    beams = [BeamHypothesis(words=(), score=0.0)]
    contributions: dict[tuple[int, ...], tuple[float, ...]] = {(): ()}
    for seg_logp in log_posteriors:
        scored: list[tuple[float, tuple[int, ...], float]] = []
        for hyp in beams:
            step = seg_logp.copy()
            if lm is not None and beta > 0:
                step = step + beta * lm.log_distribution(hyp.context())[:n_words]
            for w in range(n_words):
                scored.append((hyp.score + step[w], (*hyp.words, w), float(step[w])))
        scored.sort(key=lambda item: (-item[0], item[1]))
        kept = scored[:beam_size]
        new_contrib = {}
        beams = []
        for score, words, step_score in kept:
            beams.append(BeamHypothesis(words=words, score=score))
            new_contrib[words] = (*contributions[words[:-1]], step_score)
        contributions = new_contrib
    best = beams[0]
    return BeamResult(words=best.words, score=best.score, per_word=contributions[best.words])


def beam_search_decode(
    utterance: list[SpokenWord | np.ndarray],
    index: TextIndex,
    source,
    lm: TrigramLM | None = None,
    beta: float = 0.01,
    beam_size: int = 10,
) -> BeamResult:
    """Decode one utterance given its word segments (boundaries known)."""
    log_posts = [np.log(acoustic_posterior(seg, index, source)) for seg in utterance]
    return beam_search(log_posts, lm, beta, beam_size)


def decode_corpus(
    test_corpus: Corpus,
    source,
    index: TextIndex,
    lm: TrigramLM | None = None,
    beta: float = 0.01,
    beam_size: int = 10,
) -> dict[str, BeamResult]:
    """Decode every utterance; embeddings are computed corpus-wide first."""
    matrix = source.audio_matrix(test_corpus)
    results: dict[str, BeamResult] = {}
    for utt in sorted(test_corpus.utterances):
        idxs = test_corpus.utterances[utt]
        log_posts = [
            np.log(posterior_from_embedding(matrix[i], index)) for i in idxs
        ]
        results[utt] = beam_search(log_posts, lm, beta, beam_size)
    return results


def write_decode_records(results: dict[str, BeamResult], lexicon: Lexicon, path) -> None:
    """Line-delimited decode output: utterance, words, scores."""
    with open(path, "w", encoding="utf-8") as f:
        for utt in sorted(results):
            res = results[utt]
            f.write(
                json.dumps(
                    {
                        "utterance_id": utt,
                        "words": [lexicon.surface(w) for w in res.words],
                        "word_ids": list(res.words),
                        "score": res.score,
                        "per_word": list(res.per_word),
                    }
                )
                + "\n"
            )


def read_decode_records(path) -> dict[str, list[str]]:
    """Utterance -> hypothesized surface words, from a decode record file."""
    out: dict[str, list[str]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["utterance_id"]] = list(rec["words"])
    return out
