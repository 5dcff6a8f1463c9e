"""Data model: spoken words, text words, lexica, corpora, pair sets.

A corpus couples a list of spoken word segments (feature matrices) with
a pronunciation lexicon and an utterance structure.  This module owns
ingestion from disk, per-utterance feature normalization, selection of
the annotated pair set, duration-budgeted subsampling, and a synthetic
corpus generator used as a ground-truth oracle by the test harness.

Corpora are immutable after construction: every transform returns a new
``Corpus`` and never touches the input.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import read_features, write_features

DEFAULT_FRAME_PERIOD = 0.01  # seconds per frame (10 ms hop)

BOS_SYMBOL = "<bos>"
EOS_SYMBOL = "<eos>"
PAD_SYMBOL = "<pad>"


class CorpusError(Exception):
    """Raised for malformed corpora, manifests, lexica, or selections."""


@dataclass(frozen=True)
class SpokenWord:
    """One spoken word segment: a [T, D] matrix of per-frame features."""

    frames: np.ndarray
    utterance_id: str
    position: int
    word_label: str | None = None

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise CorpusError(
                f"spoken word needs a [T>=1, D] frame matrix, got shape {self.frames.shape}"
            )
        if not np.isfinite(self.frames).all():
            raise CorpusError(
                f"non-finite feature value in utterance {self.utterance_id!r} "
                f"position {self.position}"
            )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class TextWord:
    """A word as a sequence of subword-unit ids."""

    units: tuple[int, ...]
    word_id: int

    def __post_init__(self):
        if len(self.units) < 1:
            raise CorpusError(f"text word {self.word_id} has an empty unit sequence")


class Lexicon:
    """Ordered vocabulary of words over a finite subword inventory.

    Unit ids 0..S-1 are the subword units in ``unit_symbols`` order; the
    reserved begin / end / padding symbols take ids S, S+1, S+2.  Word
    ids follow the order words were supplied in and stay stable.
    """

    def __init__(self, entries: list[tuple[str, list[str]]]):
        if not entries:
            raise CorpusError("empty lexicon")
        symbols = sorted({u for _, units in entries for u in units})
        reserved = {BOS_SYMBOL, EOS_SYMBOL, PAD_SYMBOL}
        if reserved & set(symbols):
            raise CorpusError(f"unit symbols collide with reserved symbols {sorted(reserved)}")
        self.unit_symbols: list[str] = symbols
        self._unit_id = {u: i for i, u in enumerate(symbols)}
        self.words: list[tuple[str, TextWord]] = []
        self._word_id: dict[str, int] = {}
        for surface, units in entries:
            if surface in self._word_id:
                raise CorpusError(f"duplicate word {surface!r} in lexicon")
            wid = len(self.words)
            tw = TextWord(units=tuple(self._unit_id[u] for u in units), word_id=wid)
            self.words.append((surface, tw))
            self._word_id[surface] = wid

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def inventory_size(self) -> int:
        """Number of subword units, excluding reserved symbols."""
        return len(self.unit_symbols)

    @property
    def bos_id(self) -> int:
        return len(self.unit_symbols)

    @property
    def eos_id(self) -> int:
        return len(self.unit_symbols) + 1

    @property
    def pad_id(self) -> int:
        return len(self.unit_symbols) + 2

    def word_id(self, surface: str) -> int:
        try:
            return self._word_id[surface]
        except KeyError:
            raise CorpusError(f"word {surface!r} not in lexicon") from None

    def surface(self, word_id: int) -> str:
        return self.words[word_id][0]

    def units_of(self, word_id: int) -> tuple[int, ...]:
        return self.words[word_id][1].units

    def __contains__(self, surface: str) -> bool:
        return surface in self._word_id

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Lexicon)
            and self.unit_symbols == other.unit_symbols
            and [(s, t.units) for s, t in self.words] == [(s, t.units) for s, t in other.words]
        )


@dataclass(frozen=True)
class Corpus:
    """Immutable bundle of spoken words, lexicon, and utterance structure."""

    spoken: tuple[SpokenWord, ...]
    lexicon: Lexicon
    utterances: dict[str, tuple[int, ...]] = field(default_factory=dict)
    transcripts: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.spoken:
            raise CorpusError("empty corpus")
        dim = self.spoken[0].frames.shape[1]
        for i, w in enumerate(self.spoken):
            if w.frames.shape[1] != dim:
                raise CorpusError(
                    f"feature dimension mismatch at word {i}: expected {dim}, "
                    f"got {w.frames.shape[1]}"
                )
            if w.word_label is not None and w.word_label not in self.lexicon:
                raise CorpusError(
                    f"label {w.word_label!r} of word {i} does not resolve in the lexicon"
                )
        covered = sorted(i for idxs in self.utterances.values() for i in idxs)
        if covered != list(range(len(self.spoken))):
            raise CorpusError("utterance groupings must partition the spoken-word list")

    @property
    def feature_dim(self) -> int:
        return self.spoken[0].frames.shape[1]

    @property
    def n_spoken(self) -> int:
        return len(self.spoken)

    @property
    def annotated_indices(self) -> list[int]:
        return [i for i, w in enumerate(self.spoken) if w.word_label is not None]

    def total_frames(self) -> int:
        return sum(w.n_frames for w in self.spoken)

    def duration(self, frame_period: float = DEFAULT_FRAME_PERIOD) -> float:
        """Total speech duration in hours."""
        return self.total_frames() * frame_period / 3600.0


@dataclass(frozen=True)
class PairSet:
    """The annotated subset used for all cross-domain losses."""

    pairs: tuple[tuple[int, int], ...]  # (spoken index, word_id)

    def __post_init__(self):
        idxs = [i for i, _ in self.pairs]
        if len(set(idxs)) != len(idxs):
            raise CorpusError("duplicate spoken indices in pair set")

    @property
    def n_paired(self) -> int:
        return len(self.pairs)

    def spoken_indices(self) -> list[int]:
        return [i for i, _ in self.pairs]


# -- ingestion ---------------------------------------------------------


def read_lexicon(path: str | Path) -> Lexicon:
    """Parse ``word<TAB>unit unit unit`` lines."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise CorpusError(f"{path}:{lineno}: expected 'word<TAB>units'")
        surface, units = line.split("\t", 1)
        unit_list = units.split()
        if not surface or not unit_list:
            raise CorpusError(f"{path}:{lineno}: empty word or unit sequence")
        entries.append((surface, unit_list))
    return Lexicon(entries)


def write_lexicon(lexicon: Lexicon, path: str | Path) -> None:
    lines = [
        f"{surface}\t{' '.join(lexicon.unit_symbols[u] for u in tw.units)}"
        for surface, tw in lexicon.words
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(
    manifest_path: str | Path,
    lexicon_path: str | Path,
    transcripts_path: str | Path | None = None,
) -> Corpus:
    """Load a corpus from a manifest of feature files plus a lexicon.

    The manifest is line-delimited JSON, one record per spoken word:
    ``{"utterance_id", "position", "features", "label"?}`` with feature
    paths resolved relative to the manifest's directory.  Row order
    defines the corpus ordering.
    """
    manifest_path = Path(manifest_path)
    lexicon = read_lexicon(lexicon_path)
    root = manifest_path.parent

    spoken: list[SpokenWord] = []
    dim: int | None = None
    rows = [ln for ln in manifest_path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not rows:
        raise CorpusError("empty corpus: manifest has no rows")
    for rowno, line in enumerate(rows, 1):
        try:
            rec = json.loads(line)
        except ValueError as exc:
            raise CorpusError(f"manifest row {rowno}: invalid record ({exc})") from exc
        fpath = root / rec["features"]
        if not fpath.exists():
            raise CorpusError(f"manifest row {rowno}: feature file not found: {fpath}")
        frames = read_features(fpath)
        if dim is None:
            dim = frames.shape[1]
        elif frames.shape[1] != dim:
            raise CorpusError(
                f"manifest row {rowno}: feature dimension {frames.shape[1]} "
                f"does not match corpus dimension {dim}"
            )
        if not np.isfinite(frames).all():
            raise CorpusError(f"manifest row {rowno}: non-finite feature value in {fpath}")
        label = rec.get("label")
        if label is not None and label not in lexicon:
            raise CorpusError(f"manifest row {rowno}: label {label!r} not in lexicon")
        spoken.append(
            SpokenWord(
                frames=frames,
                utterance_id=str(rec["utterance_id"]),
                position=int(rec["position"]),
                word_label=label,
            )
        )

    utterances: dict[str, list[int]] = {}
    for i, w in enumerate(spoken):
        utterances.setdefault(w.utterance_id, []).append(i)
    for utt, idxs in utterances.items():
        idxs.sort(key=lambda i: spoken[i].position)

    transcripts: dict[str, tuple[int, ...]] = {}
    if transcripts_path is not None and Path(transcripts_path).exists():
        for lineno, line in enumerate(
            Path(transcripts_path).read_text(encoding="utf-8").splitlines(), 1
        ):
            if not line.strip():
                continue
            utt, _, words = line.partition("\t")
            try:
                transcripts[utt] = tuple(lexicon.word_id(w) for w in words.split())
            except CorpusError as exc:
                raise CorpusError(f"{transcripts_path}:{lineno}: {exc}") from exc

    return Corpus(
        spoken=tuple(spoken),
        lexicon=lexicon,
        utterances={u: tuple(v) for u, v in utterances.items()},
        transcripts=transcripts,
    )


def save_corpus(corpus: Corpus, out_dir: str | Path, text_features: bool = False) -> Path:
    """Write manifest, lexicon, transcripts, and feature files.

    Returns the manifest path.  ``load_corpus`` on the result yields a
    corpus whose features are bit-equal to the saved ones (features are
    float32 on disk).
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    ext = "ftxt" if text_features else "fbin"
    records = []
    for i, w in enumerate(corpus.spoken):
        rel = f"features/{i:06d}.{ext}"
        write_features(out_dir / rel, w.frames, text=text_features)
        rec = {"utterance_id": w.utterance_id, "position": w.position, "features": rel}
        if w.word_label is not None:
            rec["label"] = w.word_label
        records.append(json.dumps(rec))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(records) + "\n", encoding="utf-8")
    write_lexicon(corpus.lexicon, out_dir / "lexicon.txt")
    if corpus.transcripts:
        lines = [
            f"{utt}\t{' '.join(corpus.lexicon.surface(w) for w in words)}"
            for utt, words in corpus.transcripts.items()
        ]
        (out_dir / "transcripts.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_corpus_dir(corpus_dir: str | Path) -> Corpus:
    """Load a corpus laid out by :func:`save_corpus`."""
    corpus_dir = Path(corpus_dir)
    return load_corpus(
        corpus_dir / "manifest.jsonl",
        corpus_dir / "lexicon.txt",
        corpus_dir / "transcripts.txt",
    )


# -- normalization -----------------------------------------------------


def apply_cmvn(corpus: Corpus) -> Corpus:
    """Per-utterance, per-dimension standardization of all frames.

    After the transform each utterance has frame mean 0 and population
    variance 1 in every dimension; constant dimensions become exactly 0
    and near-zero-variance dimensions are mean-centered only.  An
    utterance with a single total frame is mean-centered with a warning
    (its variance is undefined).
    """
    new_frames: dict[int, np.ndarray] = {}
    for utt, idxs in corpus.utterances.items():
        stacked = np.concatenate([corpus.spoken[i].frames for i in idxs], axis=0)
        n = stacked.shape[0]
        mean = stacked.mean(axis=0)
        if n < 2:
            warnings.warn(
                f"utterance {utt!r} has a single frame; variance undefined, centering only",
                stacklevel=2,
            )
            scale = np.ones_like(mean)
        else:
            std = stacked.std(axis=0)  # population std
            scale = np.where(std > 1e-8, std, 1.0)
        constant = stacked.max(axis=0) == stacked.min(axis=0)
        for i in idxs:
            out = (corpus.spoken[i].frames - mean) / scale
            out[:, constant] = 0.0
            new_frames[i] = out

    spoken = tuple(
        dataclasses.replace(w, frames=new_frames[i]) for i, w in enumerate(corpus.spoken)
    )
    return dataclasses.replace(corpus, spoken=spoken)


# -- selection ---------------------------------------------------------


def build_pair_set(corpus: Corpus, n_paired: int, seed: int) -> PairSet:
    """Select which annotated spoken words form the supervised pair set.

    Sampling is nested: a fixed seeded permutation of the annotated
    tokens is computed once and the first ``n_paired`` entries taken, so
    the pair set for a smaller ``n_paired`` at the same seed is always a
    subset of a larger one.
    """
    annotated = corpus.annotated_indices
    if n_paired > len(annotated):
        raise CorpusError(
            f"requested {n_paired} paired words but corpus has only "
            f"{len(annotated)} annotated spoken words"
        )
    if n_paired < 1:
        raise CorpusError("n_paired must be >= 1")
    perm = np.random.default_rng(seed).permutation(len(annotated))
    chosen = [annotated[j] for j in perm[:n_paired]]
    pairs = tuple(
        (i, corpus.lexicon.word_id(corpus.spoken[i].word_label)) for i in chosen
    )
    return PairSet(pairs=pairs)


def subsample_speech(
    corpus: Corpus,
    hours: float,
    frame_period: float = DEFAULT_FRAME_PERIOD,
    seed: int = 0,
) -> Corpus:
    """Retain whole utterances until the duration budget is met.

    Utterances are visited in a seeded shuffled order and kept whenever
    they still fit the budget, so the retained duration lands within one
    utterance length of the target.
    """
    if hours <= 0:
        raise CorpusError(f"hours must be positive, got {hours}")
    total = corpus.duration(frame_period)
    if hours > total * (1 + 1e-9):
        raise CorpusError(
            f"requested {hours} hr but the corpus only holds {total:.4f} hr"
        )
    budget_frames = int(round(hours * 3600.0 / frame_period))
    utt_ids = list(corpus.utterances.keys())
    order = np.random.default_rng(seed).permutation(len(utt_ids))

    kept: set[str] = set()
    used = 0
    for j in order:
        utt = utt_ids[j]
        frames = sum(corpus.spoken[i].n_frames for i in corpus.utterances[utt])
        if used + frames <= budget_frames:
            kept.add(utt)
            used += frames

    if not kept:
        raise CorpusError(
            f"budget of {hours} hr is below the shortest utterance; nothing retained"
        )
    keep_idx = [i for i, w in enumerate(corpus.spoken) if w.utterance_id in kept]
    remap = {old: new for new, old in enumerate(keep_idx)}
    spoken = tuple(corpus.spoken[i] for i in keep_idx)
    utterances = {
        utt: tuple(remap[i] for i in idxs)
        for utt, idxs in corpus.utterances.items()
        if utt in kept
    }
    transcripts = {u: w for u, w in corpus.transcripts.items() if u in kept}
    return Corpus(
        spoken=spoken, lexicon=corpus.lexicon, utterances=utterances, transcripts=transcripts
    )


# -- synthetic corpora ---------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for the synthetic ground-truth corpus.

    Each subword unit owns a fixed random prototype vector.  A spoken
    word is its units' prototypes, each repeated for a sampled duration,
    plus a per-speaker additive offset and i.i.d. Gaussian noise.  Words
    are grouped into single-speaker utterances.
    """

    n_words: int = 50
    n_units: int = 8
    units_per_word: tuple[int, int] = (3, 6)
    n_speakers: int = 3
    tokens_per_word: int = 20
    frames_per_unit: tuple[int, int] = (2, 5)
    feature_dim: int = 16
    noise_std: float = 0.3
    speaker_offset_std: float = 0.5
    words_per_utterance: tuple[int, int] = (4, 8)
    unit_sequences: tuple[tuple[int, ...], ...] | None = None
    test_speakers: int = 2
    test_tokens_per_word: int = 4

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        raw = json.loads(text)
        for key in ("units_per_word", "frames_per_unit", "words_per_utterance"):
            if key in raw:
                raw[key] = tuple(raw[key])
        if raw.get("unit_sequences") is not None:
            raw["unit_sequences"] = tuple(tuple(s) for s in raw["unit_sequences"])
        return cls(**raw)


def _synth_lexicon(spec: SynthSpec, rng: np.random.Generator) -> Lexicon:
    if spec.unit_sequences is not None:
        seqs = [tuple(int(u) for u in s) for s in spec.unit_sequences]
        if len(seqs) != spec.n_words:
            raise CorpusError(
                f"spec lists {len(seqs)} unit sequences for {spec.n_words} words"
            )
        if len(set(seqs)) != len(seqs):
            raise CorpusError("duplicate unit sequences: words must be phonetically distinct")
        for s in seqs:
            if any(u >= spec.n_units or u < 0 for u in s):
                raise CorpusError(f"unit id out of range in sequence {s}")
    else:
        seqs = []
        seen = set()
        lo, hi = spec.units_per_word
        for _ in range(spec.n_words):
            for _attempt in range(1000):
                length = int(rng.integers(lo, hi + 1))
                cand = tuple(int(u) for u in rng.integers(0, spec.n_units, size=length))
                if cand not in seen:
                    seen.add(cand)
                    seqs.append(cand)
                    break
            else:
                raise CorpusError(
                    "could not sample distinct unit sequences; enlarge the inventory"
                )
    pad = len(str(spec.n_words - 1))
    entries = [
        (f"w{k:0{pad}d}", [f"u{u}" for u in seq]) for k, seq in enumerate(seqs)
    ]
    return Lexicon(entries)


def _synth_tokens(
    spec: SynthSpec,
    lexicon: Lexicon,
    prototypes: np.ndarray,
    offsets: np.ndarray,
    tokens_per_word: int,
    speaker_names: list[str],
    rng: np.random.Generator,
) -> Corpus:
    n_speakers = len(speaker_names)
    # Round-robin speakers over tokens so every word is heard from every
    # speaker when counts allow.
    assignments: list[tuple[int, int]] = []  # (word_id, speaker)
    for k in range(lexicon.n_words):
        for t in range(tokens_per_word):
            assignments.append((k, (k + t) % n_speakers))

    dmin, dmax = spec.frames_per_unit
    by_speaker: dict[int, list[tuple[int, np.ndarray]]] = {s: [] for s in range(n_speakers)}
    for word_id, speaker in assignments:
        units = lexicon.units_of(word_id)
        durations = rng.integers(dmin, dmax + 1, size=len(units))
        frames = np.repeat(prototypes[list(units)], durations, axis=0)
        frames = frames + offsets[speaker]
        if spec.noise_std > 0:
            frames = frames + rng.normal(0.0, spec.noise_std, size=frames.shape)
        by_speaker[speaker].append((word_id, frames))

    # Shuffle each speaker's tokens and chunk them into utterances.
    spoken: list[SpokenWord] = []
    utterances: dict[str, tuple[int, ...]] = {}
    transcripts: dict[str, tuple[int, ...]] = {}
    wlo, whi = spec.words_per_utterance
    for speaker in range(n_speakers):
        tokens = by_speaker[speaker]
        order = rng.permutation(len(tokens))
        cursor = 0
        utt_no = 0
        while cursor < len(tokens):
            size = int(rng.integers(wlo, whi + 1))
            chunk = [tokens[j] for j in order[cursor : cursor + size]]
            cursor += size
            utt_id = f"{speaker_names[speaker]}_utt{utt_no:04d}"
            utt_no += 1
            idxs = []
            words = []
            for pos, (word_id, frames) in enumerate(chunk):
                idxs.append(len(spoken))
                words.append(word_id)
                spoken.append(
                    SpokenWord(
                        frames=frames,
                        utterance_id=utt_id,
                        position=pos,
                        word_label=lexicon.surface(word_id),
                    )
                )
            utterances[utt_id] = tuple(idxs)
            transcripts[utt_id] = tuple(words)
    return Corpus(
        spoken=tuple(spoken), lexicon=lexicon, utterances=utterances, transcripts=transcripts
    )


def generate_synthetic_corpus(spec: SynthSpec, seed: int) -> Corpus:
    """Generate the training-side synthetic corpus (fully annotated)."""
    return _generate_synthetic(spec, seed, make_test=False)[0]


def generate_synthetic_split(spec: SynthSpec, seed: int) -> tuple[Corpus, Corpus]:
    """Generate train and test corpora sharing prototypes and lexicon.

    The test corpus uses fresh speakers (disjoint additive offsets) so
    held-out evaluation measures generalization across speakers.  The
    train corpus is identical to ``generate_synthetic_corpus(spec, seed)``.
    """
    train, test = _generate_synthetic(spec, seed, make_test=True)
    assert test is not None
    return train, test


def _generate_synthetic(
    spec: SynthSpec, seed: int, make_test: bool
) -> tuple[Corpus, Corpus | None]:
    ss = np.random.SeedSequence(seed)
    rng_lex, rng_proto, rng_spk, rng_train, rng_test = (
        np.random.default_rng(s) for s in ss.spawn(5)
    )
    lexicon = _synth_lexicon(spec, rng_lex)
    prototypes = rng_proto.normal(0.0, 1.0, size=(spec.n_units, spec.feature_dim))
    all_offsets = rng_spk.normal(
        0.0,
        spec.speaker_offset_std,
        size=(spec.n_speakers + spec.test_speakers, spec.feature_dim),
    )
    train = _synth_tokens(
        spec,
        lexicon,
        prototypes,
        all_offsets[: spec.n_speakers],
        spec.tokens_per_word,
        [f"spk{s}" for s in range(spec.n_speakers)],
        rng_train,
    )
    if not make_test:
        return train, None
    if spec.test_speakers < 1:
        raise CorpusError("a train/test split needs test_speakers >= 1")
    test = _synth_tokens(
        spec,
        lexicon,
        prototypes,
        all_offsets[spec.n_speakers :],
        spec.test_tokens_per_word,
        [f"tspk{s}" for s in range(spec.test_speakers)],
        rng_test,
    )
    return train, test


def unit_prototypes(spec: SynthSpec, seed: int) -> np.ndarray:
    """The prototype vectors a given (spec, seed) generation used."""
    ss = np.random.SeedSequence(seed)
    _, proto_seed, *_ = ss.spawn(5)
    return np.random.default_rng(proto_seed).normal(
        0.0, 1.0, size=(spec.n_units, spec.feature_dim)
    )
