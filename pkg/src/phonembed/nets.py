"""Encoders, decoders, and their trainable parameters.

Three encoders map inputs to fixed-dimension vectors: a phonetic encoder
and a speaker encoder for spoken words (bidirectional recurrent stacks
over frames), and a phonetic encoder for text words (the same stack over
learned subword embeddings).  Two decoders invert them: an audio decoder
that regenerates a frame matrix autoregressively from a (phonetic,
speaker) pair, and a symbol decoder that emits per-step distributions
over the subword inventory plus an end marker.

Conventions:

* phonetic vectors from audio and text share one space of dimension
  ``phonetic_dim``;
* encoders pool by concatenating the final hidden states of both
  directions of the top layer, followed by one linear projection;
* decoders receive their conditioning vector twice: through a linear map
  that initializes each layer's state, and appended to every step input;
* the subword embedding table is shared by the text encoder and the
  symbol decoder, with reserved rows for begin / end / padding symbols
  (ids S, S+1, S+2 for an inventory of size S);
* weights start uniform in [-0.08, 0.08], biases at zero;
* everything is float64 and deterministic given the seed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .corpus import SpokenWord, TextWord
from .fileio import read_container, write_container

INIT_SCALE = 0.08


class ConfigMismatchError(Exception):
    """A checkpoint or input disagrees with the expected configuration."""


@dataclass(frozen=True)
class NetConfig:
    """Sizes of every component; audio and text phonetic dims are one."""

    feature_dim: int
    inventory_size: int
    encoder_hidden: int = 256
    audio_decoder_hidden: int = 512
    text_decoder_hidden: int = 256
    layers: int = 1
    phonetic_dim: int = 256
    speaker_dim: int = 256
    subword_embed_dim: int = 64

    def __post_init__(self):
        for name in (
            "feature_dim",
            "inventory_size",
            "encoder_hidden",
            "audio_decoder_hidden",
            "text_decoder_hidden",
            "phonetic_dim",
            "speaker_dim",
            "subword_embed_dim",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.layers not in (1, 2, 3):
            raise ValueError(f"layers must be 1, 2, or 3, got {self.layers}")

    @property
    def bos_id(self) -> int:
        return self.inventory_size

    @property
    def eos_id(self) -> int:
        return self.inventory_size + 1

    @property
    def pad_id(self) -> int:
        return self.inventory_size + 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**{k: int(v) for k, v in d.items()})


# -- batched inputs ----------------------------------------------------


@dataclass(frozen=True)
class AudioBatch:
    """Right-padded frame matrices: [B, T, D] plus a {0,1} frame mask."""

    frames: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "AudioBatch":
        if not arrays:
            raise ValueError("empty audio batch")
        lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
        dim = arrays[0].shape[1]
        t_max = int(lengths.max())
        frames = np.zeros((len(arrays), t_max, dim))
        mask = np.zeros((len(arrays), t_max))
        for b, a in enumerate(arrays):
            frames[b, : a.shape[0]] = a
            mask[b, : a.shape[0]] = 1.0
        return cls(frames=frames, mask=mask, lengths=lengths)

    @classmethod
    def from_words(cls, words: list[SpokenWord]) -> "AudioBatch":
        return cls.from_arrays([w.frames for w in words])

    @property
    def size(self) -> int:
        return self.frames.shape[0]

    @property
    def max_len(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class TextBatch:
    """Right-padded unit-id sequences: [B, L] plus a {0,1} step mask."""

    units: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_units(cls, seqs: list[tuple[int, ...]], pad_id: int) -> "TextBatch":
        if not seqs:
            raise ValueError("empty text batch")
        if any(len(s) < 1 for s in seqs):
            raise ValueError("text words must have at least one unit")
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        l_max = int(lengths.max())
        units = np.full((len(seqs), l_max), pad_id, dtype=np.int64)
        mask = np.zeros((len(seqs), l_max))
        for b, s in enumerate(seqs):
            units[b, : len(s)] = s
            mask[b, : len(s)] = 1.0
        return cls(units=units, mask=mask, lengths=lengths)

    @property
    def size(self) -> int:
        return self.units.shape[0]

    @property
    def max_len(self) -> int:
        return self.units.shape[1]


# -- building blocks ---------------------------------------------------


def _uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, name: str, rng: np.random.Generator):
        self.w = Parameter(_uniform(rng, (in_dim, out_dim)), f"{name}.w")
        self.b = Parameter(np.zeros(out_dim), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


class GRULayer:
    """One direction of one recurrent layer."""

    def __init__(self, in_dim: int, hidden: int, name: str, rng: np.random.Generator):
        self.hidden = hidden
        self.w_in = Parameter(_uniform(rng, (in_dim, 3 * hidden)), f"{name}.w_in")
        self.b_in = Parameter(np.zeros(3 * hidden), f"{name}.b_in")
        self.w_rec = Parameter(_uniform(rng, (hidden, 3 * hidden)), f"{name}.w_rec")
        self.b_rec = Parameter(np.zeros(3 * hidden), f"{name}.b_rec")

    def step(self, x_t: Tensor, h: Tensor) -> Tensor:
        xp = ad.add(ad.matmul(x_t, self.w_in), self.b_in)
        hp = ad.add(ad.matmul(h, self.w_rec), self.b_rec)
        return ad.gru_cell(xp, hp, h)

    def run(
        self,
        seq: list[Tensor],
        mask_cols: list[np.ndarray] | None,
        reverse: bool = False,
    ) -> tuple[list[Tensor], Tensor]:
        """Returns per-step states (in input time order) and the final state.

        With a mask, padded steps keep the previous state, so the final
        state is the state at each item's last real step.
        """
        batch = seq[0].data.shape[0]
        h = Tensor(np.zeros((batch, self.hidden)))
        order = range(len(seq) - 1, -1, -1) if reverse else range(len(seq))
        states: list[Tensor | None] = [None] * len(seq)
        for t in order:
            h_new = self.step(seq[t], h)
            if mask_cols is not None:
                m = mask_cols[t]
                h = ad.add(ad.mul(h_new, m), ad.mul(h, 1.0 - m))
            else:
                h = h_new
            states[t] = h
        return states, h  # type: ignore[return-value]

    def parameters(self) -> list[Parameter]:
        return [self.w_in, self.b_in, self.w_rec, self.b_rec]


class BiGRUEncoder:
    """Stacked bidirectional recurrence -> final-state concat -> linear."""

    def __init__(self, in_dim: int, hidden: int, layers: int, out_dim: int, name: str, rng):
        self.stacks: list[tuple[GRULayer, GRULayer]] = []
        for layer in range(layers):
            d = in_dim if layer == 0 else 2 * hidden
            self.stacks.append(
                (
                    GRULayer(d, hidden, f"{name}.l{layer}.fwd", rng),
                    GRULayer(d, hidden, f"{name}.l{layer}.bwd", rng),
                )
            )
        self.out = Linear(2 * hidden, out_dim, f"{name}.out", rng)

    def encode(self, seq: list[Tensor], mask: np.ndarray | None) -> Tensor:
        mask_cols = None
        if mask is not None and not np.all(mask == 1.0):
            mask_cols = [np.ascontiguousarray(mask[:, t : t + 1]) for t in range(len(seq))]
        final_f = final_b = None
        for fwd, bwd in self.stacks:
            states_f, final_f = fwd.run(seq, mask_cols, reverse=False)
            states_b, final_b = bwd.run(seq, mask_cols, reverse=True)
            seq = [ad.concat([f, b], axis=1) for f, b in zip(states_f, states_b)]
        return self.out(ad.concat([final_f, final_b], axis=1))

    def parameters(self) -> list[Parameter]:
        ps: list[Parameter] = []
        for fwd, bwd in self.stacks:
            ps += fwd.parameters() + bwd.parameters()
        return ps + self.out.parameters()


class AudioDecoder:
    """Autoregressive frame generator conditioned on (phonetic, speaker)."""

    def __init__(self, cond_dim: int, hidden: int, layers: int, out_dim: int, name: str, rng):
        self.out_dim = out_dim
        self.layers = [
            GRULayer(out_dim + cond_dim if k == 0 else hidden, hidden, f"{name}.l{k}", rng)
            for k in range(layers)
        ]
        self.init = [
            Linear(cond_dim, hidden, f"{name}.init{k}", rng) for k in range(layers)
        ]
        self.out = Linear(hidden, out_dim, f"{name}.out", rng)

    def generate(self, cond: Tensor, n_steps: int) -> list[Tensor]:
        if n_steps < 1:
            raise ValueError("audio decoder needs at least one output frame")
        hs = [init(cond) for init in self.init]
        prev = Tensor(np.zeros((cond.data.shape[0], self.out_dim)))
        frames: list[Tensor] = []
        for _ in range(n_steps):
            x = ad.concat([prev, cond], axis=1)
            for k, layer in enumerate(self.layers):
                hs[k] = layer.step(x, hs[k])
                x = hs[k]
            prev = self.out(x)
            frames.append(prev)
        return frames

    def parameters(self) -> list[Parameter]:
        ps: list[Parameter] = []
        for layer in self.layers:
            ps += layer.parameters()
        for init in self.init:
            ps += init.parameters()
        return ps + self.out.parameters()


class TextDecoder:
    """Symbol decoder emitting distributions over inventory + end marker."""

    def __init__(self, cfg: "NetConfig", embed: Parameter, name: str, rng):
        cond, hidden = cfg.phonetic_dim, cfg.text_decoder_hidden
        self.cfg = cfg
        self.embed = embed
        self.n_out = cfg.inventory_size + 1  # units + end marker
        self.layers = [
            GRULayer(
                cfg.subword_embed_dim + cond if k == 0 else hidden,
                hidden,
                f"{name}.l{k}",
                rng,
            )
            for k in range(cfg.layers)
        ]
        self.init = [Linear(cond, hidden, f"{name}.init{k}", rng) for k in range(cfg.layers)]
        self.out = Linear(hidden, self.n_out, f"{name}.out", rng)
        # Output column j embeds as table row j for units, and the end
        # marker column as the reserved end row.
        self._soft_rows = np.concatenate(
            [np.arange(cfg.inventory_size), [cfg.eos_id]]
        ).astype(np.int64)

    def _step(self, emb: Tensor, cond: Tensor, hs: list[Tensor]) -> tuple[Tensor, list[Tensor]]:
        x = ad.concat([emb, cond], axis=1)
        new_hs = []
        for k, layer in enumerate(self.layers):
            h = layer.step(x, hs[k])
            new_hs.append(h)
            x = h
        return self.out(x), new_hs

    def teacher_logprobs(
        self, cond: Tensor, text: TextBatch
    ) -> tuple[list[Tensor], np.ndarray, np.ndarray]:
        """Teacher-forced per-step log distributions.

        Returns (log-prob tensors per step, target ids [B, L+1], step
        mask [B, L+1]); step t targets the t-th unit, and each item's
        final real step targets the end marker.
        """
        cfg = self.cfg
        batch, l_max = text.units.shape
        n_steps = l_max + 1
        inputs = np.full((batch, n_steps), cfg.pad_id, dtype=np.int64)
        inputs[:, 0] = cfg.bos_id
        inputs[:, 1:] = np.where(text.mask > 0, text.units, cfg.pad_id)
        targets = np.full((batch, n_steps), self.n_out - 1, dtype=np.int64)
        targets[:, :l_max] = np.where(text.mask > 0, text.units, self.n_out - 1)
        step_mask = np.zeros((batch, n_steps))
        for b in range(batch):
            step_mask[b, : text.lengths[b] + 1] = 1.0

        hs = [init(cond) for init in self.init]
        logps: list[Tensor] = []
        for t in range(n_steps):
            emb = ad.embedding(self.embed, inputs[:, t])
            logits, hs = self._step(emb, cond, hs)
            logps.append(ad.log_softmax(logits))
        return logps, targets, step_mask

    def soft_decode(self, cond: Tensor, n_steps: int) -> list[Tensor]:
        """Autoregressive decode feeding back probability-weighted embeddings.

        Smooth everywhere, which keeps composed objectives amenable to
        finite-difference checking.
        """
        soft_table = ad.embedding(self.embed, self._soft_rows)
        batch = cond.data.shape[0]
        hs = [init(cond) for init in self.init]
        emb = ad.embedding(self.embed, np.full(batch, self.cfg.bos_id, dtype=np.int64))
        probs: list[Tensor] = []
        for _ in range(n_steps):
            logits, hs = self._step(emb, cond, hs)
            p = ad.softmax(logits)
            probs.append(p)
            emb = ad.matmul(p, soft_table)
        return probs

    def hard_decode(self, cond: Tensor, n_steps: int) -> list[Tensor]:
        """Greedy decode with straight-through one-hot feedback."""
        soft_table = ad.embedding(self.embed, self._soft_rows)
        batch = cond.data.shape[0]
        hs = [init(cond) for init in self.init]
        emb = ad.embedding(self.embed, np.full(batch, self.cfg.bos_id, dtype=np.int64))
        probs: list[Tensor] = []
        for _ in range(n_steps):
            logits, hs = self._step(emb, cond, hs)
            p = ad.softmax(logits)
            probs.append(p)
            emb = ad.matmul(ad.straight_through_onehot(p), soft_table)
        return probs

    def greedy_decode(self, cond: Tensor, max_len: int) -> tuple[list[tuple[int, ...]], list[np.ndarray]]:
        """Greedy symbol decode until the end marker or ``max_len``.

        Returns unit sequences and the per-step distributions (in numpy,
        no graph).
        """
        eos_col = self.n_out - 1
        with ad.no_grad():
            batch = cond.data.shape[0]
            hs = [init(cond) for init in self.init]
            sym = np.full(batch, self.cfg.bos_id, dtype=np.int64)
            done = np.zeros(batch, dtype=bool)
            seqs: list[list[int]] = [[] for _ in range(batch)]
            dists: list[np.ndarray] = []
            for _ in range(max_len):
                emb = ad.embedding(self.embed, sym)
                logits, hs = self._step(emb, cond, hs)
                p = ad.softmax(logits).data
                dists.append(p)
                choice = p.argmax(axis=1)
                for b in range(batch):
                    if not done[b]:
                        if choice[b] == eos_col:
                            done[b] = True
                        else:
                            seqs[b].append(int(choice[b]))
                sym = np.where(choice == eos_col, self.cfg.eos_id, choice).astype(np.int64)
                if done.all():
                    break
            return [tuple(s) for s in seqs], dists

    def parameters(self) -> list[Parameter]:
        ps: list[Parameter] = []
        for layer in self.layers:
            ps += layer.parameters()
        for init in self.init:
            ps += init.parameters()
        return ps + self.out.parameters()


# -- the full model ----------------------------------------------------


class WordEmbedModel:
    """The three encoders, two decoders, and shared subword embeddings.

    Component parameter streams are seeded independently, so the text
    side's initialization does not depend on the audio feature dimension.
    """

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        ss = np.random.SeedSequence(seed)
        r_embed, r_aud, r_spk, r_txt, r_adec, r_tdec = (
            np.random.default_rng(s) for s in ss.spawn(6)
        )
        self.embed = Parameter(
            _uniform(r_embed, (cfg.inventory_size + 3, cfg.subword_embed_dim)), "embed.table"
        )
        self.audio_enc = BiGRUEncoder(
            cfg.feature_dim, cfg.encoder_hidden, cfg.layers, cfg.phonetic_dim, "audio_enc", r_aud
        )
        self.speaker_enc = BiGRUEncoder(
            cfg.feature_dim, cfg.encoder_hidden, cfg.layers, cfg.speaker_dim, "speaker_enc", r_spk
        )
        self.text_enc = BiGRUEncoder(
            cfg.subword_embed_dim, cfg.encoder_hidden, cfg.layers, cfg.phonetic_dim,
            "text_enc", r_txt,
        )
        self.audio_dec = AudioDecoder(
            cfg.phonetic_dim + cfg.speaker_dim,
            cfg.audio_decoder_hidden,
            cfg.layers,
            cfg.feature_dim,
            "audio_dec",
            r_adec,
        )
        self.text_dec = TextDecoder(cfg, self.embed, "text_dec", r_tdec)

    # -- parameters ----------------------------------------------------
    def parameters(self) -> list[Parameter]:
        return (
            [self.embed]
            + self.audio_enc.parameters()
            + self.speaker_enc.parameters()
            + self.text_enc.parameters()
            + self.audio_dec.parameters()
            + self.text_dec.parameters()
        )

    def text_parameters(self) -> list[Parameter]:
        """Parameters of the text autoencoder side (plus shared embeddings)."""
        return [self.embed] + self.text_enc.parameters() + self.text_dec.parameters()

    def audio_parameters(self) -> list[Parameter]:
        return (
            self.audio_enc.parameters()
            + self.speaker_enc.parameters()
            + self.audio_dec.parameters()
        )

    def named_parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    # -- batched forward passes ------------------------------------------
    def _check_audio(self, audio: AudioBatch) -> None:
        if audio.frames.shape[2] != self.cfg.feature_dim:
            raise ConfigMismatchError(
                f"frames have dimension {audio.frames.shape[2]}, "
                f"model expects {self.cfg.feature_dim}"
            )

    def _audio_seq(self, audio: AudioBatch) -> list[Tensor]:
        return [Tensor(np.ascontiguousarray(audio.frames[:, t])) for t in range(audio.max_len)]

    def audio_phonetic(self, audio: AudioBatch) -> Tensor:
        self._check_audio(audio)
        return self.audio_enc.encode(self._audio_seq(audio), audio.mask)

    def speaker(self, audio: AudioBatch) -> Tensor:
        self._check_audio(audio)
        return self.speaker_enc.encode(self._audio_seq(audio), audio.mask)

    def text_phonetic(self, text: TextBatch) -> Tensor:
        if text.units.max() >= self.cfg.inventory_size + 3:
            raise ConfigMismatchError(
                f"unit id {int(text.units.max())} outside inventory of size "
                f"{self.cfg.inventory_size}"
            )
        seq = [ad.embedding(self.embed, text.units[:, t]) for t in range(text.max_len)]
        return self.text_enc.encode(seq, text.mask)

    def text_phonetic_soft(self, probs: list[Tensor], mask: np.ndarray | None) -> Tensor:
        """Encode a soft symbol sequence (distributions over units + end)."""
        soft_table = ad.embedding(self.embed, self.text_dec._soft_rows)
        seq = [ad.matmul(p, soft_table) for p in probs]
        return self.text_enc.encode(seq, mask)

    def audio_phonetic_seq(self, seq: list[Tensor], mask: np.ndarray | None) -> Tensor:
        """Phonetic encoding of an already-tensorized frame sequence."""
        return self.audio_enc.encode(seq, mask)

    def reconstruct_audio(self, phonetic: Tensor, spk: Tensor, n_steps: int) -> list[Tensor]:
        return self.audio_dec.generate(ad.concat([phonetic, spk], axis=1), n_steps)

    def text_teacher_logprobs(self, cond: Tensor, text: TextBatch):
        return self.text_dec.teacher_logprobs(cond, text)

    def text_soft_decode(self, cond: Tensor, n_steps: int) -> list[Tensor]:
        return self.text_dec.soft_decode(cond, n_steps)

    def text_hard_decode(self, cond: Tensor, n_steps: int) -> list[Tensor]:
        return self.text_dec.hard_decode(cond, n_steps)


# -- corpus-scale embedding extraction -----------------------------------


def encode_corpus_audio(model: WordEmbedModel, corpus, batch_size: int = 64) -> np.ndarray:
    """Phonetic vectors of every spoken word, in corpus order ([M, P])."""
    out = []
    with ad.no_grad():
        for lo in range(0, len(corpus.spoken), batch_size):
            chunk = corpus.spoken[lo : lo + batch_size]
            out.append(model.audio_phonetic(AudioBatch.from_words(list(chunk))).data)
    return np.concatenate(out, axis=0)


def encode_corpus_speaker(model: WordEmbedModel, corpus, batch_size: int = 64) -> np.ndarray:
    """Speaker vectors of every spoken word, in corpus order ([M, Q])."""
    out = []
    with ad.no_grad():
        for lo in range(0, len(corpus.spoken), batch_size):
            chunk = corpus.spoken[lo : lo + batch_size]
            out.append(model.speaker(AudioBatch.from_words(list(chunk))).data)
    return np.concatenate(out, axis=0)


def encode_lexicon(model: WordEmbedModel, lexicon, batch_size: int = 256) -> np.ndarray:
    """Phonetic vectors of every lexicon word, in word-id order ([N, P])."""
    out = []
    with ad.no_grad():
        for lo in range(0, lexicon.n_words, batch_size):
            seqs = [tw.units for _, tw in lexicon.words[lo : lo + batch_size]]
            batch = TextBatch.from_units(seqs, pad_id=model.cfg.pad_id)
            out.append(model.text_phonetic(batch).data)
    return np.concatenate(out, axis=0)


# -- single-item convenience wrappers -----------------------------------


def encode_audio_phonetic(x: SpokenWord | np.ndarray, model: WordEmbedModel) -> np.ndarray:
    """Phonetic vector of one spoken word (evaluation mode, no graph)."""
    frames = x.frames if isinstance(x, SpokenWord) else np.asarray(x, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"expected a [T>=1, D] frame matrix, got shape {frames.shape}")
    with ad.no_grad():
        return model.audio_phonetic(AudioBatch.from_arrays([frames])).data[0].copy()


def encode_speaker(x: SpokenWord | np.ndarray, model: WordEmbedModel) -> np.ndarray:
    frames = x.frames if isinstance(x, SpokenWord) else np.asarray(x, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"expected a [T>=1, D] frame matrix, got shape {frames.shape}")
    with ad.no_grad():
        return model.speaker(AudioBatch.from_arrays([frames])).data[0].copy()


def encode_text(y: TextWord | tuple[int, ...], model: WordEmbedModel) -> np.ndarray:
    """Phonetic vector of one text word; a pure function of its units."""
    units = y.units if isinstance(y, TextWord) else tuple(int(u) for u in y)
    if len(units) < 1:
        raise ValueError("cannot encode an empty unit sequence")
    if any(u >= model.cfg.inventory_size or u < 0 for u in units):
        raise ValueError(f"unit id outside inventory of size {model.cfg.inventory_size}")
    with ad.no_grad():
        batch = TextBatch.from_units([units], pad_id=model.cfg.pad_id)
        return model.text_phonetic(batch).data[0].copy()


def decode_audio(
    phonetic: np.ndarray, spk: np.ndarray, n_frames: int, model: WordEmbedModel
) -> np.ndarray:
    """Generate a [T, D] frame matrix from embedding vectors."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    with ad.no_grad():
        frames = model.reconstruct_audio(
            Tensor(np.asarray(phonetic)[None, :]), Tensor(np.asarray(spk)[None, :]), n_frames
        )
        return np.stack([f.data[0] for f in frames])


def decode_text(
    phonetic: np.ndarray,
    model: WordEmbedModel,
    teacher: TextWord | tuple[int, ...] | None = None,
    max_len: int = 32,
) -> tuple[tuple[int, ...], np.ndarray]:
    """Decode a unit sequence from a phonetic vector.

    With a teacher the decoder is forced through it and emits exactly
    ``len(teacher) + 1`` distributions (units then end marker); without,
    it decodes greedily until the end marker or ``max_len``.  Returns
    (units, per-step distributions over inventory + end marker).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    cond = Tensor(np.asarray(phonetic)[None, :])
    with ad.no_grad():
        if teacher is not None:
            units = teacher.units if isinstance(teacher, TextWord) else tuple(teacher)
            batch = TextBatch.from_units([units], pad_id=model.cfg.pad_id)
            logps, _, _ = model.text_dec.teacher_logprobs(cond, batch)
            dists = np.stack([np.exp(lp.data[0]) for lp in logps])
            return units, dists
        seqs, dists = model.text_dec.greedy_decode(cond, max_len)
        return seqs[0], np.stack([d[0] for d in dists])


# -- checkpoints ---------------------------------------------------------

CHECKPOINT_KIND = "phonembed-checkpoint"


def save_checkpoint(model: WordEmbedModel, path, extra_meta: dict | None = None) -> None:
    """Serialize config + parameters; round-trips bit-exactly."""
    meta = {"kind": CHECKPOINT_KIND, "config": model.cfg.to_dict()}
    if extra_meta:
        meta["extra"] = extra_meta
    write_container(path, meta, {n: p.data for n, p in model.named_parameters().items()})


def load_checkpoint(path, expect: dict | None = None) -> WordEmbedModel:
    """Load a checkpoint; ``expect`` pins config fields (e.g. feature_dim).

    Raises :class:`ConfigMismatchError` when a pinned field disagrees and
    :class:`phonembed.fileio.FileFormatError` on damaged files.
    """
    meta, tensors = read_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ConfigMismatchError(f"{path}: not a model checkpoint")
    cfg = NetConfig.from_dict(meta["config"])
    if expect:
        for key, want in expect.items():
            have = getattr(cfg, key)
            if have != want:
                raise ConfigMismatchError(
                    f"{path}: checkpoint has {key}={have}, expected {want}"
                )
    model = WordEmbedModel(cfg, seed=0)
    named = model.named_parameters()
    missing = set(named) - set(tensors)
    extra = set(tensors) - set(named)
    if missing or extra:
        raise ConfigMismatchError(
            f"{path}: parameter names do not match (missing {sorted(missing)[:3]}, "
            f"extra {sorted(extra)[:3]})"
        )
    for name, param in named.items():
        if param.data.shape != tensors[name].shape:
            raise ConfigMismatchError(
                f"{path}: tensor {name} has shape {tensors[name].shape}, "
                f"expected {param.data.shape}"
            )
        param.data = np.ascontiguousarray(tensors[name])
    return model
