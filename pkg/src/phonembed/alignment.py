"""Separate learning then transformation between the two latent spaces.

Instead of twisting both autoencoders into one space during training,
this path trains them on their intra-domain losses only (with a
speaker-adversarial critic keeping speaker cues out of the audio
phonetic vectors), then bridges the finished spaces: standardize each,
project onto principal components, and learn a pair of square linear
maps between the projections by gradient descent on forward-mapping and
cycle-consistency penalties over the paired items.

The critic never sees speaker labels; it scores pairs of audio phonetic
vectors and is trained to separate same-utterance pairs from
cross-utterance pairs under a gradient-penalized 1-Lipschitz objective,
while the phonetic encoder is trained to erase that separation.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .corpus import Corpus, CorpusError, PairSet
from .fileio import read_container, write_container
from .nets import (
    AudioBatch,
    NetConfig,
    WordEmbedModel,
    encode_corpus_audio,
    encode_lexicon,
)
from .trainer import Adam, TrainConfig, TrainResult, train_joint

log = logging.getLogger(__name__)


# -- speaker-adversarial critic -------------------------------------------


class SpeakerCritic:
    """Two-layer scorer of phonetic-vector pairs (tanh hidden layer)."""

    def __init__(self, phonetic_dim: int, hidden: int = 256, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1]))
        lim = 0.08
        self.w1 = Parameter(rng.uniform(-lim, lim, (2 * phonetic_dim, hidden)), "critic.w1")
        self.b1 = Parameter(np.zeros(hidden), "critic.b1")
        self.w2 = Parameter(rng.uniform(-lim, lim, (hidden, 1)), "critic.w2")
        self.b2 = Parameter(np.zeros(1), "critic.b2")

    def score(self, z: Tensor) -> Tensor:
        """Scalar score per pair; input is [B, 2P]."""
        hidden = ad.tanh(ad.add(ad.matmul(z, self.w1), self.b1))
        return ad.add(ad.matmul(hidden, self.w2), self.b2)

    def input_gradient(self, z: Tensor) -> Tensor:
        """d score / d input, written in primitive ops so the penalty on
        its norm stays differentiable w.r.t. the critic parameters."""
        act = ad.tanh(ad.add(ad.matmul(z, self.w1), self.b1))
        gate = ad.mul(ad.sub(1.0, ad.square(act)), ad.transpose(self.w2))
        return ad.matmul(gate, ad.transpose(self.w1))

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


def gradient_penalty(
    critic: SpeakerCritic,
    z_same: np.ndarray,
    z_cross: np.ndarray,
    rng: np.random.Generator,
) -> Tensor:
    """Penalize the critic's input-gradient norm away from 1 on random
    interpolates between same-utterance and cross-utterance pairs."""
    eps = rng.uniform(size=(z_same.shape[0], 1))
    z = Tensor(eps * z_same + (1.0 - eps) * z_cross)
    grad = critic.input_gradient(z)
    norm = ad.sqrt(ad.add(ad.tsum(ad.square(grad), axis=1), 1e-12))
    return ad.tmean(ad.square(ad.sub(norm, 1.0)))


def speaker_adversarial_loss(
    model: WordEmbedModel,
    critic: SpeakerCritic,
    same_pairs: tuple[AudioBatch, AudioBatch],
    cross_pairs: tuple[AudioBatch, AudioBatch],
    gp_weight: float,
    rng: np.random.Generator,
) -> tuple[Tensor, Tensor]:
    """(critic objective, encoder objective) for one batch of pairs.

    The critic minimizes its objective to widen the score separation
    between same-utterance and cross-utterance pairs (plus the gradient
    penalty); the encoder minimizes the separation itself.  The critic
    objective is built on detached embeddings so its gradients never
    reach the encoder.
    """
    live_same = ad.concat(
        [model.audio_phonetic(same_pairs[0]), model.audio_phonetic(same_pairs[1])], axis=1
    )
    live_cross = ad.concat(
        [model.audio_phonetic(cross_pairs[0]), model.audio_phonetic(cross_pairs[1])], axis=1
    )
    encoder_obj = ad.sub(
        ad.tmean(critic.score(live_same)), ad.tmean(critic.score(live_cross))
    )

    z_same, z_cross = live_same.data, live_cross.data
    sep = ad.sub(
        ad.tmean(critic.score(Tensor(z_same))), ad.tmean(critic.score(Tensor(z_cross)))
    )
    penalty = gradient_penalty(critic, z_same, z_cross, rng)
    critic_obj = ad.add(ad.mul(sep, -1.0), ad.mul(penalty, gp_weight))
    return critic_obj, encoder_obj


class SpeakerAdversary:
    """Owns the critic, its optimizer, and utterance-pair sampling.

    Same-utterance pairs share a speaker by construction; cross-utterance
    pairs usually do not.  That co-occurrence signal is the only speaker
    supervision used.
    """

    def __init__(self, phonetic_dim: int, seed: int, gp_weight: float, lr: float,
                 hidden: int = 256):
        self.critic = SpeakerCritic(phonetic_dim, hidden=hidden, seed=seed)
        self.gp_weight = gp_weight
        self.opt = Adam(self.critic.parameters(), lr)
        self._pools: dict[int, tuple[list[tuple[int, ...]], list[tuple[int, ...]]]] = {}

    def _utterance_pools(self, corpus: Corpus):
        key = id(corpus)
        if key not in self._pools:
            all_utts = [tuple(v) for v in corpus.utterances.values()]
            multi = [u for u in all_utts if len(u) >= 2]
            if not multi:
                raise CorpusError(
                    "speaker adversary needs at least one utterance with >= 2 words"
                )
            if len(all_utts) < 2:
                raise CorpusError("speaker adversary needs at least two utterances")
            self._pools[key] = (multi, all_utts)
        return self._pools[key]

    def sample_pairs(
        self, corpus: Corpus, rng: np.random.Generator, size: int
    ) -> tuple[tuple[AudioBatch, AudioBatch], tuple[AudioBatch, AudioBatch]]:
        multi, all_utts = self._utterance_pools(corpus)
        s1, s2, c1, c2 = [], [], [], []
        for _ in range(size):
            utt = multi[int(rng.integers(len(multi)))]
            i, j = rng.choice(len(utt), size=2, replace=False)
            s1.append(utt[int(i)])
            s2.append(utt[int(j)])
            ua, ub = (int(v) for v in rng.choice(len(all_utts), size=2, replace=False))
            c1.append(all_utts[ua][int(rng.integers(len(all_utts[ua])))])
            c2.append(all_utts[ub][int(rng.integers(len(all_utts[ub])))])

        def batch(idxs):
            return AudioBatch.from_arrays([corpus.spoken[i].frames for i in idxs])

        return (batch(s1), batch(s2)), (batch(c1), batch(c2))

    def run_critic_steps(
        self,
        model: WordEmbedModel,
        corpus: Corpus,
        rng: np.random.Generator,
        batch_size: int,
        n_critic: int,
    ) -> float:
        """n critic updates on detached embeddings; returns the last objective."""
        last = 0.0
        for _ in range(n_critic):
            same, cross = self.sample_pairs(corpus, rng, batch_size)
            with ad.no_grad():
                z_same = np.concatenate(
                    [model.audio_phonetic(same[0]).data, model.audio_phonetic(same[1]).data],
                    axis=1,
                )
                z_cross = np.concatenate(
                    [model.audio_phonetic(cross[0]).data, model.audio_phonetic(cross[1]).data],
                    axis=1,
                )
            sep = ad.sub(
                ad.tmean(self.critic.score(Tensor(z_same))),
                ad.tmean(self.critic.score(Tensor(z_cross))),
            )
            penalty = gradient_penalty(self.critic, z_same, z_cross, rng)
            obj = ad.add(ad.mul(sep, -1.0), ad.mul(penalty, self.gp_weight))
            ad.zero_grads(self.critic.parameters())
            obj.backward()
            self.opt.step()
            last = obj.item()
        return last

    def encoder_separation(
        self, model: WordEmbedModel, corpus: Corpus, rng: np.random.Generator, batch_size: int
    ) -> Tensor:
        """The separation the encoder is trained to erase (graph into E_p)."""
        same, cross = self.sample_pairs(corpus, rng, batch_size)
        live_same = ad.concat(
            [model.audio_phonetic(same[0]), model.audio_phonetic(same[1])], axis=1
        )
        live_cross = ad.concat(
            [model.audio_phonetic(cross[0]), model.audio_phonetic(cross[1])], axis=1
        )
        return ad.sub(
            ad.tmean(self.critic.score(live_same)), ad.tmean(self.critic.score(live_cross))
        )


# -- separate training -------------------------------------------------------


def train_separate(
    corpus: Corpus,
    pairs: PairSet | None,
    net_config: NetConfig,
    train_config: TrainConfig,
    adversarial: bool = True,
) -> TrainResult:
    """Train the two autoencoders independently (cross-domain terms off).

    The pair set plays no role in the objective; it is only used for the
    validation split, mirroring the joint path's bookkeeping.
    """
    cfg = dataclasses.replace(
        train_config,
        weights=train_config.weights.separate_learning(),
        adversarial=adversarial,
    )
    return train_joint(corpus, pairs, net_config, cfg)


# -- projection --------------------------------------------------------------


@dataclass(frozen=True)
class ProjectedSpace:
    """Per-dimension standardization plus an orthonormal principal basis."""

    mean: np.ndarray
    std: np.ndarray
    basis: np.ndarray  # [P, d], orthonormal columns
    explained_variance: np.ndarray  # ratio per retained component

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, vectors: np.ndarray) -> np.ndarray:
        return ((np.asarray(vectors) - self.mean) / self.std) @ self.basis

    def reconstruct(self, projected: np.ndarray) -> np.ndarray:
        return (np.asarray(projected) @ self.basis.T) * self.std + self.mean


def fit_projection(vectors: np.ndarray, dim: int) -> ProjectedSpace:
    """Standardize per dimension, then keep the top principal components.

    Requires at least ``dim + 1`` vectors and data of rank >= dim.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n, width = x.shape
    if dim > width:
        raise ValueError(f"cannot project {width}-dim vectors onto {dim} components")
    if n < dim + 1:
        raise ValueError(f"need at least {dim + 1} vectors to fit {dim} components, got {n}")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    z = (x - mean) / std
    _, svals, vt = np.linalg.svd(z, full_matrices=False)
    if svals[dim - 1] <= 1e-10 * max(svals[0], 1e-30):
        raise ValueError(
            f"data rank is below {dim}; choose a smaller projection dimension"
        )
    basis = vt[:dim].T
    # Fix the SVD sign ambiguity: largest-magnitude loading positive.
    flips = np.sign(basis[np.abs(basis).argmax(axis=0), np.arange(dim)])
    basis = basis * flips
    ratios = (svals**2) / (svals**2).sum()
    return ProjectedSpace(
        mean=mean, std=std, basis=basis, explained_variance=ratios[:dim]
    )


# -- linear maps between the projected spaces --------------------------------


@dataclass(frozen=True)
class AlignmentMaps:
    """Square maps between the projected audio (A) and text (T) spaces.

    ``audio_to_text`` sends an A-space column vector to T space (applied
    to row vectors as ``a @ audio_to_text.T``), and ``text_to_audio``
    the reverse.
    """

    audio_to_text: np.ndarray
    text_to_audio: np.ndarray
    cycle_weight: float

    def __post_init__(self):
        a, t = self.audio_to_text, self.text_to_audio
        if a.shape != t.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"maps must be square and matched, got {a.shape} / {t.shape}")
        if not (np.isfinite(a).all() and np.isfinite(t).all()):
            raise ValueError("non-finite entries in alignment maps")

    @property
    def dim(self) -> int:
        return self.audio_to_text.shape[0]


def alignment_objective(
    maps: AlignmentMaps,
    audio_points: np.ndarray,
    text_points: np.ndarray,
    cycle_weight: float | None = None,
) -> float:
    """Forward-mapping plus cycle-consistency squared error over pairs.

    ``audio_points`` and ``text_points`` are paired row vectors in the
    two projected spaces.
    """
    lam = maps.cycle_weight if cycle_weight is None else cycle_weight
    a = np.asarray(audio_points, dtype=np.float64)
    t = np.asarray(text_points, dtype=np.float64)
    fwd_a = a @ maps.audio_to_text.T
    fwd_t = t @ maps.text_to_audio.T
    value = ((t - fwd_a) ** 2).sum() + ((a - fwd_t) ** 2).sum()
    value += lam * (
        ((a - fwd_a @ maps.text_to_audio.T) ** 2).sum()
        + ((t - fwd_t @ maps.audio_to_text.T) ** 2).sum()
    )
    return float(value)


def learn_alignment_maps(
    audio_points: np.ndarray,
    text_points: np.ndarray,
    cycle_weight: float = 1.0,
    steps: int = 5000,
    lr: float = 1e-3,
    plateau_rel: float = 1e-12,
    plateau_steps: int = 25,
) -> tuple[AlignmentMaps, list[float]]:
    """Gradient descent from identity maps on the alignment objective.

    A step that fails to decrease the objective is rolled back and the
    rate halved, so the returned trajectory is non-increasing.  Returns
    the maps and the accepted objective values (first entry = identity
    initialization).
    """
    a_np = np.asarray(audio_points, dtype=np.float64)
    t_np = np.asarray(text_points, dtype=np.float64)
    if a_np.shape != t_np.shape:
        raise ValueError(f"paired point sets disagree: {a_np.shape} vs {t_np.shape}")
    dim = a_np.shape[1]
    a_t, t_t = Tensor(a_np), Tensor(t_np)
    m_at = Parameter(np.eye(dim), "maps.audio_to_text")
    m_ta = Parameter(np.eye(dim), "maps.text_to_audio")
    params = [m_at, m_ta]

    def objective() -> Tensor:
        fwd_a = ad.matmul(a_t, ad.transpose(m_at))
        fwd_t = ad.matmul(t_t, ad.transpose(m_ta))
        val = ad.add(
            ad.tsum(ad.square(ad.sub(t_t, fwd_a))),
            ad.tsum(ad.square(ad.sub(a_t, fwd_t))),
        )
        cyc = ad.add(
            ad.tsum(ad.square(ad.sub(a_t, ad.matmul(fwd_a, ad.transpose(m_ta))))),
            ad.tsum(ad.square(ad.sub(t_t, ad.matmul(fwd_t, ad.transpose(m_at))))),
        )
        return ad.add(val, ad.mul(cyc, cycle_weight))

    current = objective()
    trajectory = [current.item()]
    stall = 0
    for _ in range(steps):
        ad.zero_grads(params)
        loss = objective()
        loss.backward()
        prev = [p.data.copy() for p in params]
        prev_val = trajectory[-1]
        for p in params:
            p.data -= lr * p.grad
        with ad.no_grad():
            new_val = objective().item()
        if not np.isfinite(new_val) or new_val > prev_val:
            for p, old in zip(params, prev):
                p.data = old
            lr *= 0.5
            if lr < 1e-15:
                log.warning("alignment descent stalled; stopping")
                break
            continue
        trajectory.append(new_val)
        if prev_val - new_val <= plateau_rel * max(prev_val, 1e-30):
            stall += 1
            if stall >= plateau_steps:
                break
        else:
            stall = 0
    maps = AlignmentMaps(
        audio_to_text=m_at.data.copy(),
        text_to_audio=m_ta.data.copy(),
        cycle_weight=cycle_weight,
    )
    return maps, trajectory


# -- full separate-path bundle ------------------------------------------------


@dataclass(frozen=True)
class AlignmentBundle:
    """Everything the decoder needs to compare across separately trained
    spaces: both projections plus the learned maps."""

    audio_space: ProjectedSpace
    text_space: ProjectedSpace
    maps: AlignmentMaps
    final_objective: float


def build_alignment(
    model: WordEmbedModel,
    corpus: Corpus,
    pairs: PairSet,
    dim: int = 128,
    cycle_weight: float = 1.0,
    steps: int = 5000,
    lr: float = 1e-3,
) -> AlignmentBundle:
    """Fit projections on all embeddings, then learn maps on the pairs."""
    audio_emb = encode_corpus_audio(model, corpus)
    text_emb = encode_lexicon(model, corpus.lexicon)
    audio_space = fit_projection(audio_emb, dim)
    text_space = fit_projection(text_emb, dim)
    a_pts = audio_space.project(audio_emb[[i for i, _ in pairs.pairs]])
    t_pts = text_space.project(text_emb[[w for _, w in pairs.pairs]])
    maps, trajectory = learn_alignment_maps(
        a_pts, t_pts, cycle_weight=cycle_weight, steps=steps, lr=lr
    )
    return AlignmentBundle(
        audio_space=audio_space,
        text_space=text_space,
        maps=maps,
        final_objective=trajectory[-1],
    )


ALIGNMENT_KIND = "phonembed-alignment"


def save_alignment(bundle: AlignmentBundle, path) -> None:
    meta = {
        "kind": ALIGNMENT_KIND,
        "cycle_weight": bundle.maps.cycle_weight,
        "final_objective": bundle.final_objective,
    }
    tensors = {
        "maps.audio_to_text": bundle.maps.audio_to_text,
        "maps.text_to_audio": bundle.maps.text_to_audio,
    }
    for prefix, space in (("audio", bundle.audio_space), ("text", bundle.text_space)):
        tensors[f"{prefix}.mean"] = space.mean
        tensors[f"{prefix}.std"] = space.std
        tensors[f"{prefix}.basis"] = space.basis
        tensors[f"{prefix}.explained_variance"] = space.explained_variance
    write_container(path, meta, tensors)


def load_alignment(path) -> AlignmentBundle:
    meta, tensors = read_container(path)
    if meta.get("kind") != ALIGNMENT_KIND:
        raise ValueError(f"{path}: not an alignment bundle")

    def space(prefix: str) -> ProjectedSpace:
        return ProjectedSpace(
            mean=tensors[f"{prefix}.mean"],
            std=tensors[f"{prefix}.std"],
            basis=tensors[f"{prefix}.basis"],
            explained_variance=tensors[f"{prefix}.explained_variance"],
        )

    maps = AlignmentMaps(
        audio_to_text=tensors["maps.audio_to_text"],
        text_to_audio=tensors["maps.text_to_audio"],
        cycle_weight=float(meta["cycle_weight"]),
    )
    return AlignmentBundle(
        audio_space=space("audio"),
        text_space=space("text"),
        maps=maps,
        final_objective=float(meta["final_objective"]),
    )
