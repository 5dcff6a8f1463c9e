import numpy as np
import pytest

from phonembed import corpus as cp
from phonembed.nets import NetConfig, WordEmbedModel

TINY_SPEC = cp.SynthSpec(
    n_words=8,
    n_units=4,
    units_per_word=(2, 4),
    n_speakers=2,
    tokens_per_word=5,
    frames_per_unit=(2, 4),
    feature_dim=6,
    noise_std=0.15,
    speaker_offset_std=0.3,
    words_per_utterance=(2, 4),
    test_speakers=1,
    test_tokens_per_word=2,
)

SMALL_NET = NetConfig(
    feature_dim=6,
    inventory_size=4,
    encoder_hidden=10,
    audio_decoder_hidden=12,
    text_decoder_hidden=10,
    layers=1,
    phonetic_dim=8,
    speaker_dim=5,
    subword_embed_dim=7,
)


@pytest.fixture(scope="session")
def tiny_corpus() -> cp.Corpus:
    return cp.generate_synthetic_corpus(TINY_SPEC, seed=11)


@pytest.fixture(scope="session")
def tiny_split() -> tuple[cp.Corpus, cp.Corpus]:
    return cp.generate_synthetic_split(TINY_SPEC, seed=11)


@pytest.fixture
def small_model() -> WordEmbedModel:
    return WordEmbedModel(SMALL_NET, seed=3)


TINY_TRAIN_NET = NetConfig(
    feature_dim=6,
    inventory_size=4,
    encoder_hidden=20,
    audio_decoder_hidden=20,
    text_decoder_hidden=20,
    layers=1,
    phonetic_dim=10,
    speaker_dim=6,
    subword_embed_dim=8,
)


@pytest.fixture(scope="session")
def tiny_trained(tiny_split):
    """A briefly trained joint model on the tiny corpus (shared, ~20 s)."""
    from phonembed import corpus as cp
    from phonembed import trainer as tr

    train, test = tiny_split
    train = cp.apply_cmvn(train)
    pairs = cp.build_pair_set(train, len(train.annotated_indices), seed=0)
    cfg = tr.TrainConfig(
        learning_rate=2e-3, batch_size=16, max_epochs=60, patience=100, seed=0
    )
    result = tr.train_joint(train, pairs, TINY_TRAIN_NET, cfg)
    return train, cp.apply_cmvn(test), result


def make_corpus(n_utts=3, words_per_utt=2, dim=4, n_frames=5, labeled=True, seed=0):
    """Hand-rolled corpus with a 3-word lexicon, for targeted tests."""
    lex = cp.Lexicon([("cat", ["k", "a", "t"]), ("at", ["a", "t"]), ("ta", ["t", "a"])])
    rng = np.random.default_rng(seed)
    spoken = []
    utterances = {}
    transcripts = {}
    surfaces = [s for s, _ in lex.words]
    for u in range(n_utts):
        idxs = []
        words = []
        for pos in range(words_per_utt):
            word = surfaces[(u + pos) % len(surfaces)]
            idxs.append(len(spoken))
            words.append(lex.word_id(word))
            spoken.append(
                cp.SpokenWord(
                    frames=rng.normal(size=(n_frames, dim)),
                    utterance_id=f"utt{u}",
                    position=pos,
                    word_label=word if labeled else None,
                )
            )
        utterances[f"utt{u}"] = tuple(idxs)
        transcripts[f"utt{u}"] = tuple(words)
    return cp.Corpus(
        spoken=tuple(spoken), lexicon=lex, utterances=utterances, transcripts=transcripts
    )
