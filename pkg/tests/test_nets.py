import numpy as np
import pytest

from phonembed import autodiff as ad
from phonembed import fileio
from phonembed.nets import (
    AudioBatch,
    ConfigMismatchError,
    NetConfig,
    TextBatch,
    WordEmbedModel,
    decode_audio,
    decode_text,
    encode_audio_phonetic,
    encode_lexicon,
    encode_speaker,
    encode_text,
    load_checkpoint,
    save_checkpoint,
)

from conftest import SMALL_NET


def _frames(rng, t, dim=SMALL_NET.feature_dim):
    return rng.normal(size=(t, dim))


class TestEncoders:
    def test_output_dimensions(self, small_model):
        rng = np.random.default_rng(0)
        x = _frames(rng, 5)
        assert encode_audio_phonetic(x, small_model).shape == (SMALL_NET.phonetic_dim,)
        assert encode_speaker(x, small_model).shape == (SMALL_NET.speaker_dim,)
        assert encode_text((0, 1, 2), small_model).shape == (SMALL_NET.phonetic_dim,)

    def test_deterministic(self, small_model):
        rng = np.random.default_rng(1)
        x = _frames(rng, 7)
        assert np.array_equal(
            encode_audio_phonetic(x, small_model), encode_audio_phonetic(x, small_model)
        )
        assert np.array_equal(
            encode_text((1, 3), small_model), encode_text((1, 3), small_model)
        )

    def test_text_encoding_depends_only_on_units(self, small_model):
        from phonembed.corpus import TextWord

        a = encode_text(TextWord(units=(0, 2, 1), word_id=0), small_model)
        b = encode_text(TextWord(units=(0, 2, 1), word_id=7), small_model)
        c = encode_text((0, 2, 1), small_model)
        assert np.array_equal(a, b)
        assert np.array_equal(a, c)

    def test_padded_batch_matches_single_item(self, small_model):
        rng = np.random.default_rng(2)
        arrays = [_frames(rng, 3), _frames(rng, 8), _frames(rng, 5)]
        batch = AudioBatch.from_arrays(arrays)
        with ad.no_grad():
            batched = small_model.audio_phonetic(batch).data
        for i, arr in enumerate(arrays):
            single = encode_audio_phonetic(arr, small_model)
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    def test_padded_text_batch_matches_single(self, small_model):
        seqs = [(0, 1), (2, 3, 1, 0), (3,)]
        batch = TextBatch.from_units(seqs, pad_id=SMALL_NET.pad_id)
        with ad.no_grad():
            batched = small_model.text_phonetic(batch).data
        for i, seq in enumerate(seqs):
            np.testing.assert_allclose(batched[i], encode_text(seq, small_model), atol=1e-12)

    def test_dimension_mismatch_rejected(self, small_model):
        rng = np.random.default_rng(3)
        bad = AudioBatch.from_arrays([rng.normal(size=(4, SMALL_NET.feature_dim + 1))])
        with pytest.raises(ConfigMismatchError):
            small_model.audio_phonetic(bad)

    def test_empty_inputs_rejected(self, small_model):
        with pytest.raises(ValueError):
            encode_text((), small_model)
        with pytest.raises(ValueError):
            encode_audio_phonetic(np.zeros((0, SMALL_NET.feature_dim)), small_model)

    def test_unit_outside_inventory_rejected(self, small_model):
        with pytest.raises(ValueError):
            encode_text((0, 99), small_model)


class TestDecoders:
    def test_audio_length_contract(self, small_model):
        rng = np.random.default_rng(4)
        vp = rng.normal(size=SMALL_NET.phonetic_dim)
        vs = rng.normal(size=SMALL_NET.speaker_dim)
        out = decode_audio(vp, vs, 7, small_model)
        assert out.shape == (7, SMALL_NET.feature_dim)
        with pytest.raises(ValueError):
            decode_audio(vp, vs, 0, small_model)

    def test_audio_finite_on_zero_vectors(self, small_model):
        out = decode_audio(
            np.zeros(SMALL_NET.phonetic_dim), np.zeros(SMALL_NET.speaker_dim), 5, small_model
        )
        assert np.isfinite(out).all()

    def test_text_distributions_normalized(self, small_model):
        rng = np.random.default_rng(5)
        vp = rng.normal(size=SMALL_NET.phonetic_dim)
        _, dists = decode_text(vp, small_model, teacher=(0, 1, 2), max_len=8)
        np.testing.assert_allclose(dists.sum(axis=1), 1.0, atol=1e-6)
        assert dists.shape[1] == SMALL_NET.inventory_size + 1

    def test_teacher_step_count(self, small_model):
        rng = np.random.default_rng(6)
        vp = rng.normal(size=SMALL_NET.phonetic_dim)
        units, dists = decode_text(vp, small_model, teacher=(0, 1, 2))
        assert units == (0, 1, 2)
        assert dists.shape[0] == 4  # three units then the end marker

    def test_greedy_respects_max_len(self, small_model):
        rng = np.random.default_rng(7)
        vp = rng.normal(size=SMALL_NET.phonetic_dim)
        units, dists = decode_text(vp, small_model, max_len=3)
        assert len(units) <= 3
        assert dists.shape[0] <= 3

    def test_multilayer_configs_run(self):
        for layers in (2, 3):
            cfg = NetConfig(
                feature_dim=4,
                inventory_size=3,
                encoder_hidden=6,
                audio_decoder_hidden=6,
                text_decoder_hidden=6,
                layers=layers,
                phonetic_dim=5,
                speaker_dim=4,
                subword_embed_dim=4,
            )
            model = WordEmbedModel(cfg, seed=0)
            rng = np.random.default_rng(8)
            x = rng.normal(size=(6, 4))
            assert encode_audio_phonetic(x, model).shape == (5,)
            out = decode_audio(np.zeros(5), np.zeros(4), 4, model)
            assert out.shape == (4, 4)
            units, _ = decode_text(np.zeros(5), model, teacher=(0, 1))
            assert units == (0, 1)


class TestGradientChecks:
    """Analytic gradients vs central differences for every operation."""

    def _weighted_output_sum(self, tensors, rng):
        total = None
        for t in tensors:
            w = rng.normal(size=t.data.shape)
            term = ad.tsum(ad.mul(t, w))
            total = term if total is None else ad.add(total, term)
        return total

    @pytest.fixture
    def inputs(self):
        rng = np.random.default_rng(9)
        audio = AudioBatch.from_arrays([_frames(rng, 4), _frames(rng, 6)])
        text = TextBatch.from_units([(0, 1, 2), (3, 1)], pad_id=SMALL_NET.pad_id)
        return audio, text, rng

    def test_audio_phonetic_encoder(self, small_model, inputs):
        audio, _, rng = inputs

        def loss():
            return self._weighted_output_sum([small_model.audio_phonetic(audio)], rng.spawn(1)[0])

        assert ad.check_gradients(loss, small_model.parameters(), rng=np.random.default_rng(1)) < 1e-3

    def test_speaker_encoder(self, small_model, inputs):
        audio, _, rng = inputs

        def loss():
            return self._weighted_output_sum([small_model.speaker(audio)], np.random.default_rng(2))

        assert ad.check_gradients(loss, small_model.parameters(), rng=np.random.default_rng(3)) < 1e-3

    def test_text_encoder(self, small_model, inputs):
        _, text, _ = inputs

        def loss():
            return self._weighted_output_sum([small_model.text_phonetic(text)], np.random.default_rng(4))

        assert ad.check_gradients(loss, small_model.parameters(), rng=np.random.default_rng(5)) < 1e-3

    def test_audio_decoder(self, small_model, inputs):
        audio, text, _ = inputs

        def loss():
            vp = small_model.audio_phonetic(audio)
            vs = small_model.speaker(audio)
            frames = small_model.reconstruct_audio(vp, vs, 5)
            return self._weighted_output_sum(frames, np.random.default_rng(6))

        assert ad.check_gradients(loss, small_model.parameters(), rng=np.random.default_rng(7)) < 1e-3

    def test_text_decoder(self, small_model, inputs):
        _, text, _ = inputs

        def loss():
            vp = small_model.text_phonetic(text)
            logps, _, _ = small_model.text_teacher_logprobs(vp, text)
            return self._weighted_output_sum(logps, np.random.default_rng(8))

        assert ad.check_gradients(loss, small_model.parameters(), rng=np.random.default_rng(9)) < 1e-3

    def test_input_gradients_flow(self, small_model):
        rng = np.random.default_rng(10)
        seq = [ad.Tensor(rng.normal(size=(1, SMALL_NET.feature_dim))) for _ in range(4)]
        for t in seq:
            t.requires_grad = True
        out = small_model.audio_phonetic_seq(seq, None)
        ad.tsum(out).backward()
        for t in seq:
            assert t.grad is not None and np.abs(t.grad).sum() > 0


class TestCheckpoints:
    def test_round_trip_forward_bit_exact(self, small_model, tmp_path):
        rng = np.random.default_rng(11)
        x = _frames(rng, 6)
        before = encode_audio_phonetic(x, small_model)
        path = tmp_path / "model.ckpt"
        save_checkpoint(small_model, path)
        loaded = load_checkpoint(path)
        after = encode_audio_phonetic(x, loaded)
        assert np.array_equal(before, after)
        t_before = encode_text((0, 1), small_model)
        t_after = encode_text((0, 1), loaded)
        assert np.array_equal(t_before, t_after)

    def test_config_mismatch_on_expectation(self, small_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(small_model, path)
        with pytest.raises(ConfigMismatchError, match="feature_dim"):
            load_checkpoint(path, expect={"feature_dim": SMALL_NET.feature_dim + 1})

    def test_truncated_checkpoint_rejected(self, small_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(small_model, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(fileio.FileFormatError):
            load_checkpoint(path)

    def test_extra_meta_round_trips(self, small_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(small_model, path, extra_meta={"strategy": "joint"})
        meta, _ = fileio.read_container(path)
        assert meta["extra"]["strategy"] == "joint"


class TestTrainedModelProperties:
    """Checks that need a trained model; they share the session fixture."""

    def test_within_word_closer_than_across(self, tiny_trained):
        train, _, result = tiny_trained
        from phonembed.nets import encode_corpus_audio

        emb = encode_corpus_audio(result.model, train)
        labels = [w.word_label for w in train.spoken]
        within, across = [], []
        rng = np.random.default_rng(0)
        for _ in range(300):
            i, j = rng.integers(0, len(labels), size=2)
            if i == j:
                continue
            d = float(((emb[i] - emb[j]) ** 2).sum())
            (within if labels[i] == labels[j] else across).append(d)
        assert np.mean(within) < np.mean(across)

    def test_distinct_words_map_to_distinct_vectors(self, tiny_trained):
        train, _, result = tiny_trained
        emb = encode_lexicon(result.model, train.lexicon)
        n = emb.shape[0]
        dists = ((emb[:, None, :] - emb[None, :, :]) ** 2).sum(-1)
        off_diag = dists[~np.eye(n, dtype=bool)]
        assert off_diag.min() > 0.0

    def test_reconstruction_better_than_variance(self, tiny_trained):
        train, _, result = tiny_trained
        from phonembed.nets import AudioBatch
        from phonembed.objectives import Batch, intra_audio_recon_loss

        words = list(train.spoken[:16])
        batch = Batch(audio=AudioBatch.from_words(words))
        with ad.no_grad():
            loss = intra_audio_recon_loss(batch, result.model).item()
        all_frames = np.concatenate([w.frames for w in words])
        assert loss < all_frames.var()

    def test_text_autoencoding_accuracy(self, tiny_trained):
        train, _, result = tiny_trained
        hits = 0
        for _, tw in train.lexicon.words:
            vp = encode_text(tw.units, result.model)
            units, _ = decode_text(vp, result.model, max_len=12)
            hits += units == tw.units
        assert hits / train.lexicon.n_words >= 0.95

    def test_same_speaker_pairs_closer_in_speaker_space(self, tiny_trained):
        train, _, result = tiny_trained
        from phonembed.nets import encode_corpus_speaker

        emb = encode_corpus_speaker(result.model, train)
        speakers = [w.utterance_id.split("_")[0] for w in train.spoken]
        same, cross = [], []
        rng = np.random.default_rng(1)
        for _ in range(400):
            i, j = rng.integers(0, len(speakers), size=2)
            if i == j:
                continue
            d = float(((emb[i] - emb[j]) ** 2).sum())
            (same if speakers[i] == speakers[j] else cross).append(d)
        assert np.mean(same) < np.mean(cross)
