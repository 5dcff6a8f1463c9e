import dataclasses
import json

import numpy as np
import pytest

from phonembed import corpus as cp
from phonembed.corpus import CorpusError

from conftest import TINY_SPEC, make_corpus


class TestLoadCorpus:
    def _write_manifest(self, tmp_path, rows):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        return manifest

    def _write_lexicon(self, tmp_path):
        lex = tmp_path / "lexicon.txt"
        lex.write_text("cat\tk a t\nat\ta t\n")
        return lex

    def test_empty_manifest_is_an_error(self, tmp_path):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text("\n")
        with pytest.raises(CorpusError, match="empty corpus"):
            cp.load_corpus(manifest, self._write_lexicon(tmp_path))

    def test_counts_and_label_resolution(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = []
        for i, label in enumerate(["cat", "at", None]):
            cp.write_features(tmp_path / f"{i}.fbin", rng.normal(size=(4, 3)))
            rec = {"utterance_id": "u0", "position": i, "features": f"{i}.fbin"}
            if label:
                rec["label"] = label
            rows.append(rec)
        corpus = cp.load_corpus(self._write_manifest(tmp_path, rows), self._write_lexicon(tmp_path))
        assert corpus.n_spoken == 3
        assert len(corpus.annotated_indices) == 2
        assert corpus.feature_dim == 3

    def test_dimension_mismatch_names_the_row(self, tmp_path):
        cp.write_features(tmp_path / "0.fbin", np.ones((4, 39)))
        cp.write_features(tmp_path / "1.fbin", np.ones((4, 13)))
        rows = [
            {"utterance_id": "u0", "position": 0, "features": "0.fbin"},
            {"utterance_id": "u0", "position": 1, "features": "1.fbin"},
        ]
        with pytest.raises(CorpusError, match="row 2"):
            cp.load_corpus(self._write_manifest(tmp_path, rows), self._write_lexicon(tmp_path))

    def test_missing_feature_file(self, tmp_path):
        rows = [{"utterance_id": "u0", "position": 0, "features": "nope.fbin"}]
        with pytest.raises(CorpusError, match="row 1.*not found"):
            cp.load_corpus(self._write_manifest(tmp_path, rows), self._write_lexicon(tmp_path))

    def test_unknown_label_rejected(self, tmp_path):
        cp.write_features(tmp_path / "0.fbin", np.ones((2, 3)))
        rows = [{"utterance_id": "u0", "position": 0, "features": "0.fbin", "label": "dog"}]
        with pytest.raises(CorpusError, match="row 1.*'dog'"):
            cp.load_corpus(self._write_manifest(tmp_path, rows), self._write_lexicon(tmp_path))

    def test_non_finite_features_rejected(self, tmp_path):
        frames = np.ones((2, 3))
        frames[1, 1] = np.inf
        cp.write_features(tmp_path / "0.fbin", frames)
        rows = [{"utterance_id": "u0", "position": 0, "features": "0.fbin"}]
        with pytest.raises(CorpusError, match="row 1.*non-finite"):
            cp.load_corpus(self._write_manifest(tmp_path, rows), self._write_lexicon(tmp_path))

    def test_unknown_lexicon_symbol_in_transcript(self, tmp_path):
        cp.write_features(tmp_path / "0.fbin", np.ones((2, 3)))
        rows = [{"utterance_id": "u0", "position": 0, "features": "0.fbin"}]
        manifest = self._write_manifest(tmp_path, rows)
        (tmp_path / "transcripts.txt").write_text("u0\tcat dog\n")
        with pytest.raises(CorpusError, match="dog"):
            cp.load_corpus(manifest, self._write_lexicon(tmp_path), tmp_path / "transcripts.txt")


class TestSaveLoadRoundTrip:
    def test_round_trip_identical(self, tmp_path, tiny_corpus):
        cp.save_corpus(tiny_corpus, tmp_path / "c")
        loaded = cp.load_corpus_dir(tmp_path / "c")
        cp.save_corpus(loaded, tmp_path / "c2")
        again = cp.load_corpus_dir(tmp_path / "c2")
        assert loaded.n_spoken == again.n_spoken == tiny_corpus.n_spoken
        for a, b in zip(loaded.spoken, again.spoken):
            assert np.array_equal(a.frames, b.frames)
            assert (a.utterance_id, a.position, a.word_label) == (
                b.utterance_id,
                b.position,
                b.word_label,
            )
        assert loaded.lexicon == again.lexicon
        assert loaded.utterances == again.utterances
        assert loaded.transcripts == again.transcripts

    def test_text_feature_round_trip(self, tmp_path, tiny_corpus):
        cp.save_corpus(tiny_corpus, tmp_path / "t", text_features=True)
        loaded = cp.load_corpus_dir(tmp_path / "t")
        cp.save_corpus(loaded, tmp_path / "t2", text_features=True)
        again = cp.load_corpus_dir(tmp_path / "t2")
        for a, b in zip(loaded.spoken, again.spoken):
            assert np.array_equal(a.frames, b.frames)


class TestCmvn:
    def test_standardizes_each_utterance(self, tiny_corpus):
        out = cp.apply_cmvn(tiny_corpus)
        for utt, idxs in out.utterances.items():
            stacked = np.concatenate([out.spoken[i].frames for i in idxs])
            np.testing.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-6)
            np.testing.assert_allclose(stacked.std(axis=0), 1.0, atol=1e-6)

    def test_constant_dimension_becomes_zero(self):
        corpus = make_corpus(n_utts=1, words_per_utt=2, dim=3)
        spoken = []
        for w in corpus.spoken:
            frames = w.frames.copy()
            frames[:, 1] = 4.25
            spoken.append(dataclasses.replace(w, frames=frames))
        corpus = dataclasses.replace(corpus, spoken=tuple(spoken))
        out = cp.apply_cmvn(corpus)
        for w in out.spoken:
            assert np.all(w.frames[:, 1] == 0.0)

    def test_two_frame_example(self):
        lex = cp.Lexicon([("a", ["x"])])
        spoken = (
            cp.SpokenWord(frames=np.array([[1.0]]), utterance_id="u", position=0),
            cp.SpokenWord(frames=np.array([[3.0]]), utterance_id="u", position=1),
        )
        corpus = cp.Corpus(spoken=spoken, lexicon=lex, utterances={"u": (0, 1)})
        out = cp.apply_cmvn(corpus)
        np.testing.assert_allclose(out.spoken[0].frames, [[-1.0]])
        np.testing.assert_allclose(out.spoken[1].frames, [[1.0]])

    def test_idempotent(self, tiny_corpus):
        once = cp.apply_cmvn(tiny_corpus)
        twice = cp.apply_cmvn(once)
        for a, b in zip(once.spoken, twice.spoken):
            np.testing.assert_allclose(a.frames, b.frames, atol=1e-6)

    def test_single_frame_utterance_warns_and_centers(self):
        lex = cp.Lexicon([("a", ["x"])])
        spoken = (cp.SpokenWord(frames=np.array([[5.0, -2.0]]), utterance_id="u", position=0),)
        corpus = cp.Corpus(spoken=spoken, lexicon=lex, utterances={"u": (0,)})
        with pytest.warns(UserWarning, match="single frame"):
            out = cp.apply_cmvn(corpus)
        np.testing.assert_allclose(out.spoken[0].frames, [[0.0, 0.0]])


class TestPairSet:
    def test_exhaustive_selection(self, tiny_corpus):
        n = len(tiny_corpus.annotated_indices)
        ps = cp.build_pair_set(tiny_corpus, n, seed=0)
        assert sorted(ps.spoken_indices()) == tiny_corpus.annotated_indices

    def test_deterministic(self, tiny_corpus):
        a = cp.build_pair_set(tiny_corpus, 10, seed=5)
        b = cp.build_pair_set(tiny_corpus, 10, seed=5)
        assert a.pairs == b.pairs

    def test_nested_in_n(self, tiny_corpus):
        small = cp.build_pair_set(tiny_corpus, 7, seed=3)
        large = cp.build_pair_set(tiny_corpus, 19, seed=3)
        assert set(small.pairs) <= set(large.pairs)

    def test_over_budget_reports_both_numbers(self, tiny_corpus):
        n = len(tiny_corpus.annotated_indices)
        with pytest.raises(CorpusError, match=f"{n + 5}.*{n}"):
            cp.build_pair_set(tiny_corpus, n + 5, seed=0)

    def test_labels_match_lexicon(self, tiny_corpus):
        ps = cp.build_pair_set(tiny_corpus, 12, seed=1)
        for idx, word_id in ps.pairs:
            assert tiny_corpus.lexicon.surface(word_id) == tiny_corpus.spoken[idx].word_label


class TestSubsample:
    def test_full_budget_keeps_everything(self, tiny_corpus):
        full = tiny_corpus.duration()
        out = cp.subsample_speech(tiny_corpus, full, seed=0)
        assert out.n_spoken == tiny_corpus.n_spoken
        for a, b in zip(out.spoken, tiny_corpus.spoken):
            assert np.array_equal(a.frames, b.frames)

    def test_half_budget_close_to_target(self, tiny_corpus):
        target = tiny_corpus.duration() / 2
        out = cp.subsample_speech(tiny_corpus, target, seed=0)
        longest = max(
            sum(tiny_corpus.spoken[i].n_frames for i in idxs)
            for idxs in tiny_corpus.utterances.values()
        ) * cp.DEFAULT_FRAME_PERIOD / 3600.0
        assert out.duration() <= target + 1e-12
        assert out.duration() >= target - longest

    def test_non_positive_hours_rejected(self, tiny_corpus):
        with pytest.raises(CorpusError, match="positive"):
            cp.subsample_speech(tiny_corpus, 0.0, seed=0)

    def test_over_budget_rejected(self, tiny_corpus):
        with pytest.raises(CorpusError, match="only holds"):
            cp.subsample_speech(tiny_corpus, tiny_corpus.duration() * 2, seed=0)

    def test_utterances_stay_whole(self, tiny_corpus):
        out = cp.subsample_speech(tiny_corpus, tiny_corpus.duration() / 2, seed=1)
        for utt, idxs in out.utterances.items():
            assert len(idxs) == len(tiny_corpus.utterances[utt])


class TestSyntheticCorpus:
    def test_token_count(self):
        spec = dataclasses.replace(TINY_SPEC, n_words=10, tokens_per_word=5)
        corpus = cp.generate_synthetic_corpus(spec, seed=0)
        assert corpus.n_spoken == 50

    def test_noiseless_single_speaker_tokens_identical_per_unit(self):
        spec = dataclasses.replace(
            TINY_SPEC,
            noise_std=0.0,
            speaker_offset_std=0.0,
            n_speakers=1,
            frames_per_unit=(3, 3),
        )
        corpus = cp.generate_synthetic_corpus(spec, seed=2)
        by_word: dict[str, list[np.ndarray]] = {}
        for w in corpus.spoken:
            by_word.setdefault(w.word_label, []).append(w.frames)
        for frames_list in by_word.values():
            for f in frames_list[1:]:
                assert np.array_equal(f, frames_list[0])

    def test_nearest_prototype_recovers_units(self):
        spec = dataclasses.replace(
            TINY_SPEC, noise_std=0.0, speaker_offset_std=0.0, frames_per_unit=(3, 3)
        )
        corpus = cp.generate_synthetic_corpus(spec, seed=4)
        protos = cp.unit_prototypes(spec, seed=4)
        for w in corpus.spoken:
            frames = w.frames.reshape(-1, 3, spec.feature_dim)  # fixed duration 3
            decoded = tuple(
                int(((protos - seg[0]) ** 2).sum(axis=1).argmin()) for seg in frames
            )
            assert decoded == corpus.lexicon.words[corpus.lexicon.word_id(w.word_label)][1].units

    def test_within_word_distance_zero_across_positive(self):
        spec = dataclasses.replace(
            TINY_SPEC,
            noise_std=0.0,
            speaker_offset_std=0.0,
            n_speakers=1,
            frames_per_unit=(2, 2),
        )
        corpus = cp.generate_synthetic_corpus(spec, seed=5)
        by_word: dict[str, list[np.ndarray]] = {}
        for w in corpus.spoken:
            by_word.setdefault(w.word_label, []).append(w.frames)
        words = sorted(by_word)
        for word in words:
            group = by_word[word]
            for f in group[1:]:
                assert np.linalg.norm(f - group[0]) == 0.0
        for wa, wb in zip(words, words[1:]):
            fa, fb = by_word[wa][0], by_word[wb][0]
            if fa.shape == fb.shape:
                assert np.linalg.norm(fa - fb) > 0.0

    def test_duplicate_unit_sequences_rejected(self):
        spec = dataclasses.replace(
            TINY_SPEC, n_words=2, unit_sequences=((0, 1), (0, 1))
        )
        with pytest.raises(CorpusError, match="distinct"):
            cp.generate_synthetic_corpus(spec, seed=0)

    def test_split_shares_lexicon_and_train_side(self):
        train_only = cp.generate_synthetic_corpus(TINY_SPEC, seed=9)
        train, test = cp.generate_synthetic_split(TINY_SPEC, seed=9)
        assert train.lexicon == test.lexicon
        assert train.n_spoken == train_only.n_spoken
        for a, b in zip(train.spoken, train_only.spoken):
            assert np.array_equal(a.frames, b.frames)
        train_speakers = {u.split("_")[0] for u in train.utterances}
        test_speakers = {u.split("_")[0] for u in test.utterances}
        assert not train_speakers & test_speakers

    def test_determinism(self):
        a = cp.generate_synthetic_corpus(TINY_SPEC, seed=13)
        b = cp.generate_synthetic_corpus(TINY_SPEC, seed=13)
        for wa, wb in zip(a.spoken, b.spoken):
            assert np.array_equal(wa.frames, wb.frames)
            assert wa.utterance_id == wb.utterance_id

    def test_synth_spec_json_round_trip(self):
        spec = dataclasses.replace(TINY_SPEC, unit_sequences=((0, 1), (1, 0)), n_words=2)
        again = cp.SynthSpec.from_json(spec.to_json())
        assert again == spec
