import numpy as np
import pytest

from phonembed.fileio import (
    FileFormatError,
    read_container,
    read_features,
    write_container,
    write_features,
)


class TestFeatureFiles:
    def test_binary_round_trip_is_bit_equal(self, tmp_path):
        rng = np.random.default_rng(0)
        frames = rng.normal(size=(17, 5)).astype(np.float32).astype(np.float64)
        path = tmp_path / "a.fbin"
        write_features(path, frames)
        back = read_features(path)
        assert back.dtype == np.float64
        assert np.array_equal(back, frames)

    def test_text_round_trip_matches_binary(self, tmp_path):
        rng = np.random.default_rng(1)
        frames = rng.normal(size=(4, 3))
        write_features(tmp_path / "a.fbin", frames)
        write_features(tmp_path / "a.ftxt", frames, text=True)
        assert np.array_equal(
            read_features(tmp_path / "a.fbin"), read_features(tmp_path / "a.ftxt")
        )

    def test_truncated_binary_rejected(self, tmp_path):
        path = tmp_path / "a.fbin"
        write_features(path, np.ones((6, 4)))
        raw = path.read_bytes()
        path.write_bytes(raw[:-7])
        with pytest.raises(FileFormatError, match="truncated"):
            read_features(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"\x00\x01\x02 not a feature file either way")
        with pytest.raises(FileFormatError):
            read_features(path)

    def test_text_header_body_mismatch(self, tmp_path):
        path = tmp_path / "a.ftxt"
        path.write_text("3 2\n1 2\n3 4\n")
        with pytest.raises(FileFormatError):
            read_features(path)


class TestContainer:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        tensors = {"a.w": rng.normal(size=(3, 4)), "b": rng.normal(size=(7,))}
        meta = {"kind": "test", "config": {"x": 1}}
        path = tmp_path / "c.bin"
        write_container(path, meta, tensors)
        meta2, tensors2 = read_container(path)
        assert meta2 == meta
        assert set(tensors2) == set(tensors)
        for name in tensors:
            assert np.array_equal(tensors[name], tensors2[name])

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "c.bin"
        write_container(path, {}, {"w": np.arange(10.0)})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FileFormatError, match="truncated"):
            read_container(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "c.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(FileFormatError, match="not a tensor container"):
            read_container(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "c.bin"
        write_container(path, {}, {"w": np.arange(3.0)})
        raw = bytearray(path.read_bytes())
        raw[8] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(FileFormatError, match="version"):
            read_container(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "c.bin"
        write_container(path, {}, {"w": np.arange(3.0)})
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FileFormatError, match="trailing"):
            read_container(path)
