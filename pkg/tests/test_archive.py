"""Tests for archive module -- adversarial archives on disk."""

import json

import numpy as np
import pytest

from transfergrad import archive
from transfergrad.attacks import AttackBudget, AttackConfig
from transfergrad.errors import ArchiveError, DataError


@pytest.fixture
def arrays():
    rng = np.random.default_rng(0)
    originals = rng.uniform(size=(3, 1, 4, 4)).astype(np.float32)
    delta = rng.choice([-1.0, 1.0], size=originals.shape).astype(np.float32) * 0.01
    adversarials = np.clip(originals + delta, 0.0, 1.0).astype(np.float32)
    labels = np.array([0, 2, 1])
    return originals, adversarials, labels


@pytest.fixture
def cfg():
    return AttackConfig("us_mm", 5, budget=AttackBudget(epsilon=0.02, iterations=2))


def _write(tmp_path, arrays, cfg):
    originals, adversarials, labels = arrays
    return archive.write_archive(
        archive.archive_dir(tmp_path, "mlp_a", "ours"),
        originals,
        adversarials,
        labels,
        surrogate="mlp_a",
        attack="ours",
        cfg=cfg,
        run_config_hash="abc123",
        seed=5,
    )


class TestWriteRead:
    def test_layout(self, tmp_path, arrays, cfg):
        directory = _write(tmp_path, arrays, cfg)
        assert directory == tmp_path / "archives" / "mlp_a__ours"
        names = sorted(p.name for p in directory.iterdir())
        assert names == [
            "adversarials.f32",
            "checksums.sha256",
            "labels.i32",
            "linf.f32",
            "manifest.json",
            "originals.f32",
        ]
        assert (directory / "labels.i32").stat().st_size == 3 * 4

    def test_manifest(self, tmp_path, arrays, cfg):
        manifest = json.loads((_write(tmp_path, arrays, cfg) / "manifest.json").read_text())
        assert manifest["family"] == "us_mm"
        assert manifest["epsilon"] == 0.02
        assert manifest["image_shape"] == [1, 4, 4]
        assert manifest["run_config_hash"] == "abc123"
        assert manifest["settings"]["scale"]["family"] == "uniform"
        assert manifest["max_linf"] == pytest.approx(0.01, abs=1e-6)

    def test_read_back(self, tmp_path, arrays, cfg):
        loaded = archive.read_archive(_write(tmp_path, arrays, cfg))
        np.testing.assert_array_equal(loaded.originals, arrays[0])
        np.testing.assert_array_equal(loaded.adversarials, arrays[1])
        np.testing.assert_array_equal(loaded.labels, arrays[2])
        assert loaded.labels.dtype == np.int64
        assert loaded.surrogate == "mlp_a" and loaded.attack == "ours"
        assert np.all(loaded.linf <= loaded.epsilon + 1e-6)

    def test_rewrite_replaces(self, tmp_path, arrays, cfg):
        directory = _write(tmp_path, arrays, cfg)
        (directory / "stale.txt").write_text("x")
        _write(tmp_path, arrays, cfg)
        assert not (directory / "stale.txt").exists()

    def test_list_archives(self, tmp_path, arrays, cfg):
        assert archive.list_archives(tmp_path) == []
        directory = _write(tmp_path, arrays, cfg)
        assert archive.list_archives(tmp_path) == [directory]

    def test_shape_mismatch(self, tmp_path, arrays, cfg):
        originals, adversarials, labels = arrays
        with pytest.raises(DataError, match="disagree"):
            archive.write_archive(
                tmp_path / "x",
                originals,
                adversarials[:2],
                labels,
                surrogate="a",
                attack="b",
                cfg=cfg,
                run_config_hash="",
                seed=0,
            )


class TestCorruption:
    def test_flipped_byte(self, tmp_path, arrays, cfg):
        directory = _write(tmp_path, arrays, cfg)
        raw = bytearray((directory / "adversarials.f32").read_bytes())
        raw[0] ^= 0x01
        (directory / "adversarials.f32").write_bytes(bytes(raw))
        with pytest.raises(ArchiveError, match="adversarials.f32"):
            archive.read_archive(directory)

    def test_truncated_without_verification(self, tmp_path, arrays, cfg):
        directory = _write(tmp_path, arrays, cfg)
        path = directory / "labels.i32"
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ArchiveError, match="expected shape"):
            archive.read_archive(directory, verify=False)

    def test_missing(self, tmp_path):
        with pytest.raises(DataError, match="archive not found"):
            archive.read_archive(tmp_path / "nothing")
