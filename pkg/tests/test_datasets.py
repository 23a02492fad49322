import struct

import numpy as np
import pytest

from ganlab.datasets import (
    BadMagic,
    CountMismatch,
    GaussianRingSpec,
    TruncatedFile,
    load_idx,
    read_idx_images,
    sample_noise,
    sample_ring,
    write_idx,
)


class TestRing:
    def test_first_center(self):
        np.testing.assert_allclose(GaussianRingSpec(radius=2.0).centers()[0], [2.0, 0.0])

    def test_centers_equally_spaced(self):
        c = GaussianRingSpec(radius=3.0).centers()
        np.testing.assert_allclose(np.linalg.norm(c, axis=1), 3.0)
        gaps = np.linalg.norm(c - np.roll(c, 1, axis=0), axis=1)
        np.testing.assert_allclose(gaps, gaps[0])

    def test_zero_std_hits_centers_exactly(self, rng):
        spec = GaussianRingSpec(mode_std=0.0)
        x, modes = sample_ring(spec, 100, rng, return_modes=True)
        np.testing.assert_array_equal(x, spec.centers()[modes])

    def test_mean_is_near_origin(self):
        rng = np.random.default_rng(0)
        spec = GaussianRingSpec()
        x = sample_ring(spec, 10**6, rng)
        spread = np.sqrt(spec.radius**2 / 2 + spec.mode_std**2)
        assert np.all(np.abs(x.mean(axis=0)) < 3 * spread / 1000)

    def test_nearest_center_recovers_mode(self, rng):
        spec = GaussianRingSpec(radius=2.0, mode_std=0.2)
        x, modes = sample_ring(spec, 20000, rng, return_modes=True)
        nearest = np.argmin(((x[:, None] - spec.centers()[None]) ** 2).sum(-1), axis=1)
        assert np.mean(nearest == modes) >= 0.999

    def test_rejects_empty_request(self, rng):
        with pytest.raises(ValueError):
            sample_ring(GaussianRingSpec(), 0, rng)

    @pytest.mark.parametrize("kw", [{"n_modes": 0}, {"radius": -1.0}, {"mode_std": -0.1}])
    def test_rejects_bad_spec(self, kw):
        with pytest.raises(ValueError):
            GaussianRingSpec(**kw)


class TestNoise:
    def test_unit_variance(self):
        z = sample_noise(2, 10**6, np.random.default_rng(1))
        np.testing.assert_allclose(z.var(axis=0), 1.0, atol=0.01)

    def test_seeded(self):
        a = sample_noise(3, 5, np.random.default_rng(4))
        b = sample_noise(3, 5, np.random.default_rng(4))
        assert a.tobytes() == b.tobytes()

    def test_empty_batch(self, rng):
        assert sample_noise(2, 0, rng).shape == (0, 2)


@pytest.fixture
def idx_files(tmp_path, rng):
    images = rng.integers(0, 256, size=(10, 28, 28), dtype=np.uint8)
    images[0, 0, 0] = 255
    labels = rng.integers(0, 10, size=10, dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(ip, lp, images, labels)
    return ip, lp, images, labels


class TestIdx:
    def test_round_trip(self, idx_files):
        ip, lp, images, labels = idx_files
        ds = load_idx(ip, lp, scale="raw")
        np.testing.assert_array_equal(ds.images, images)
        np.testing.assert_array_equal(ds.labels, labels)

    def test_header_dims(self, tmp_path):
        ip = tmp_path / "h.idx"
        ip.write_bytes(struct.pack(">IIII", 0x803, 3, 28, 28) + bytes(3 * 784))
        images, count = read_idx_images(ip)
        assert count == 3 and images.shape == (3, 28, 28)

    def test_limit(self, idx_files):
        ip, lp, _, _ = idx_files
        assert len(load_idx(ip, lp, limit=4)) == 4

    def test_unit_scale(self, idx_files):
        ip, lp, _, _ = idx_files
        flat = load_idx(ip, lp).flat()
        assert flat.shape == (10, 784)
        assert flat[0, 0] == 1.0 and flat.min() >= 0.0 and flat.max() <= 1.0

    def test_bad_magic(self, idx_files):
        ip, lp, _, _ = idx_files
        with pytest.raises(BadMagic):
            load_idx(lp, lp)

    def test_truncated_payload(self, idx_files):
        ip, lp, _, _ = idx_files
        ip.write_bytes(ip.read_bytes()[:-1])
        with pytest.raises(TruncatedFile):
            load_idx(ip, lp)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "short.idx"
        p.write_bytes(b"\x00\x00\x08")
        with pytest.raises(TruncatedFile):
            read_idx_images(p)

    def test_count_mismatch(self, idx_files, tmp_path, rng):
        ip, _, _, _ = idx_files
        ip2, lp2 = tmp_path / "a.idx", tmp_path / "b.idx"
        write_idx(ip2, lp2, np.zeros((1, 28, 28)), np.zeros(9))
        with pytest.raises(CountMismatch):
            load_idx(ip, lp2)

    def test_unknown_scale(self, idx_files):
        ip, lp, _, _ = idx_files
        with pytest.raises(ValueError):
            load_idx(ip, lp, scale="zscore")
