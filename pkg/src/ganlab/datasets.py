"""Target distributions: a ring of Gaussians and an IDX (MNIST) reader."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class GaussianRingSpec:
    n_modes: int = 8
    radius: float = 2.0
    mode_std: float = 0.05

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("ring needs at least one mode")
        if self.radius < 0 or self.mode_std < 0:
            raise ValueError("radius and mode_std must be non-negative")

    def centers(self):
        angles = 2.0 * np.pi * np.arange(self.n_modes) / self.n_modes
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def sample_ring(spec: GaussianRingSpec, n: int, rng, return_modes=False):
    """Draw ``n`` points: a uniformly chosen center plus isotropic Gaussian noise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    modes = rng.integers(spec.n_modes, size=n)
    points = spec.centers()[modes] + spec.mode_std * rng.standard_normal((n, 2))
    if return_modes:
        return points, modes
    return points


def sample_noise(dim: int, n: int, rng):
    return rng.standard_normal((n, dim))


# ---------------------------------------------------------------------------
# IDX files


class IdxError(ValueError):
    pass


class BadMagic(IdxError):
    pass


class TruncatedFile(IdxError):
    pass


class CountMismatch(IdxError):
    pass


@dataclass
class IdxDataset:
    images: np.ndarray  # (N, rows, cols) uint8
    labels: np.ndarray  # (N,) uint8
    scale: str = "unit"

    def __len__(self):
        return len(self.images)

    def flat(self):
        """Images as ``(N, rows*cols)`` float64, scaled to [0, 1] for ``scale='unit'``."""
        x = self.images.reshape(len(self.images), -1).astype(np.float64)
        return x / 255.0 if self.scale == "unit" else x


def _read_header(data, magic, n_dims, path):
    need = 4 * (1 + n_dims)
    if len(data) < need:
        raise TruncatedFile(f"{path}: header truncated ({len(data)} bytes)")
    got = struct.unpack_from(">I", data)[0]
    if got != magic:
        raise BadMagic(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    return struct.unpack_from(f">{n_dims}I", data, 4), need


def read_idx_images(path, limit=None):
    with open(path, "rb") as f:
        data = f.read()
    (count, rows, cols), off = _read_header(data, IMAGE_MAGIC, 3, path)
    n = count if limit is None else min(count, int(limit))
    size = rows * cols
    if len(data) - off < count * size:
        raise TruncatedFile(f"{path}: {count} images declared, payload holds {(len(data) - off) // max(size, 1)}")
    images = np.frombuffer(data, dtype=np.uint8, count=n * size, offset=off)
    return images.reshape(n, rows, cols).copy(), count


def read_idx_labels(path, limit=None):
    with open(path, "rb") as f:
        data = f.read()
    (count,), off = _read_header(data, LABEL_MAGIC, 1, path)
    n = count if limit is None else min(count, int(limit))
    if len(data) - off < count:
        raise TruncatedFile(f"{path}: {count} labels declared, payload holds {len(data) - off}")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=off).copy(), count


def load_idx(images_path, labels_path, limit=None, scale="unit") -> IdxDataset:
    if scale not in ("unit", "raw"):
        raise ValueError(f"scale must be 'unit' or 'raw', got {scale!r}")
    images, n_images = read_idx_images(images_path, limit)
    labels, n_labels = read_idx_labels(labels_path, limit)
    if n_images != n_labels:
        raise CountMismatch(f"{n_images} images but {n_labels} labels")
    return IdxDataset(images=images, labels=labels, scale=scale)


def write_idx(images_path, labels_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())
