"""Measurements of the discriminator landscape and of generator quality.

All functions take a discriminator as any callable mapping a ``(B, d)`` batch
to a ``(B, 1)`` output (an :class:`~ganlab.nn.MlpNetwork` works) and only
read its parameters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .datasets import GaussianRingSpec

UNIT_TOL = 1e-12


def _eval(D, points):
    out = D(np.asarray(points, dtype=np.float64), track=False) if _takes_track(D) else D(points)
    return np.asarray(ad.value_of(out), dtype=np.float64).reshape(len(points), -1)[:, 0]


def _takes_track(D):
    from .nn import MlpNetwork

    return isinstance(D, MlpNetwork)


def random_direction(dim, rng):
    """Uniform direction on the unit sphere (normalised Gaussian draw)."""
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# landscape slices


@dataclass
class LandscapeSlice:
    anchor: np.ndarray
    direction: np.ndarray
    k: np.ndarray
    f: np.ndarray

    @property
    def center(self):
        return len(self.k) // 2


def k_grid(k_min, k_max, n_points):
    if n_points < 3 or n_points % 2 == 0:
        raise ValueError("n_points must be an odd number >= 3 so that k = 0 is on the grid")
    if not k_min < 0 < k_max or not np.isclose(k_min, -k_max):
        raise ValueError("the k-window must be symmetric around 0")
    k = np.linspace(k_min, k_max, n_points)
    k[n_points // 2] = 0.0
    return k


def slice_landscape(D, x, direction, k_min=-2.0, k_max=2.0, n_points=201) -> LandscapeSlice:
    """Evaluate ``f(k) = D(x + k * direction)`` on a uniform, symmetric k-grid."""
    x = np.asarray(x, dtype=np.float64).ravel()
    u = np.asarray(direction, dtype=np.float64).ravel()
    if abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
        raise ValueError(f"direction must have unit norm, got {np.linalg.norm(u)!r}")
    k = k_grid(k_min, k_max, n_points)
    f = _eval(D, x[None, :] + k[:, None] * u[None, :])
    # the centre is the anchor itself, evaluated on its own
    f[len(k) // 2] = _eval(D, x[None, :])[0]
    return LandscapeSlice(anchor=x, direction=u, k=k, f=f)


def slice_many(D, anchors, direction, k_min=-2.0, k_max=2.0, n_points=201):
    return [slice_landscape(D, a, direction, k_min, k_max, n_points) for a in np.atleast_2d(anchors)]


def _values(s):
    return np.asarray(s.f if isinstance(s, LandscapeSlice) else s, dtype=np.float64)


def monotonicity_score(s) -> float:
    """Share of consecutive differences agreeing with the dominant direction.

    1.0 means the slice is monotone; ties (zero differences) count for both
    directions.
    """
    f = _values(s)
    if f.size < 2:
        raise ValueError("need at least two values")
    d = np.diff(f)
    return float(max(np.mean(d >= 0), np.mean(d <= 0)))


def window(s: LandscapeSlice, half_width: int) -> LandscapeSlice:
    """The sub-slice within ``half_width`` grid steps of k = 0."""
    c = s.center
    lo, hi = max(0, c - half_width), min(len(s.k), c + half_width + 1)
    return LandscapeSlice(s.anchor, s.direction, s.k[lo:hi], s.f[lo:hi])


def default_slack(s):
    f = _values(s)
    return 1e-6 * float(f.max() - f.min())


def detect_local_maximum(s: LandscapeSlice, window_steps: int = 10, slack=None) -> bool:
    if window_steps < 1:
        raise ValueError("window must be >= 1")
    f = _values(s)
    c = len(f) // 2
    if slack is None:
        slack = default_slack(s)
    local = f[max(0, c - window_steps) : c + window_steps + 1]
    return bool(np.all(f[c] >= local - slack))


def basin_width(s: LandscapeSlice, drop=None, window_steps: int = 1) -> float:
    """Length of the interval around k = 0 on which ``f >= f(0) - drop``.

    Crossing points are linearly interpolated between grid nodes; a basin
    reaching the end of the grid is cut there.  Returns 0 when k = 0 is not
    a local maximum.  ``drop`` defaults to 10% of the slice's range.
    """
    f = _values(s)
    k = np.asarray(s.k, dtype=np.float64)
    if drop is None:
        drop = 0.1 * float(f.max() - f.min())
    if not detect_local_maximum(s, window_steps):
        return 0.0
    c = len(f) // 2
    level = f[c] - drop

    def edge(step):
        i = c
        while 0 <= i + step < len(f) and f[i + step] >= level:
            i += step
        j = i + step
        if not 0 <= j < len(f):
            return k[i]
        # f[i] >= level > f[j]
        t = (f[i] - level) / (f[i] - f[j])
        return k[i] + t * (k[j] - k[i])

    return float(edge(1) - edge(-1))


# ---------------------------------------------------------------------------
# gradient fields


@dataclass
class FieldSample:
    x: np.ndarray
    v: np.ndarray
    label: str = "neutral"
    finite: bool = True


def lattice(x_min, x_max, y_min, y_max, nx, ny):
    xs = np.linspace(x_min, x_max, nx)
    ys = np.linspace(y_min, y_max, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def loss_gradient(loss_fn, points):
    """Per-point gradient of a per-sample loss ``loss_fn(x_node) -> (B, 1)``."""
    x = ad.leaf(points)
    graph = ad.Graph()
    with graph:
        out = loss_fn(x)
        (g,) = ad.grad(ad.sum(out), [x])
    return np.asarray(g, dtype=np.float64)


def gradient_field(loss_fn, points, real=None, fake=None, region_radius=0.25):
    """Negative gradient of a per-sample generator loss at each 2-D point.

    ``loss_fn(x_node)`` returns per-sample losses.  Points within
    ``region_radius`` of a real (else fake) reference point are labelled
    ``real_region`` (``fake_region``).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != 2:
        raise ValueError("gradient fields are defined for 2-D data")
    # per-sample losses are independent, so one batched pass gives every point's gradient;
    # only a failing batch is redone point by point to flag the offending samples
    try:
        vs = -loss_gradient(loss_fn, points)
    except FloatingPointError:
        vs = None
    samples = []
    for i, p in enumerate(points):
        if vs is not None:
            v = vs[i]
        else:
            try:
                v = -loss_gradient(loss_fn, p[None, :])[0]
            except FloatingPointError:
                v = np.full(2, np.nan)
        ok = bool(np.isfinite(v).all())
        samples.append(FieldSample(p.copy(), v, _label(p, real, fake, region_radius), ok))
    return samples


def _label(p, real, fake, radius):
    for name, ref in (("real_region", real), ("fake_region", fake)):
        if ref is not None and len(ref) and np.min(np.linalg.norm(np.asarray(ref) - p, axis=1)) <= radius:
            return name
    return "neutral"


def path_integral(field_fn, waypoints, n_steps):
    """Line integral of ``field_fn`` along a polyline, trapezoid rule on ``n_steps`` panels.

    Panels are spread over the legs in proportion to their length.
    """
    pts = np.asarray(waypoints, dtype=np.float64)
    legs = np.diff(pts, axis=0)
    lengths = np.linalg.norm(legs, axis=1)
    total_len = lengths.sum()
    if total_len == 0:
        return 0.0
    total = 0.0
    for start, leg, length in zip(pts[:-1], legs, lengths):
        if length == 0:
            continue
        m = max(1, int(round(n_steps * length / total_len)))
        t = np.linspace(0.0, 1.0, m + 1)
        v = np.asarray(field_fn(start[None, :] + t[:, None] * leg[None, :]), dtype=np.float64)
        proj = v @ leg
        total += float(np.sum(0.5 * (proj[1:] + proj[:-1])) / m)
    return total


def path_integral_check(field_fn, x0, x1, path_a=(), path_b=(), n_steps=10_000):
    """Integrate the field from ``x0`` to ``x1`` along two polylines.

    ``path_a``/``path_b`` list the intermediate waypoints (empty: straight
    line).  For a conservative field both values equal the potential drop.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    da = path_integral(field_fn, [x0, *path_a, x1], n_steps)
    db = path_integral(field_fn, [x0, *path_b, x1], n_steps)
    return da, db


# ---------------------------------------------------------------------------
# forgetting and coverage


@dataclass
class ForgettingTrace:
    fakes: np.ndarray
    scores: np.ndarray  # (checkpoints, images)
    iterations: list = field(default_factory=list)

    def per_image_variance(self):
        # shifting by the first checkpoint keeps identical rows at exactly zero
        return (self.scores - self.scores[0]).var(axis=0)

    def mean_variance(self):
        return float(self.per_image_variance().mean())


def forgetting_trace(checkpoints, frozen_fakes, iterations=None) -> ForgettingTrace:
    """Scores of one frozen fake batch under every discriminator checkpoint."""
    if len(checkpoints) < 2:
        raise ValueError("need at least two checkpoints")
    fakes = np.array(frozen_fakes, dtype=np.float64)
    fakes.setflags(write=False)
    scores = np.stack([_eval(D, fakes) for D in checkpoints])
    return ForgettingTrace(fakes, scores, list(iterations or range(len(checkpoints))))


def nearest_mode(samples, spec: GaussianRingSpec):
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    d = np.linalg.norm(samples[:, None, :] - spec.centers()[None, :, :], axis=2)
    return d.argmin(axis=1), d.min(axis=1)


def mode_coverage(samples, spec: GaussianRingSpec, min_frac=0.02):
    """Count modes that get at least ``min_frac`` of the samples at mean distance <= 3 std.

    Returns ``(n_modes_hit, counts)``.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    counts = np.zeros(spec.n_modes, dtype=int)
    if len(samples) == 0:
        return 0, counts
    idx, dist = nearest_mode(samples, spec)
    counts = np.bincount(idx, minlength=spec.n_modes)
    hit = 0
    for m in range(spec.n_modes):
        if counts[m] == 0 or counts[m] < min_frac * len(samples):
            continue
        if dist[idx == m].mean() <= 3.0 * spec.mode_std:
            hit += 1
    return hit, counts


# ---------------------------------------------------------------------------
# reports and CSV


@dataclass
class DiagnosticsReport:
    """Per-checkpoint measurements; every list entry is ``(iteration, payload)``."""

    slices: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    monotonicity: list = field(default_factory=list)
    local_max: list = field(default_factory=list)
    basin_widths: list = field(default_factory=list)
    coverage: list = field(default_factory=list)
    forgetting_variance: list = field(default_factory=list)


def fmt(x):
    """Shortest repr that round-trips to the same float."""
    return repr(float(x))


def write_slices_csv(path, slices):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["anchor_id", "k", "score"])
        for i, s in enumerate(slices):
            for k, v in zip(s.k, s.f):
                w.writerow([i, fmt(k), fmt(v)])


def write_field_csv(path, samples):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x", "y", "vx", "vy", "label"])
        for s in samples:
            w.writerow([fmt(s.x[0]), fmt(s.x[1]), fmt(s.v[0]), fmt(s.v[1]), s.label])


def write_forgetting_csv(path, trace: ForgettingTrace):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["checkpoint", "image_id", "score"])
        for it, row in zip(trace.iterations, trace.scores):
            for j, v in enumerate(row):
                w.writerow([it, j, fmt(v)])
