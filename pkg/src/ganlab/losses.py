"""Discriminator and generator losses for the GAN variants under study.

Four variants share one code path:

==========  =====================================  =======================
kind        discriminator penalty                  generator loss
==========  =====================================  =======================
gan_ns      none                                   E[-log D(G(z))]
gan_r1      lambda * E_x[|grad D(x)|^2]            E[-log D(G(z))]
gan_0gp     lambda * E_u[|grad D(u)|^2]            E[-log D(G(z))]
wgan_gp     lambda * E_u[(|grad D(u)| - 1)^2]      -E[D(G(z))]
==========  =====================================  =======================

``u`` are uniform interpolates between paired real and fake points.  The
real-sample term of the discriminator loss is weighted by ``gamma_imb``
(``gamma_imb = 1`` is the unweighted loss).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

KINDS = ("gan_ns", "wgan_gp", "gan_r1", "gan_0gp")

# sqrt(sum g^2 + GRAD_NORM_EPS) keeps the 1GP norm differentiable at 0
GRAD_NORM_EPS = 1e-12


class LossError(FloatingPointError):
    def __init__(self, term, value):
        self.term = term
        super().__init__(f"non-finite loss term '{term}': {value}")


@dataclass(frozen=True)
class GanVariant:
    kind: str = "gan_ns"
    lam: float = 0.0
    gamma_imb: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown GAN variant {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"variant.lambda must be >= 0, got {self.lam}")
        if self.lam == 0 and self.kind == "wgan_gp":
            raise ValueError("variant.lambda = 0 is only meaningful for gan_ns-style losses")
        if not np.isfinite(self.gamma_imb) or self.gamma_imb < 1:
            raise ValueError(f"variant.gamma_imb must be >= 1, got {self.gamma_imb}")

    @property
    def wasserstein(self):
        return self.kind == "wgan_gp"

    @property
    def output_activation(self):
        return "linear" if self.wasserstein else "sigmoid"


@dataclass(frozen=True)
class InterpolationDraw:
    alpha: np.ndarray
    u: np.ndarray


def interpolate(x, y, alpha):
    """Convex combination ``alpha * x + (1 - alpha) * y`` row by row."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1, 1)
    return alpha * x + (1.0 - alpha) * y


def sample_interpolates(real_batch, fake_batch, rng) -> InterpolationDraw:
    """Pair the i-th real with the i-th fake point and draw one alpha per pair."""
    real = np.asarray(real_batch, dtype=np.float64)
    fake = np.asarray(fake_batch, dtype=np.float64)
    if real.shape != fake.shape:
        raise ValueError(f"real and fake batches must match, got {real.shape} and {fake.shape}")
    alpha = rng.uniform(0.0, 1.0, size=(real.shape[0], 1))
    return InterpolationDraw(alpha=alpha, u=interpolate(real, fake, alpha))


def input_gradients(D, points):
    """Per-point gradient of D at ``points`` as a node that is differentiable w.r.t. D's weights."""
    x = ad.leaf(points)
    (g,) = ad.grad(ad.sum(D(x)), [x], create_graph=True)
    return g


def gradient_penalty(variant: GanVariant, D, real, fake, rng):
    """The variant's penalty term (without the lambda factor) as a node."""
    if variant.kind == "gan_ns":
        raise ValueError("gan_ns has no gradient penalty")
    if variant.kind == "gan_r1":
        points = real
    else:
        points = sample_interpolates(real, fake, rng).u
    sq_norm = ad.sum(ad.square(input_gradients(D, points)), axis=1)
    if variant.kind == "wgan_gp":
        norm = ad.sqrt(ad.add(sq_norm, GRAD_NORM_EPS))
        return ad.mean(ad.square(ad.sub(norm, 1.0)))
    return ad.mean(sq_norm)


def _check(term, node):
    v = float(ad.value_of(node))
    if not np.isfinite(v):
        raise LossError(term, v)
    return node


def discriminator_terms(variant: GanVariant, D, real_batch, fake_batch, rng):
    """Return a dict of nodes ``real``, ``fake``, ``penalty`` (or None) and ``total``."""
    real = np.asarray(real_batch, dtype=np.float64)
    fake = np.asarray(fake_batch, dtype=np.float64)
    if real.ndim != 2 or fake.ndim != 2 or real.shape[0] == 0 or fake.shape[0] == 0:
        raise ValueError("real and fake batches must be non-empty 2-D arrays")
    if real.shape[1] != fake.shape[1]:
        raise ValueError("real and fake batches differ in dimensionality")
    try:
        d_real = D(real)
        d_fake = D(fake)
        if variant.wasserstein:
            l_real = ad.neg(ad.mean(d_real))
            l_fake = ad.mean(d_fake)
        else:
            l_real = ad.mean(ad.neg(ad.log(d_real)))
            l_fake = ad.mean(ad.neg(ad.log(ad.sub(1.0, d_fake))))
    except ad.NonFiniteError as exc:
        raise LossError("forward", str(exc)) from exc
    _check("real", l_real)
    _check("fake", l_fake)
    total = l_real if variant.gamma_imb == 1 else ad.mul(variant.gamma_imb, l_real)
    total = ad.add(total, l_fake)
    penalty = None
    if variant.kind != "gan_ns" and variant.lam > 0:
        penalty = _check("penalty", gradient_penalty(variant, D, real, fake, rng))
        total = ad.add(total, ad.mul(variant.lam, penalty))
    _check("total", total)
    return {"real": l_real, "fake": l_fake, "penalty": penalty, "total": total}


def discriminator_loss(variant: GanVariant, D, real_batch, fake_batch, rng):
    return discriminator_terms(variant, D, real_batch, fake_batch, rng)["total"]


def generator_loss_per_sample(variant: GanVariant, D, fake_batch):
    """Column of per-sample generator losses; the batch loss is their mean."""
    out = D(fake_batch)
    if variant.wasserstein:
        return ad.neg(out)
    return ad.neg(ad.log(out))


def generator_loss(variant: GanVariant, D, fake_batch):
    try:
        loss = ad.mean(generator_loss_per_sample(variant, D, fake_batch))
    except ad.NonFiniteError as exc:
        raise LossError("generator", str(exc)) from exc
    return _check("generator", loss)
