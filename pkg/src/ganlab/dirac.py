"""Dirac GAN: a one-dimensional game with the real mass at the origin.

The generator is a single number ``theta`` (the position of the fake point).
The discriminator is either linear, ``D(x) = psi * x`` with ``psi`` in
[-1, 1], or a one-hidden-layer network without biases,
``D(x) = psi1 . act(psi0 * x)``, with every weight in [-1, 1].  The game is
zero sum::

    L_D = -D(0) + D(theta),    L_G = -L_D

and its unique equilibrium is ``theta = psi = 0``.
"""

from __future__ import annotations

import csv
import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import optim
from .nn import MlpConfig, MlpNetwork, activate

DIVERGENCE_LIMIT = 1e6
MAX_GRID_POINTS = 50_000_000


@dataclass
class DiracConfig:
    disc_kind: str = "linear"  # "linear" or "mlp"
    n_hidden: int = 2
    activation: str = "leaky_relu"
    slope: float = 0.2
    optimizer: str = "sgd"
    lr: float = 0.1
    penalty: str = "none"  # "none" or "r1"
    lam: float = 0.0
    replay_old_fake: bool = False
    iters: int = 5000
    theta0: float = 0.5
    psi0: float = 0.5
    seed: int = 0
    snapshot_every: int = 50
    curve_range: float = 2.0
    curve_points: int = 201

    def __post_init__(self):
        if self.disc_kind not in ("linear", "mlp"):
            raise ValueError(f"disc_kind must be 'linear' or 'mlp', got {self.disc_kind!r}")
        if self.penalty not in ("none", "r1"):
            raise ValueError(f"penalty must be 'none' or 'r1', got {self.penalty!r}")
        if self.lam < 0:
            raise ValueError("penalty weight must be >= 0")
        if self.iters < 0 or self.n_hidden < 1:
            raise ValueError("iters must be >= 0 and n_hidden >= 1")


class DiracState:
    """Generator position plus a box-constrained discriminator."""

    def __init__(self, theta, disc):
        self.theta = theta if isinstance(theta, ad.Node) else ad.leaf(float(theta))
        self.disc = disc
        self.clamp()

    @classmethod
    def linear(cls, theta, psi):
        return cls(theta, ad.leaf(float(psi)))

    @classmethod
    def mlp(cls, theta, psi0, psi1, activation="leaky_relu", slope=0.2):
        psi0 = np.asarray(psi0, dtype=np.float64).reshape(1, -1)
        psi1 = np.asarray(psi1, dtype=np.float64).reshape(-1, 1)
        cfg = MlpConfig(
            input_dim=1,
            hidden_dims=(psi0.shape[1],),
            output_dim=1,
            hidden_activation=activation,
            output_activation="linear",
            slope=slope,
            bias=False,
        )
        return cls(theta, MlpNetwork(cfg, [psi0, psi1]))

    @property
    def is_linear(self):
        return isinstance(self.disc, ad.Node)

    def disc_params(self):
        return [self.disc] if self.is_linear else self.disc.params

    def disc_flat(self):
        return np.concatenate([np.ravel(p.value) for p in self.disc_params()])

    def clamp(self):
        for p in self.disc_params():
            np.clip(p.value, -1.0, 1.0, out=p.value)

    def D(self, x):
        """Discriminator output at a scalar ``x`` (number or node), as a 0-d node."""
        if self.is_linear:
            return ad.mul(self.disc, x)
        out = self.disc(ad.reshape(x, (1, 1)) if isinstance(x, ad.Node) else np.array([[float(x)]]))
        return ad.reshape(out, ())

    def curve(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        if self.is_linear:
            return float(self.disc.value) * xs
        return self.disc(xs.reshape(-1, 1), track=False).ravel()


def dirac_losses(state: DiracState, fake=None):
    """``(L_D, L_G)`` with ``L_D = -D(0) + D(theta)`` and ``L_G = -L_D``."""
    fake = state.theta if fake is None else fake
    loss_d = ad.add(ad.neg(state.D(0.0)), state.D(fake))
    return loss_d, ad.neg(loss_d)


def r1_penalty(state: DiracState):
    """Squared slope of D at the real point, differentiable in D's weights."""
    x = ad.leaf(0.0)
    (g,) = ad.grad(state.D(x), [x], create_graph=True)
    return ad.square(g)


# ---------------------------------------------------------------------------
# optimal discriminator for the one-hidden-layer family


def _act(name, v, slope=0.2):
    return np.asarray(activate(name, np.asarray(v, dtype=np.float64), slope))


def dirac_objective(psi0, psi1, y0, activation, slope=0.2):
    """``D(0) - D(y0)``; what an optimal discriminator maximises."""
    psi0 = np.asarray(psi0, dtype=np.float64)
    psi1 = np.asarray(psi1, dtype=np.float64)
    s0 = _act(activation, 0.0, slope)
    return np.sum(psi1 * (s0 - _act(activation, psi0 * y0, slope)), axis=-1)


def optimal_discriminator_closed_form(y0, n, activation="leaky_relu"):
    """``psi0 = sign(y0) * 1``, ``psi1 = -1``; gives ``D(x) = -n act(sign(y0) x)``."""
    if y0 == 0:
        raise ValueError("y0 = 0: real and fake points coincide, nothing to separate")
    return np.full(n, float(np.sign(y0))), np.full(n, -1.0)


def brute_force_optimal(y0, n, activation="leaky_relu", grid_step=0.05, slope=0.2):
    """Exhaustive grid search of ``D(0) - D(y0)`` over ``[-1, 1]^(2n)``.

    Returns ``(psi0, psi1, objective)``.  Ties go to the lexicographically
    smallest ``(psi0_1, .., psi0_n, psi1_1, .., psi1_n)``.
    """
    m = int(round(2.0 / grid_step)) + 1
    if m ** (2 * n) > MAX_GRID_POINTS:
        raise ValueError(f"grid of {m}^{2 * n} points is too large; use n <= 2 or a coarser step")
    axis = np.linspace(-1.0, 1.0, m)
    # objective separates over hidden units: value[i, j] for psi0 = axis[i], psi1 = axis[j]
    s0 = _act(activation, 0.0, slope)
    unit = axis[None, :] * (s0 - _act(activation, axis * y0, slope))[:, None]
    total = np.zeros((m,) * (2 * n))
    for i in range(n):
        shape = [1] * (2 * n)
        shape[i] = m
        shape[n + i] = m
        total = total + unit.reshape(shape)
    flat = int(np.argmax(total))
    idx = np.unravel_index(flat, total.shape)
    psi0 = axis[list(idx[:n])]
    psi1 = axis[list(idx[n:])]
    return psi0, psi1, float(total[idx])


def brute_force_enumerate(y0, n, activation="leaky_relu", grid_step=0.05, slope=0.2):
    """Same search as :func:`brute_force_optimal` by explicit enumeration (small grids only)."""
    m = int(round(2.0 / grid_step)) + 1
    if m ** (2 * n) > 2_000_000:
        raise ValueError("enumeration grid too large")
    axis = np.linspace(-1.0, 1.0, m)
    best, arg = -np.inf, None
    for params in itertools.product(axis, repeat=2 * n):
        v = float(dirac_objective(np.array(params[:n]), np.array(params[n:]), y0, activation, slope))
        if v > best:
            best, arg = v, params
    return np.array(arg[:n]), np.array(arg[n:]), best


def discriminator_curve(psi0, psi1, xs, activation="leaky_relu", slope=0.2):
    xs = np.asarray(xs, dtype=np.float64)
    psi0 = np.asarray(psi0, dtype=np.float64)
    psi1 = np.asarray(psi1, dtype=np.float64)
    return _act(activation, xs[:, None] * psi0[None, :], slope) @ psi1


# ---------------------------------------------------------------------------
# training


@dataclass
class DiracHistory:
    config: DiracConfig
    theta: list = field(default_factory=list)
    disc: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (iteration, D values on curve_x)
    curve_x: np.ndarray = None
    diverged: bool = False

    @property
    def radius_sq(self):
        """``theta^2 + |disc params|^2`` per recorded iteration."""
        return np.array([t * t + float(np.sum(np.square(d))) for t, d in zip(self.theta, self.disc)])

    def final_curve(self):
        return self.snapshots[-1][1]


def init_state(config: DiracConfig) -> DiracState:
    if config.disc_kind == "linear":
        return DiracState.linear(config.theta0, config.psi0)
    rng = np.random.default_rng(config.seed)
    psi0 = rng.uniform(-1.0, 1.0, config.n_hidden)
    psi1 = rng.uniform(-1.0, 1.0, config.n_hidden)
    return DiracState.mlp(config.theta0, psi0, psi1, config.activation, config.slope)


def train_dirac(config: DiracConfig, state: DiracState = None) -> DiracHistory:
    """Alternate one discriminator and one generator step for ``config.iters`` iterations.

    The discriminator is projected back onto [-1, 1] after every step.  With
    ``replay_old_fake`` the discriminator also sees the previous iteration's
    fake position; its loss averages the two fake terms.
    """
    state = state or init_state(config)
    d_opt = optim.OptimState(config.optimizer, config.lr)
    g_opt = optim.OptimState(config.optimizer, config.lr)
    hist = DiracHistory(config)
    hist.curve_x = np.linspace(-config.curve_range, config.curve_range, config.curve_points)
    old_fake = float(state.theta.value)
    graph = ad.Graph()

    def record(t):
        hist.theta.append(float(state.theta.value))
        hist.disc.append(state.disc_flat())
        if t % config.snapshot_every == 0 or t == config.iters:
            hist.snapshots.append((t, state.curve(hist.curve_x)))

    with graph:
        for t in range(config.iters + 1):
            mark = graph.mark()
            loss_d, _ = dirac_losses(state, fake=float(state.theta.value))
            hist.objective.append(float(loss_d.value))
            record(t)
            if t == config.iters:
                graph.truncate(mark)
                break
            # discriminator step
            if config.replay_old_fake:
                fakes = ad.mul(0.5, ad.add(state.D(float(state.theta.value)), state.D(old_fake)))
                loss_d = ad.add(ad.neg(state.D(0.0)), fakes)
            if config.penalty == "r1" and config.lam > 0:
                loss_d = ad.add(loss_d, ad.mul(config.lam, r1_penalty(state)))
            params = state.disc_params()
            grads = ad.grad(loss_d, params)
            optim.step(params, grads, d_opt)
            state.clamp()
            graph.truncate(mark)
            # generator step
            old_fake = float(state.theta.value)
            _, loss_g = dirac_losses(state)
            (g_theta,) = ad.grad(loss_g, [state.theta])
            optim.step([state.theta], [g_theta], g_opt)
            graph.truncate(mark)
            if not abs(float(state.theta.value)) <= DIVERGENCE_LIMIT:
                hist.diverged = True
                record(t + 1)
                break
    return hist


def write_history_csv(path, hist: DiracHistory):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iter", "theta", "disc_param_norm", "objective"])
        for i, (th, d, obj) in enumerate(zip(hist.theta, hist.disc, hist.objective)):
            w.writerow([i, repr(float(th)), repr(float(np.linalg.norm(d))), repr(float(obj))])


def write_curves(directory, hist: DiracHistory):
    os.makedirs(directory, exist_ok=True)
    paths = []
    for it, values in hist.snapshots:
        path = os.path.join(directory, f"curve_{it:06d}.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["x", "D"])
            for x, v in zip(hist.curve_x, values):
                w.writerow([repr(float(x)), repr(float(v))])
        paths.append(path)
    return paths
