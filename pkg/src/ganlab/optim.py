"""First-order optimizers written against plain parameter arrays.

``params`` is a list of autodiff leaves (or bare arrays); ``grads`` the
matching list of gradient arrays.  Updates happen in place.

The momentum rule keeps the learning rate inside the accumulator::

    g_t = momentum * g_{t-1} + lr * grad_t
    theta <- theta - g_t

so ``momentum = 0`` is exactly plain SGD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

KINDS = ("sgd", "sgd_momentum", "adam")


class NonFiniteGradient(FloatingPointError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"non-finite gradient for parameter {index}; step aborted")


@dataclass
class OptimState:
    kind: str = "sgd"
    lr: float = 3e-3
    momentum: float = 0.0
    beta1: float = 0.5
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    buffers: list = field(default_factory=list)
    second: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {KINDS}")
        if not self.lr > 0:
            raise ValueError(f"optimizer.lr must be > 0, got {self.lr}")
        for name in ("momentum", "beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"optimizer.{name} must lie in [0, 1), got {v}")

    def state_dict(self):
        return {
            "t": self.t,
            "buffers": [b.copy() for b in self.buffers],
            "second": [b.copy() for b in self.second],
        }

    def load_state_dict(self, d):
        self.t = int(d["t"])
        self.buffers = [np.array(b, dtype=np.float64) for b in d["buffers"]]
        self.second = [np.array(b, dtype=np.float64) for b in d["second"]]


def _values(params):
    return [p.value if isinstance(p, ad.Node) else p for p in params]


def _checked(params, grads):
    vals = _values(params)
    if len(vals) != len(grads):
        raise ValueError("params and grads differ in length")
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    for i, (v, g) in enumerate(zip(vals, grads)):
        if g.shape != v.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {v.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteGradient(i)
    return vals, grads


def _zeros_if_empty(bufs, vals):
    if not bufs:
        bufs.extend(np.zeros_like(v) for v in vals)
    return bufs


def sgd_step(params, grads, state: OptimState):
    vals, grads = _checked(params, grads)
    for v, g in zip(vals, grads):
        v -= state.lr * g
    state.t += 1


def momentum_step(params, grads, state: OptimState):
    vals, grads = _checked(params, grads)
    bufs = _zeros_if_empty(state.buffers, vals)
    for v, g, b in zip(vals, grads, bufs):
        b *= state.momentum
        b += state.lr * g
        v -= b
    state.t += 1


def adam_step(params, grads, state: OptimState):
    vals, grads = _checked(params, grads)
    m = _zeros_if_empty(state.buffers, vals)
    s = _zeros_if_empty(state.second, vals)
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for v, g, mi, si in zip(vals, grads, m, s):
        mi *= state.beta1
        mi += (1.0 - state.beta1) * g
        si *= state.beta2
        si += (1.0 - state.beta2) * g * g
        v -= state.lr * (mi / c1) / (np.sqrt(si / c2) + state.eps)


_STEPS = {"sgd": sgd_step, "sgd_momentum": momentum_step, "adam": adam_step}


def step(params, grads, state: OptimState):
    """Dispatch on ``state.kind``."""
    _STEPS[state.kind](params, grads, state)
