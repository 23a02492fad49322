"""Online elastic weight consolidation for the discriminator.

Training is cut into chunks of ``tau`` discriminator steps; each chunk is one
task.  During a chunk the squared loss gradients are averaged into a diagonal
importance estimate.  At the chunk boundary the estimate is mixed into the
running importance and the current weights become the new anchor::

    omega <- alpha * omega_hat + (1 - alpha) * omega
    penalty = lambda * sum_i omega_i * (theta_i - anchor_i)^2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


class ChunkError(RuntimeError):
    pass


@dataclass
class EwcState:
    alpha: float = 0.5
    lam: float = 0.0
    tau: int = 100
    omega: list = field(default_factory=list)
    anchor: list = field(default_factory=list)
    accum: list = field(default_factory=list)
    count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"ewc.alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ValueError(f"ewc.lambda must be >= 0, got {self.lam}")
        if int(self.tau) < 1:
            raise ValueError(f"ewc.tau must be >= 1, got {self.tau}")

    @property
    def anchored(self):
        return bool(self.anchor)

    def omega_hat(self):
        """Mean squared gradient over the chunk so far."""
        if self.count == 0:
            return [np.zeros_like(a) for a in self.accum]
        return [a / self.count for a in self.accum]

    def state_dict(self):
        return {
            "omega": [o.copy() for o in self.omega],
            "anchor": [a.copy() for a in self.anchor],
            "accum": [a.copy() for a in self.accum],
            "count": self.count,
        }

    def load_state_dict(self, d):
        self.omega = [np.array(o, dtype=np.float64) for o in d["omega"]]
        self.anchor = [np.array(a, dtype=np.float64) for a in d["anchor"]]
        self.accum = [np.array(a, dtype=np.float64) for a in d["accum"]]
        self.count = int(d["count"])


def ewc_accumulate(state: EwcState, grads):
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if not state.accum:
        state.accum = [np.zeros_like(g) for g in grads]
    for a, g in zip(state.accum, grads):
        a += g * g
    state.count += 1


def ewc_end_chunk(state: EwcState, current_params):
    if state.count != state.tau:
        raise ChunkError(f"chunk closed after {state.count} steps, expected tau={state.tau}")
    values = [np.array(ad.value_of(p), dtype=np.float64) for p in current_params]
    est = state.omega_hat()
    if not state.omega:
        state.omega = [np.zeros_like(v) for v in values]
    state.omega = [state.alpha * h + (1.0 - state.alpha) * o for h, o in zip(est, state.omega)]
    state.anchor = values
    state.accum = [np.zeros_like(v) for v in values]
    state.count = 0


def ewc_penalty(state: EwcState, current_params):
    """``lam * sum omega * (theta - anchor)^2`` as a node differentiable in the parameters."""
    if not state.anchored:
        raise ChunkError("EWC penalty requested before the first anchor was set")
    total = None
    for p, w, a in zip(current_params, state.omega, state.anchor):
        term = ad.sum(ad.mul(w, ad.square(ad.sub(p, a))))
        total = term if total is None else ad.add(total, term)
    return ad.mul(state.lam, total)
