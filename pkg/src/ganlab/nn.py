"""Multi-layer perceptrons for the generator and the discriminator."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad

HIDDEN_ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid")
OUTPUT_ACTIVATIONS = ("sigmoid", "linear")


@dataclass(frozen=True)
class InitSpec:
    """Weight initialisation.

    ``kind`` is ``"glorot_uniform"`` (uniform in +-sqrt(6/(fan_in+fan_out))),
    ``"uniform"`` (uniform in +-``scale``) or ``"zeros"``.  Biases start at 0.
    """

    kind: str = "glorot_uniform"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("glorot_uniform", "uniform", "zeros"):
            raise ValueError(f"unknown init kind {self.kind!r}")


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple = (64, 64)
    output_dim: int = 1
    hidden_activation: str = "relu"
    output_activation: str = "linear"
    slope: float = 0.2
    bias: bool = True
    init: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not 0.0 < self.slope < 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1)")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def n_params(self):
        dims = self.layer_dims
        extra = 1 if self.bias else 0
        return sum((a + extra) * b for a, b in zip(dims[:-1], dims[1:]))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["init"] = InitSpec(**d.get("init", {}))
        return cls(**d)


def activate(name, x, slope=0.2):
    if name == "relu":
        return ad.relu(x)
    if name == "leaky_relu":
        return ad.leaky_relu(x, slope)
    if name == "tanh":
        return ad.tanh(x)
    if name == "sigmoid":
        return ad.sigmoid(x)
    if name == "linear":
        return x
    raise ValueError(f"unknown activation {name!r}")


class MlpNetwork:
    """Affine layers with a shared hidden activation and a configurable head.

    Weights are stored ``(fan_in, fan_out)`` so a batch ``(B, fan_in)``
    multiplies on the left.  Parameters are autodiff leaves ordered
    ``W0, b0, W1, b1, ...`` (no ``b`` entries when ``config.bias`` is off).
    """

    def __init__(self, config: MlpConfig, params):
        self.config = config
        self.params = [p if isinstance(p, ad.Node) else ad.leaf(p) for p in params]

    def __call__(self, x, track=True):
        return forward(self, x, track=track)

    @property
    def weights(self):
        step = 2 if self.config.bias else 1
        return self.params[::step]

    @property
    def biases(self):
        return self.params[1::2] if self.config.bias else []

    def n_params(self):
        return sum(p.value.size for p in self.params)

    def get_flat(self):
        return np.concatenate([p.value.ravel() for p in self.params])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params():
            raise ValueError(f"expected {self.n_params()} values, got {flat.size}")
        offset = 0
        for p in self.params:
            n = p.value.size
            p.value = flat[offset : offset + n].reshape(p.value.shape).copy()
            offset += n

    def copy(self):
        return MlpNetwork(self.config, [p.value.copy() for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def init_mlp(config: MlpConfig, seed) -> MlpNetwork:
    """Draw parameters for ``config``; ``seed`` may be an int or a numpy Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = []
    dims = config.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if config.init.kind == "zeros":
            w = np.zeros((fan_in, fan_out))
        else:
            if config.init.kind == "glorot_uniform":
                a = np.sqrt(6.0 / (fan_in + fan_out))
            else:
                a = config.init.scale
            w = rng.uniform(-a, a, size=(fan_in, fan_out))
        params.append(w)
        if config.bias:
            params.append(np.zeros(fan_out))
    return MlpNetwork(config, params)


def forward(net: MlpNetwork, x, track=True):
    """Evaluate the network on a batch ``(B, input_dim)`` (a single vector is promoted).

    With ``track=False`` the evaluation runs on raw parameter values and
    returns a plain array, which is how training produces detached samples.
    """
    cfg = net.config
    xv = ad.value_of(x)
    if np.ndim(xv) == 1:
        x = ad.reshape(x, (1, -1)) if isinstance(x, ad.Node) else np.reshape(xv, (1, -1))
        xv = ad.value_of(x)
    if np.ndim(xv) != 2 or np.shape(xv)[1] != cfg.input_dim:
        raise ValueError(f"expected inputs of width {cfg.input_dim}, got shape {np.shape(xv)}")
    params = net.params if track else [p.value for p in net.params]
    h = x
    n_layers = len(cfg.layer_dims) - 1
    step = 2 if cfg.bias else 1
    for i in range(n_layers):
        w = params[i * step]
        h = ad.matmul(h, w)
        if cfg.bias:
            h = ad.add(h, params[i * step + 1])
        if i < n_layers - 1:
            h = activate(cfg.hidden_activation, h, cfg.slope)
    return activate(cfg.output_activation, h)


# ---------------------------------------------------------------------------
# checkpoint files: one JSON header line, then little-endian float64 values


def save_checkpoint(path, net: MlpNetwork, extra=None):
    flat = net.get_flat()
    header = {"config": net.config.to_dict(), "n_params": int(flat.size)}
    if extra:
        header["extra"] = extra
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(struct.pack(f"<{flat.size}d", *flat))


def load_checkpoint(path):
    """Return ``(network, extra)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as f:
        header = json.loads(f.readline())
        raw = f.read()
    n = header["n_params"]
    if len(raw) != 8 * n:
        raise ValueError(f"checkpoint {path}: expected {8 * n} payload bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    config = MlpConfig.from_dict(header["config"])
    if config.n_params != n:
        raise ValueError(f"checkpoint {path}: header count {n} disagrees with config")
    net = init_mlp(config, 0)
    net.set_flat(flat)
    return net, header.get("extra")
