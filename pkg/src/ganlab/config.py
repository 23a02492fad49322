"""Experiment configuration files.

Configurations are INI files with typed keys.  Every key has a default except
``variant.kind``; unknown sections or keys are rejected so that a typo never
silently falls back to a default.  A minimal file is::

    [variant]
    kind = gan_r1
    lambda = 10

Error messages always name the offending key as ``section.key``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

from .continual import EwcState
from .datasets import GaussianRingSpec
from .dirac import DiracConfig
from .losses import GanVariant
from .nn import InitSpec, MlpConfig
from .optim import OptimState

PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")


class ConfigError(ValueError):
    """Raised for unreadable files, unknown or missing keys and out-of-range values."""


def _int_list(text):
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    return tuple(int(t) for t in items)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


REQUIRED = object()

# section -> key -> (parser, default)
SCHEMA = {
    "dataset": {
        "kind": (str, "ring"),
        "n_modes": (int, 8),
        "radius": (float, 2.0),
        "mode_std": (float, 0.05),
        "images": (str, ""),
        "labels": (str, ""),
        "limit": (int, 4096),
        "scale": (str, "unit"),
    },
    "generator": {
        "latent_dim": (int, 2),
        "hidden_dims": (_int_list, (64, 64)),
        "hidden_activation": (str, "relu"),
        "slope": (float, 0.2),
        "init": (str, "glorot_uniform"),
        "init_scale": (float, 1.0),
    },
    "discriminator": {
        "hidden_dims": (_int_list, (64, 64)),
        "hidden_activation": (str, "relu"),
        "slope": (float, 0.2),
        "init": (str, "glorot_uniform"),
        "init_scale": (float, 1.0),
    },
    "variant": {
        "kind": (str, REQUIRED),
        "lambda": (float, 0.0),
        "gamma_imb": (float, 1.0),
    },
    "optimizer_d": {
        "kind": (str, "sgd"),
        "lr": (float, 3e-3),
        "momentum": (float, 0.0),
        "beta1": (float, 0.5),
        "beta2": (float, 0.99),
        "eps": (float, 1e-8),
    },
    "optimizer_g": {
        "kind": (str, "sgd"),
        "lr": (float, 3e-3),
        "momentum": (float, 0.0),
        "beta1": (float, 0.5),
        "beta2": (float, 0.99),
        "eps": (float, 1e-8),
    },
    "train": {
        "iters": (int, 10000),
        "batch_size": (int, 64),
        "n_critic": (int, 0),  # 0: variant default
        "seeds": (_int_list, (0,)),
        "out": (str, "runs"),
        "checkpoint_every": (int, 500),
    },
    "ewc": {
        "lambda": (float, 0.0),
        "alpha": (float, 0.5),
        "tau": (int, 100),
    },
    "diagnostics": {
        "enabled": (_bool, True),
        "every": (int, 500),
        "slice_k": (float, 2.0),
        "slice_points": (int, 201),
        "n_anchors": (int, 64),
        "local_window": (int, 5),
        "frozen_fakes": (int, 64),
        "coverage_samples": (int, 2500),
        "min_frac": (float, 0.02),
        "field_points": (int, 21),
        "field_extent": (float, 3.0),
    },
}

DIRAC_SCHEMA = {
    "dirac": {
        "disc_kind": (str, "linear"),
        "n_hidden": (int, 2),
        "activation": (str, "leaky_relu"),
        "slope": (float, 0.2),
        "optimizer": (str, "sgd"),
        "lr": (float, 0.1),
        "penalty": (str, "none"),
        "lambda": (float, 0.0),
        "replay_old_fake": (_bool, False),
        "iters": (int, 5000),
        "theta0": (float, 0.5),
        "psi0": (float, 0.5),
        "seed": (int, 0),
        "snapshot_every": (int, 50),
        "curve_range": (float, 2.0),
        "curve_points": (int, 201),
    }
}


@dataclass
class DatasetSpec:
    kind: str = "ring"
    ring: GaussianRingSpec = field(default_factory=GaussianRingSpec)
    images: str = ""
    labels: str = ""
    limit: int = 4096
    scale: str = "unit"

    @property
    def dim(self):
        return 2 if self.kind == "ring" else 784


@dataclass
class DiagnosticsSchedule:
    enabled: bool = True
    every: int = 500
    slice_k: float = 2.0
    slice_points: int = 201
    n_anchors: int = 64
    local_window: int = 5
    frozen_fakes: int = 64
    coverage_samples: int = 2500
    min_frac: float = 0.02
    field_points: int = 21
    field_extent: float = 3.0


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    generator: MlpConfig
    discriminator: MlpConfig
    variant: GanVariant
    optimizer_d: OptimState
    optimizer_g: OptimState
    ewc: EwcState
    diagnostics: DiagnosticsSchedule
    iters: int = 10000
    batch_size: int = 64
    n_critic: int = 1
    seeds: tuple = (0,)
    out: str = "runs"
    checkpoint_every: int = 500
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def ewc_enabled(self):
        return self.ewc.lam > 0

    def fingerprint(self):
        """SHA-256 of the canonical key/value form; identical for equivalent files."""
        text = json.dumps(self.raw, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, overrides):
        """A new config with ``{"section.key": "value"}`` overrides applied."""
        raw = {s: dict(v) for s, v in self.raw.items()}
        for path, value in overrides.items():
            section, key = _split_path(path)
            raw.setdefault(section, {})[key] = str(value)
        return build_config(raw)


def _split_path(path):
    if "." not in path:
        raise ConfigError(f"override {path!r} must look like section.key")
    return path.split(".", 1)


def _read_ini(path):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep keys case-sensitive
    try:
        with open(path) as f:
            parser.read_file(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: malformed config ({exc})") from exc
    if parser.defaults():
        raise ConfigError(f"unknown section 'DEFAULT' in {path}")
    return {s: dict(parser.items(s)) for s in parser.sections()}


def _typed(raw, schema):
    """Check names against ``schema`` and convert every value; returns section -> key -> value."""
    for section, items in raw.items():
        if section not in schema:
            raise ConfigError(f"unknown section '{section}' (expected one of {sorted(schema)})")
        for key in items:
            if key not in schema[section]:
                raise ConfigError(f"unknown key '{section}.{key}'")
    out = {}
    for section, keys in schema.items():
        out[section] = {}
        for key, (parse, default) in keys.items():
            text = raw.get(section, {}).get(key)
            if text is None:
                if default is REQUIRED:
                    raise ConfigError(f"missing required key '{section}.{key}'")
                out[section][key] = default
                continue
            try:
                out[section][key] = parse(text)
            except ValueError as exc:
                raise ConfigError(f"'{section}.{key}': cannot parse {text!r} ({exc})") from exc
    return out


def _check(cond, path, message):
    if not cond:
        raise ConfigError(f"'{path}' {message}")


def _wrap(path, build):
    """Run a constructor and re-raise its ValueError under the key path ``path``."""
    try:
        return build()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"'{path}': {exc}") from exc


def build_config(raw) -> ExperimentConfig:
    """Validate a ``section -> key -> text`` mapping into an :class:`ExperimentConfig`."""
    v = _typed(raw, SCHEMA)

    ds = v["dataset"]
    _check(ds["kind"] in ("ring", "mnist"), "dataset.kind", "must be 'ring' or 'mnist'")
    _check(ds["n_modes"] >= 1, "dataset.n_modes", "must be >= 1")
    _check(ds["radius"] > 0, "dataset.radius", "must be > 0")
    _check(ds["mode_std"] >= 0, "dataset.mode_std", "must be >= 0")
    _check(ds["limit"] >= 1, "dataset.limit", "must be >= 1")
    _check(ds["scale"] in ("unit", "raw"), "dataset.scale", "must be 'unit' or 'raw'")
    if ds["kind"] == "mnist":
        _check(bool(ds["images"]), "dataset.images", "is required for mnist")
        _check(bool(ds["labels"]), "dataset.labels", "is required for mnist")
    dataset = DatasetSpec(
        kind=ds["kind"],
        ring=GaussianRingSpec(ds["n_modes"], ds["radius"], ds["mode_std"]),
        images=ds["images"],
        labels=ds["labels"],
        limit=ds["limit"],
        scale=ds["scale"],
    )

    var = v["variant"]
    _check(var["lambda"] >= 0, "variant.lambda", f"must be >= 0, got {var['lambda']}")
    _check(var["gamma_imb"] >= 1, "variant.gamma_imb", f"must be >= 1, got {var['gamma_imb']}")
    variant = _wrap("variant.kind", lambda: GanVariant(var["kind"], var["lambda"], var["gamma_imb"]))

    nets = {}
    for name in ("generator", "discriminator"):
        n = v[name]
        _check(all(h >= 1 for h in n["hidden_dims"]), f"{name}.hidden_dims", "entries must be >= 1")
        _check(0 < n["slope"] < 1, f"{name}.slope", "must lie in (0, 1)")
        if name == "generator":
            _check(n["latent_dim"] >= 1, "generator.latent_dim", "must be >= 1")
            in_dim, out_dim, head = n["latent_dim"], dataset.dim, "linear"
        else:
            in_dim, out_dim, head = dataset.dim, 1, variant.output_activation
        init = _wrap(f"{name}.init", lambda: InitSpec(n["init"], n["init_scale"]))
        nets[name] = _wrap(
            f"{name}.hidden_activation",
            lambda: MlpConfig(
                input_dim=in_dim,
                hidden_dims=tuple(n["hidden_dims"]),
                output_dim=out_dim,
                hidden_activation=n["hidden_activation"],
                output_activation=head,
                slope=n["slope"],
                init=init,
            ),
        )

    opts = {}
    for name in ("optimizer_d", "optimizer_g"):
        o = v[name]
        _check(o["lr"] > 0, f"{name}.lr", f"must be > 0, got {o['lr']}")
        for k in ("momentum", "beta1", "beta2"):
            _check(0 <= o[k] < 1, f"{name}.{k}", f"must lie in [0, 1), got {o[k]}")
        _check(o["eps"] > 0, f"{name}.eps", "must be > 0")
        opts[name] = _wrap(f"{name}.kind", lambda: OptimState(**o))

    tr = v["train"]
    _check(tr["iters"] >= 1, "train.iters", "must be >= 1")
    _check(tr["batch_size"] >= 1, "train.batch_size", "must be >= 1")
    _check(tr["n_critic"] >= 0, "train.n_critic", "must be >= 1 (or 0 for the variant default)")
    _check(len(tr["seeds"]) >= 1, "train.seeds", "must list at least one seed")
    _check(len(set(tr["seeds"])) == len(tr["seeds"]), "train.seeds", "contains duplicates")
    _check(tr["checkpoint_every"] >= 1, "train.checkpoint_every", "must be >= 1")
    n_critic = tr["n_critic"] or (5 if variant.kind == "wgan_gp" else 1)

    e = v["ewc"]
    _check(e["lambda"] >= 0, "ewc.lambda", "must be >= 0")
    _check(0 <= e["alpha"] <= 1, "ewc.alpha", "must lie in [0, 1]")
    _check(e["tau"] >= 1, "ewc.tau", "must be >= 1")
    ewc = EwcState(alpha=e["alpha"], lam=e["lambda"], tau=e["tau"])

    d = v["diagnostics"]
    _check(d["every"] >= 1, "diagnostics.every", "must be >= 1")
    _check(d["slice_k"] > 0, "diagnostics.slice_k", "must be > 0")
    _check(d["slice_points"] >= 3 and d["slice_points"] % 2 == 1, "diagnostics.slice_points", "must be odd and >= 3")
    for k in ("n_anchors", "local_window", "frozen_fakes", "coverage_samples", "field_points"):
        _check(d[k] >= 1, f"diagnostics.{k}", "must be >= 1")
    _check(0 <= d["min_frac"] <= 1, "diagnostics.min_frac", "must lie in [0, 1]")
    _check(d["field_extent"] > 0, "diagnostics.field_extent", "must be > 0")

    canonical = {s: {k: _canon(val) for k, val in keys.items()} for s, keys in v.items()}
    return ExperimentConfig(
        dataset=dataset,
        generator=nets["generator"],
        discriminator=nets["discriminator"],
        variant=variant,
        optimizer_d=opts["optimizer_d"],
        optimizer_g=opts["optimizer_g"],
        ewc=ewc,
        diagnostics=DiagnosticsSchedule(**d),
        iters=tr["iters"],
        batch_size=tr["batch_size"],
        n_critic=n_critic,
        seeds=tuple(tr["seeds"]),
        out=tr["out"],
        checkpoint_every=tr["checkpoint_every"],
        raw=canonical,
    )


def _canon(val):
    if isinstance(val, tuple):
        return ",".join(str(x) for x in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


def parse_config(path) -> ExperimentConfig:
    return build_config(_read_ini(path))


def parse_dirac_config(path) -> DiracConfig:
    return build_dirac_config(_read_ini(path))


def build_dirac_config(raw) -> DiracConfig:
    v = _typed(raw, DIRAC_SCHEMA)["dirac"]
    _check(v["lr"] > 0, "dirac.lr", "must be > 0")
    _check(v["lambda"] >= 0, "dirac.lambda", f"must be >= 0, got {v['lambda']}")
    _check(v["iters"] >= 0, "dirac.iters", "must be >= 0")
    _check(v["snapshot_every"] >= 1, "dirac.snapshot_every", "must be >= 1")
    kwargs = dict(v)
    kwargs["lam"] = kwargs.pop("lambda")
    return _wrap("dirac", lambda: DiracConfig(**kwargs))


def preset_path(name):
    path = os.path.join(PRESET_DIR, f"{name}.ini")
    if not os.path.exists(path):
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return path


def list_presets():
    return sorted(f[:-4] for f in os.listdir(PRESET_DIR) if f.endswith(".ini"))


def resolve(config_or_preset):
    """Accept either a file path or a shipped preset name."""
    if os.path.exists(config_or_preset):
        return config_or_preset
    return preset_path(config_or_preset)


def config_to_dict(cfg: ExperimentConfig):
    return {"raw": cfg.raw, "n_critic": cfg.n_critic, "fingerprint": cfg.fingerprint()}


def dirac_to_dict(cfg: DiracConfig):
    return asdict(cfg)


def parse_dataset_spec(text):
    """Parse ``ring``, ``ring:radius=2,mode_std=0.05`` or ``mnist:images=P,labels=P[,limit=N]``."""
    kind, _, rest = str(text).partition(":")
    raw = {"dataset": {"kind": kind.strip()}, "variant": {"kind": "gan_ns"}}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"dataset spec item {item!r} must look like key=value")
        raw["dataset"][key.strip()] = value.strip()
    return build_config(raw).dataset


def parse_grid(items):
    """``["variant.lambda=10,100", "train.seeds=0"]`` -> ordered list of (path, values)."""
    grid = []
    for item in items:
        path, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigError(f"grid entry {item!r} must look like section.key=v1,v2,...")
        section, key = _split_path(path.strip())
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{section}.{key}' in grid")
        grid.append((f"{section}.{key}", [v.strip() for v in values.split(",") if v.strip()]))
    return grid
