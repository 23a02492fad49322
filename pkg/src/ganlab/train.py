"""Alternating GAN training with checkpoints, resume and scheduled diagnostics.

Each run owns five independent random streams spawned from its seed:
``data`` (real batches), ``noise`` (latent draws), ``penalty`` (interpolation
coefficients), ``diag`` (everything the diagnostics draw) and ``init``
(network initialisation).  Diagnostics only read the networks and only use
their own stream, so switching them on or off never changes the trajectory.

Layout of one seed's directory::

    metrics.csv          one row per iteration
    coverage.csv         ring runs: modes hit at every diagnostics checkpoint
    landscape.csv        per-checkpoint landscape summary
    slice_{iter}.csv     landscape slices through the real anchors
    field_{iter}.csv     generator-loss gradient field (2-D data only)
    forgetting.csv       scores of one frozen fake batch at every checkpoint
    ckpt/                network files and resumable training state
"""

from __future__ import annotations

import csv
import glob
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import autodiff as ad
from . import diagnostics as dg
from . import losses, optim
from .config import ExperimentConfig
from .continual import EwcState, ewc_accumulate, ewc_end_chunk, ewc_penalty
from .datasets import load_idx, sample_noise, sample_ring
from .nn import MlpNetwork, init_mlp, load_checkpoint, save_checkpoint

STREAMS = ("data", "noise", "penalty", "diag", "init")
METRIC_FIELDS = ["iter", "loss_d", "loss_g", "penalty", "grad_norm_d", "grad_norm_g"]


class NumericalFailure(RuntimeError):
    """Training produced a non-finite loss or gradient; a dump of the last batch was written."""

    def __init__(self, iteration, cause, dump_path=None):
        self.iteration = iteration
        self.dump_path = dump_path
        super().__init__(f"iteration {iteration}: {cause}" + (f" (batch dumped to {dump_path})" if dump_path else ""))


def spawn_streams(seed):
    seqs = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, seqs)}


class DataSource:
    """Real batches from either the Gaussian ring or an in-memory image set."""

    def __init__(self, dataset_spec):
        self.spec = dataset_spec
        self.images = None
        if dataset_spec.kind == "mnist":
            ds = load_idx(dataset_spec.images, dataset_spec.labels, dataset_spec.limit, dataset_spec.scale)
            self.images = ds.flat()

    def sample(self, n, rng):
        if self.images is None:
            return sample_ring(self.spec.ring, n, rng)
        return self.images[rng.integers(len(self.images), size=n)]


@dataclass
class RunState:
    t: int
    G: MlpNetwork
    D: MlpNetwork
    opt_d: optim.OptimState
    opt_g: optim.OptimState
    ewc: EwcState
    rngs: dict
    last_batch: dict = field(default_factory=dict)


def _fresh_optim(template: optim.OptimState):
    return optim.OptimState(
        template.kind, template.lr, template.momentum, template.beta1, template.beta2, template.eps
    )


def init_run_state(config: ExperimentConfig, seed) -> RunState:
    rngs = spawn_streams(seed)
    D = init_mlp(config.discriminator, rngs["init"])
    G = init_mlp(config.generator, rngs["init"])
    ewc = EwcState(alpha=config.ewc.alpha, lam=config.ewc.lam, tau=config.ewc.tau)
    return RunState(0, G, D, _fresh_optim(config.optimizer_d), _fresh_optim(config.optimizer_g), ewc, rngs)


def _norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads)))


def train_step(state: RunState, config: ExperimentConfig, data: DataSource):
    """``n_critic`` discriminator updates, then one generator update.

    Returns a metrics dict for the iteration.  Losses and norms of the
    discriminator refer to its last update.
    """
    variant = config.variant
    rngs = state.rngs
    graph = ad.Graph.current()
    D, G = state.D, state.G
    for _ in range(config.n_critic):
        mark = graph.mark()
        real = data.sample(config.batch_size, rngs["data"])
        fake = G(sample_noise(config.generator.input_dim, config.batch_size, rngs["noise"]), track=False)
        state.last_batch = {"real": real, "fake": fake}
        terms = losses.discriminator_terms(variant, D, real, fake, rngs["penalty"])
        grads = ad.grad(terms["total"], D.params)
        if config.ewc_enabled:
            ewc_accumulate(state.ewc, grads)
            if state.ewc.anchored:
                extra = ad.grad(ewc_penalty(state.ewc, D.params), D.params)
                grads = [g + e for g, e in zip(grads, extra)]
        optim.step(D.params, grads, state.opt_d)
        if config.ewc_enabled and state.ewc.count == state.ewc.tau:
            ewc_end_chunk(state.ewc, D.params)
        loss_d = float(terms["total"].value)
        penalty = 0.0 if terms["penalty"] is None else float(terms["penalty"].value)
        norm_d = _norm(grads)
        graph.truncate(mark)

    mark = graph.mark()
    z = sample_noise(config.generator.input_dim, config.batch_size, rngs["noise"])
    fake = G(z)
    state.last_batch["z"] = z
    loss_g_node = losses.generator_loss(variant, D, fake)
    grads_g = ad.grad(loss_g_node, G.params)
    optim.step(G.params, grads_g, state.opt_g)
    loss_g = float(loss_g_node.value)
    graph.truncate(mark)

    state.t += 1
    return {
        "iter": state.t,
        "loss_d": loss_d,
        "loss_g": loss_g,
        "penalty": penalty,
        "grad_norm_d": norm_d,
        "grad_norm_g": _norm(grads_g),
    }


# ---------------------------------------------------------------------------
# resumable state files


def _rng_state(rng):
    return rng.bit_generator.state


def save_state(path, state: RunState, ctx=None):
    """Everything needed to continue bit-for-bit: weights, optimizers, EWC, rngs, diagnostics context."""
    arrays = {}
    if ctx is not None:
        arrays["diag.anchors"] = ctx.anchors
        if ctx.frozen_fakes is not None:
            arrays["diag.frozen_fakes"] = ctx.frozen_fakes
    for name, net in (("G", state.G), ("D", state.D)):
        arrays[name] = net.get_flat()
    for name, opt in (("opt_d", state.opt_d), ("opt_g", state.opt_g)):
        for slot in ("buffers", "second"):
            for i, b in enumerate(getattr(opt, slot)):
                arrays[f"{name}.{slot}.{i}"] = b
    for slot in ("omega", "anchor", "accum"):
        for i, b in enumerate(getattr(state.ewc, slot)):
            arrays[f"ewc.{slot}.{i}"] = b
    meta = {
        "t": state.t,
        "opt_d_t": state.opt_d.t,
        "opt_g_t": state.opt_g.t,
        "ewc_count": state.ewc.count,
        "rngs": {k: _rng_state(r) for k, r in state.rngs.items()},
    }
    tmp = path + ".tmp.npz"
    np.savez(tmp, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    os.replace(tmp, path)


def load_state(path, config: ExperimentConfig):
    """Return ``(state, diagnostics context or None)``."""
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        arrays = {k: z[k].copy() for k in z.files if k != "meta"}
    state = init_run_state(config, 0)
    state.G.set_flat(arrays["G"])
    state.D.set_flat(arrays["D"])

    def collect(prefix):
        keys = sorted((k for k in arrays if k.startswith(prefix + ".")), key=lambda k: int(k.rsplit(".", 1)[1]))
        return [arrays[k] for k in keys]

    for name, opt, t in (("opt_d", state.opt_d, meta["opt_d_t"]), ("opt_g", state.opt_g, meta["opt_g_t"])):
        opt.load_state_dict({"t": t, "buffers": collect(f"{name}.buffers"), "second": collect(f"{name}.second")})
    state.ewc.load_state_dict(
        {
            "omega": collect("ewc.omega"),
            "anchor": collect("ewc.anchor"),
            "accum": collect("ewc.accum"),
            "count": meta["ewc_count"],
        }
    )
    for k, s in meta["rngs"].items():
        state.rngs[k].bit_generator.state = s
    state.t = meta["t"]
    ctx = None
    if "diag.anchors" in arrays:
        ctx = DiagnosticsContext(anchors=arrays["diag.anchors"], frozen_fakes=arrays.get("diag.frozen_fakes"))
    return state, ctx


def latest_state(ckpt_dir):
    paths = sorted(glob.glob(os.path.join(ckpt_dir, "state_*.npz")))
    return paths[-1] if paths else None


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class DiagnosticsContext:
    """Fixed objects drawn once per run from the diagnostics stream."""

    anchors: np.ndarray
    frozen_fakes: np.ndarray = None
    forgetting_iters: list = field(default_factory=list)
    forgetting_scores: list = field(default_factory=list)


def make_diag_context(config: ExperimentConfig, data: DataSource, rng) -> DiagnosticsContext:
    return DiagnosticsContext(anchors=data.sample(config.diagnostics.n_anchors, rng))


def run_diagnostics(state: RunState, config: ExperimentConfig, ctx: DiagnosticsContext, out_dir, rng):
    """Write the per-checkpoint diagnostics files; returns the landscape summary row."""
    sched = config.diagnostics
    D, G, t = state.D, state.G, state.t
    row = {"iter": t}

    direction = dg.random_direction(config.discriminator.input_dim, rng)
    slices = dg.slice_many(D, ctx.anchors, direction, -sched.slice_k, sched.slice_k, sched.slice_points)
    dg.write_slices_csv(os.path.join(out_dir, f"slice_{t:06d}.csv"), slices)
    local = [dg.window(s, sched.local_window) for s in slices]
    row["mean_monotonicity_local"] = float(np.mean([dg.monotonicity_score(s) for s in local]))
    row["mean_monotonicity"] = float(np.mean([dg.monotonicity_score(s) for s in slices]))
    row["local_max_frac"] = float(np.mean([dg.detect_local_maximum(s, sched.local_window) for s in slices]))
    row["median_basin_width"] = float(np.median([dg.basin_width(s) for s in slices]))

    if ctx.frozen_fakes is None:
        z = sample_noise(config.generator.input_dim, sched.frozen_fakes, rng)
        ctx.frozen_fakes = G(z, track=False)
    scores = np.asarray(D(ctx.frozen_fakes, track=False)).ravel()
    ctx.forgetting_iters.append(t)
    ctx.forgetting_scores.append(scores)
    with open(os.path.join(out_dir, "forgetting.csv"), "a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for j, v in enumerate(scores):
            w.writerow([t, j, dg.fmt(v)])

    if config.dataset.kind == "ring":
        z = sample_noise(config.generator.input_dim, sched.coverage_samples, rng)
        hit, counts = dg.mode_coverage(G(z, track=False), config.dataset.ring, sched.min_frac)
        row["modes_hit"] = hit
        with open(os.path.join(out_dir, "coverage.csv"), "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow([t, hit, *counts.tolist()])
        e = sched.field_extent
        grid = dg.lattice(-e, e, -e, e, sched.field_points, sched.field_points)
        variant = config.variant
        field_samples = dg.gradient_field(
            lambda x: losses.generator_loss_per_sample(variant, D, x),
            grid,
            real=config.dataset.ring.centers(),
            fake=ctx.frozen_fakes,
            region_radius=3.0 * max(config.dataset.ring.mode_std, 1e-3),
        )
        dg.write_field_csv(os.path.join(out_dir, f"field_{t:06d}.csv"), field_samples)
    return row


LANDSCAPE_FIELDS = [
    "iter",
    "mean_monotonicity",
    "mean_monotonicity_local",
    "local_max_frac",
    "median_basin_width",
    "modes_hit",
]


def _append_row(path, fields, row):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(fields)
        w.writerow([_cell(row.get(k, "")) for k in fields])


def _cell(v):
    if isinstance(v, float):
        return dg.fmt(v)
    return v


def _truncate_csv(path, t, header_rows=1):
    """Keep header rows plus data rows whose first column is <= ``t``."""
    if not os.path.exists(path):
        return
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = rows[:header_rows] + [r for r in rows[header_rows:] if int(r[0]) <= t]
    with open(path, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(keep)


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    seed: int
    out_dir: str
    state: RunState
    landscape: list
    forgetting: dg.ForgettingTrace = None


def _write_manifest(root, config: ExperimentConfig):
    manifest = {
        "library": "ganlab",
        "version": __version__,
        "config_hash": config.fingerprint(),
        "config": config.raw,
        "seeds": list(config.seeds),
        "n_critic": config.n_critic,
    }
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def run_seed(config: ExperimentConfig, seed, out_dir, resume=False, stop_after=None, data=None):
    """Train one seed into ``out_dir``.

    ``stop_after`` ends the run early after that many iterations (used to
    simulate an interrupted job); ``resume`` continues from the newest state
    file instead of starting over.
    """
    data = data or DataSource(config.dataset)
    ckpt_dir = os.path.join(out_dir, "ckpt")
    os.makedirs(ckpt_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    landscape_path = os.path.join(out_dir, "landscape.csv")
    sched = config.diagnostics

    state = None
    ctx = None
    if resume:
        path = latest_state(ckpt_dir)
        if path is not None:
            state, ctx = load_state(path, config)
            for p in (metrics_path, landscape_path):
                _truncate_csv(p, state.t)
            for p in (os.path.join(out_dir, "coverage.csv"), os.path.join(out_dir, "forgetting.csv")):
                _truncate_csv(p, state.t, header_rows=1)
            if ctx is not None:
                ctx.forgetting_iters, ctx.forgetting_scores = _read_forgetting(out_dir)
    if state is None:
        for p in glob.glob(os.path.join(out_dir, "*.csv")) + glob.glob(os.path.join(ckpt_dir, "*")):
            os.remove(p)
        state = init_run_state(config, seed)
        with open(metrics_path, "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(METRIC_FIELDS)
        if sched.enabled:
            with open(os.path.join(out_dir, "forgetting.csv"), "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(["checkpoint", "image_id", "score"])
            if config.dataset.kind == "ring":
                with open(os.path.join(out_dir, "coverage.csv"), "w", newline="") as f:
                    header = ["iter", "modes_hit"] + [f"count_{m}" for m in range(config.dataset.ring.n_modes)]
                    csv.writer(f, lineterminator="\n").writerow(header)
    if sched.enabled and ctx is None:
        ctx = make_diag_context(config, data, state.rngs["diag"])

    landscape = []
    graph = ad.Graph()
    end = config.iters if stop_after is None else min(config.iters, stop_after)
    with graph, open(metrics_path, "a", newline="") as mf:
        writer = csv.writer(mf, lineterminator="\n")
        while state.t < end:
            try:
                row = train_step(state, config, data)
            except (ad.NonFiniteError, losses.LossError, optim.NonFiniteGradient) as exc:
                graph.clear()
                mf.flush()
                dump = os.path.join(out_dir, f"failure_{state.t + 1:06d}.npz")
                np.savez(dump, **{k: np.asarray(v) for k, v in state.last_batch.items()})
                raise NumericalFailure(state.t + 1, exc, dump) from exc
            writer.writerow([row["iter"]] + [dg.fmt(row[k]) for k in METRIC_FIELDS[1:]])
            t = state.t
            if sched.enabled and t % sched.every == 0:
                mf.flush()
                lrow = run_diagnostics(state, config, ctx, out_dir, state.rngs["diag"])
                _append_row(landscape_path, LANDSCAPE_FIELDS, lrow)
                landscape.append(lrow)
            if t % config.checkpoint_every == 0 or t == config.iters:
                mf.flush()
                save_checkpoint(os.path.join(ckpt_dir, f"D_{t:06d}.ckpt"), state.D, {"iter": t})
                save_checkpoint(os.path.join(ckpt_dir, f"G_{t:06d}.ckpt"), state.G, {"iter": t})
                save_state(os.path.join(ckpt_dir, f"state_{t:06d}.npz"), state, ctx)

    trace = None
    if ctx is not None and len(ctx.forgetting_scores) >= 2:
        trace = dg.ForgettingTrace(ctx.frozen_fakes, np.stack(ctx.forgetting_scores), list(ctx.forgetting_iters))
    return RunResult(seed, out_dir, state, landscape, trace)


def _read_forgetting(out_dir):
    path = os.path.join(out_dir, "forgetting.csv")
    if not os.path.exists(path):
        return [], []
    by_iter = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        for it, _, score in reader:
            by_iter.setdefault(int(it), []).append(float(score))
    iters = sorted(by_iter)
    return iters, [np.array(by_iter[i]) for i in iters]


def run_experiment(config: ExperimentConfig, out=None, seeds=None, resume=False):
    """Train every seed into ``<out>/seed_<n>`` and write ``<out>/manifest.json``."""
    root = out or config.out
    seeds = list(seeds if seeds is not None else config.seeds)
    _write_manifest(root, config)
    data = DataSource(config.dataset)
    return [run_seed(config, s, os.path.join(root, f"seed_{s}"), resume=resume, data=data) for s in seeds]


def load_networks(ckpt_path):
    net, extra = load_checkpoint(ckpt_path)
    return net, extra


# ---------------------------------------------------------------------------
# sweeps


def grid_points(grid):
    """Cartesian product of ``[(path, values), ...]`` as a list of override dicts."""
    points = [{}]
    for path, values in grid:
        points = [{**p, path: v} for p in points for v in values]
    return points


def _point_name(overrides):
    if not overrides:
        return "base"
    return "__".join(f"{k}={v}" for k, v in overrides.items()).replace("/", "_")


def _run_point(args):
    config, overrides, root = args
    cfg = config.with_overrides(overrides)
    out = os.path.join(root, _point_name(overrides))
    run_experiment(cfg, out=out)
    return out


def run_sweep(config: ExperimentConfig, grid, out=None, workers=1):
    """Run every grid point (all of its seeds) into ``<out>/<key=value__...>``.

    Points are independent, so ``workers > 1`` farms them out to a process pool.
    """
    root = out or config.out
    points = grid_points(grid)
    for p in points:  # validate every point before any training starts
        config.with_overrides(p)
    jobs = [(config, p, root) for p in points]
    if workers <= 1:
        return [_run_point(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_point, jobs))
