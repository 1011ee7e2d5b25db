"""Alternating bridge-matching trainer: warmup phase, then outer iterations
that alternate Markovian simulation with reciprocal interpolation fits.

Warmup regresses both drift nets on product-coupling bridges (endpoints drawn
independently from adjacent marginals). The main phase replaces one endpoint
per direction with a simulated one: the backward net fits bridges whose right
endpoint comes from forward SDE rollouts of the current forward net, and vice
versa, each outer iteration running backward first.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DataError,
    DivergenceError,
    ReferenceConfig,
    RunConfig,
    SampleBatch,
    TIME_MARGIN_FRACTION,
    TimeGrid,
    seeded_rng,
)
from .datasets import MarginalDataset
from .integrate import (
    TrajectoryBatch,
    chain_segments,
    make_ode_drift,
    ode_simulate,
    path_energy,
    sde_simulate,
)
from .metrics import MetricReport, mmd_rbf, median_bandwidth, moment_track, sliced_w, w2_exact
from .net import AdamState, DriftNetwork, adam_step, init_drift_network, loss_and_grad
from .reference import BridgePairBatch, backward_target, forward_target, interp

_MODEL_MAGIC = b"MMBRMDL1"

DEFAULT_HIDDEN_SMALL = (256, 256, 256)
DEFAULT_HIDDEN_WIDE = (320, 320, 320)  # ~3e5 parameters at d=100
WIDE_DIM_THRESHOLD = 64


def default_hidden(dim: int) -> tuple:
    return DEFAULT_HIDDEN_WIDE if dim >= WIDE_DIM_THRESHOLD else DEFAULT_HIDDEN_SMALL


@dataclass
class TrainingHistory:
    warmup_losses: dict = field(default_factory=lambda: {"forward": [], "backward": []})
    outer_losses: list = field(default_factory=list)
    metric_records: list = field(default_factory=list)


@dataclass
class BridgeModel:
    forward_net: DriftNetwork
    backward_net: DriftNetwork
    grid: TimeGrid
    ref: ReferenceConfig
    history: TrainingHistory = field(default_factory=TrainingHistory)
    forward_opt: AdamState | None = None
    backward_opt: AdamState | None = None

    def __post_init__(self):
        if self.forward_net.dim != self.backward_net.dim:
            raise ValueError("drift nets disagree on dimension")

    @property
    def dim(self) -> int:
        return self.forward_net.dim

    def ode_drift(self):
        return make_ode_drift(self.forward_net, self.backward_net)


def build_model(dataset: MarginalDataset, config: RunConfig, hidden=None,
                embed_dim=64, rng=None) -> BridgeModel:
    grid = config.grid
    _check_dataset(dataset, grid)
    rng = rng if rng is not None else seeded_rng(config.train.seed)
    hidden = hidden if hidden is not None else default_hidden(dataset.dim)
    fwd = init_drift_network(dataset.dim, grid.t0, grid.horizon, hidden, embed_dim, rng)
    bwd = init_drift_network(dataset.dim, grid.t0, grid.horizon, hidden, embed_dim, rng)
    lr = config.train.learning_rate
    return BridgeModel(
        forward_net=fwd,
        backward_net=bwd,
        grid=grid,
        ref=config.ref,
        forward_opt=AdamState.create(fwd.params.size, lr),
        backward_opt=AdamState.create(bwd.params.size, lr),
    )


def _ensure_optimizers(model: BridgeModel, config: RunConfig):
    """Loaded checkpoints carry no optimizer state; create it on demand."""
    lr = config.train.learning_rate
    if model.forward_opt is None:
        model.forward_opt = AdamState.create(model.forward_net.params.size, lr)
    if model.backward_opt is None:
        model.backward_opt = AdamState.create(model.backward_net.params.size, lr)


def _check_dataset(dataset: MarginalDataset, grid: TimeGrid):
    if len(dataset.times) != len(grid.times) or not np.allclose(
        dataset.times, grid.times, atol=1e-12
    ):
        raise DataError(
            f"dataset times {dataset.times} do not match grid times {grid.times}"
        )
    for m in dataset.train:
        if m.shape[0] < 1:
            raise DataError("empty training marginal")


def _draw_rows(rng, X, k):
    return X[rng.integers(0, X.shape[0], size=k)]


def _sample_product_pairs(rng, dataset, grid, b):
    """Per bridge, b independent endpoint pairs from adjacent marginals."""
    inits, finals, idx = [], [], []
    for i in range(grid.num_intervals):
        inits.append(_draw_rows(rng, dataset.train[i], b))
        finals.append(_draw_rows(rng, dataset.train[i + 1], b))
        idx.append(np.full(b, i))
    return (np.concatenate(inits), np.concatenate(finals), np.concatenate(idx))


def _sample_interior_times(rng, grid, intervals):
    left = np.asarray(grid.times)[intervals]
    right = np.asarray(grid.times)[intervals + 1]
    t = left + rng.random(len(intervals)) * (right - left)
    margin = TIME_MARGIN_FRACTION * (right - left)
    return np.clip(t, left + margin, right - margin)


def _fit_step(net, opt, t, X_t, target, history_sink):
    loss, grad = loss_and_grad(net, t, X_t, target)
    net.params = adam_step(opt, net.params, grad)
    history_sink.append(loss)
    return loss


def warmup(dataset: MarginalDataset, config: RunConfig, model: BridgeModel | None = None,
           rng=None, callback=None) -> BridgeModel:
    """Product-coupling bridge regression for both directions (forward first)."""
    rng = rng if rng is not None else seeded_rng(config.train.seed)
    model = model if model is not None else build_model(dataset, config, rng=rng)
    _ensure_optimizers(model, config)
    _check_dataset(dataset, model.grid)
    grid, ref = model.grid, model.ref
    b = config.train.rows_per_bridge(grid.num_intervals)
    times = np.asarray(grid.times)

    for direction in ("forward", "backward"):
        net = model.forward_net if direction == "forward" else model.backward_net
        opt = model.forward_opt if direction == "forward" else model.backward_opt
        sink = model.history.warmup_losses[direction]
        for step in range(config.train.warmup_steps):
            X_init, X_final, idx = _sample_product_pairs(rng, dataset, grid, b)
            t = _sample_interior_times(rng, grid, idx)
            Z = rng.standard_normal(X_init.shape)
            pairs = BridgePairBatch(X_init, X_final, times[idx], times[idx + 1])
            X_t = interp(pairs, t, Z, ref).points
            if direction == "forward":
                target = forward_target(X_t, X_final, t, times[idx + 1])
            else:
                target = backward_target(X_t, X_init, t, times[idx])
            _fit_step(net, opt, t, X_t, target, sink)
            if callback is not None:
                callback(direction, step, sink[-1])
    return model


def mm_imf(model: BridgeModel, dataset: MarginalDataset, config: RunConfig,
           rng=None, resample_times="inner", cache_endpoints=False,
           resample_pairs_per_direction=False, callback=None) -> BridgeModel:
    """Outer iterations alternating backward and forward fits.

    Per outer iteration one block of endpoint pairs is drawn; each direction
    then runs inner steps in which the opposite net simulates the replaced
    endpoint (fresh simulation per step unless ``cache_endpoints``) and the
    trained net regresses the bridge drift on interpolated interior states.
    """
    if resample_times not in ("outer", "inner"):
        raise ValueError("resample_times must be 'outer' or 'inner'")
    rng = rng if rng is not None else seeded_rng(config.train.seed)
    _ensure_optimizers(model, config)
    _check_dataset(dataset, model.grid)
    grid, ref = model.grid, model.ref
    b = config.train.rows_per_bridge(grid.num_intervals)
    times = np.asarray(grid.times)

    for n in range(config.train.outer_iterations):
        X_init, X_final, idx = _sample_product_pairs(rng, dataset, grid, b)
        t_block = _sample_interior_times(rng, grid, idx)

        for direction in ("backward", "forward"):
            if resample_pairs_per_direction and direction == "forward":
                X_init, X_final, idx = _sample_product_pairs(rng, dataset, grid, b)
                t_block = _sample_interior_times(rng, grid, idx)
            net = model.backward_net if direction == "backward" else model.forward_net
            opt = model.backward_opt if direction == "backward" else model.forward_opt
            sim_net = model.forward_net if direction == "backward" else model.backward_net
            sink = []
            cached = None
            for k in range(config.train.inner_steps):
                try:
                    if cached is None or not cache_endpoints:
                        if direction == "backward":
                            traj = sde_simulate(X_init, idx, sim_net, "forward",
                                                grid, ref, rng)
                        else:
                            traj = sde_simulate(X_final, idx, sim_net, "backward",
                                                grid, ref, rng)
                        cached = traj.final_states()
                    t = t_block if resample_times == "outer" else \
                        _sample_interior_times(rng, grid, idx)
                    Z = rng.standard_normal(X_init.shape)
                    if direction == "backward":
                        pairs = BridgePairBatch(X_init, cached, times[idx], times[idx + 1])
                        X_t = interp(pairs, t, Z, ref).points
                        target = backward_target(X_t, X_init, t, times[idx])
                    else:
                        pairs = BridgePairBatch(cached, X_final, times[idx], times[idx + 1])
                        X_t = interp(pairs, t, Z, ref).points
                        target = forward_target(X_t, X_final, t, times[idx + 1])
                    _fit_step(net, opt, t, X_t, target, sink)
                except DivergenceError as err:
                    raise DivergenceError(
                        f"outer {n} {direction} inner {k}: {err}"
                    ) from err
            model.history.outer_losses.append(
                {"iteration": n, "direction": direction, "losses": sink}
            )
        if callback is not None:
            callback(model, n)
    return model


def train(dataset: MarginalDataset, config: RunConfig, rng=None, **mm_kwargs) -> BridgeModel:
    """Warmup followed by the alternating phase, sharing one random stream."""
    rng = rng if rng is not None else seeded_rng(config.train.seed)
    model = warmup(dataset, config, rng=rng)
    return mm_imf(model, dataset, config, rng=rng, **mm_kwargs)


def generate(model: BridgeModel, start: SampleBatch, direction="forward",
             sampler="sde", rng=None, t_end=None) -> TrajectoryBatch:
    """Trajectories from a grid-time start to the horizon end (either direction).

    SDE mode chains per-interval simulations, seeding each interval with the
    previous endpoint; ODE mode integrates the probability flow continuously.
    """
    if start.grid_index is None:
        raise ValueError("start batch must sit at a grid time (grid_index set)")
    if sampler not in ("sde", "ode"):
        raise ValueError(f"unknown sampler {sampler!r}")
    j = start.grid_index
    K = model.grid.num_intervals
    if not 0 <= j <= K:
        raise ValueError(f"grid index {j} outside 0..{K}")
    if direction == "forward" and j >= K:
        raise ValueError("forward generation must start before the final grid time")
    if direction == "backward" and j <= 0:
        raise ValueError("backward generation must start after the first grid time")

    if sampler == "ode":
        return ode_simulate(start.points, model.forward_net, model.backward_net,
                            model.grid, direction, start_index=j, t_end=t_end)

    rng = rng if rng is not None else seeded_rng(0)
    segments = []
    x = np.asarray(start.points, dtype=np.float64)
    rows = np.full(x.shape[0], 0)
    span = range(j, K) if direction == "forward" else range(j - 1, -1, -1)
    net = model.forward_net if direction == "forward" else model.backward_net
    for i in span:
        seg = sde_simulate(x, rows + i, net, direction, model.grid, model.ref, rng)
        segments.append(seg)
        x = seg.final_states()
    return chain_segments(segments)


def evaluate_model(model: BridgeModel, dataset: MarginalDataset, sampler="ode",
                   rng=None, num_projections=128, with_moments=False,
                   max_w2_rows=1000) -> MetricReport:
    """Generate from the earliest test marginal and score every later one."""
    rng = rng if rng is not None else seeded_rng(0)
    if dataset.test[0].shape[0] < 2:
        raise DataError("evaluation needs a nonempty test split")
    start = SampleBatch(dataset.test[0], grid_index=0)
    traj = generate(model, start, "forward", sampler, rng=rng)

    target_times = model.grid.times[1:]
    w2s, mmds, bws, swds = [], [], [], []
    for i, t in enumerate(target_times, start=1):
        gen = traj.states_at_time(t)
        ref_rows = dataset.test[i]
        k = min(max_w2_rows, gen.shape[0], ref_rows.shape[0])
        sub_g = gen if gen.shape[0] == k else _draw_rows(rng, gen, k)
        sub_r = ref_rows if ref_rows.shape[0] == k else _draw_rows(rng, ref_rows, k)
        w2s.append(w2_exact(sub_g, sub_r))
        bw = median_bandwidth(gen, ref_rows)
        bws.append(bw)
        mmds.append(mmd_rbf(gen, ref_rows, bandwidth=bw))
        swds.append(sliced_w(gen, ref_rows, num_projections, rng=rng))

    energy = path_energy(traj, model.ode_drift())
    moments = moment_track(traj, model.grid) if with_moments else None
    return MetricReport(times=tuple(target_times), w2=tuple(w2s), mmd=tuple(mmds),
                        mmd_bandwidth=tuple(bws), swd=tuple(swds),
                        path_energy=energy, moments=moments)


def save_model(model: BridgeModel, path) -> None:
    """Atomic checkpoint: JSON header plus both parameter blocks, little endian."""
    header = json.dumps(
        {
            "times": list(model.grid.times),
            "n_total": model.grid.n_total,
            "sigma": model.ref.sigma,
            "nets": [
                {
                    "dim": net.dim,
                    "hidden": list(net.hidden),
                    "embed_dim": net.embed_dim,
                    "t0": net.t0,
                    "horizon": net.horizon,
                    "param_count": int(net.params.size),
                }
                for net in (model.forward_net, model.backward_net)
            ],
        }
    ).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(model.forward_net.params.astype("<f8").tobytes())
        fh.write(model.backward_net.params.astype("<f8").tobytes())
    os.replace(tmp, path)


def load_model(path) -> BridgeModel:
    with open(path, "rb") as fh:
        if fh.read(len(_MODEL_MAGIC)) != _MODEL_MAGIC:
            raise ValueError(f"not a bridge-model checkpoint: {path}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(hlen).decode("utf-8"))
        nets = []
        for spec in meta["nets"]:
            params = np.frombuffer(fh.read(8 * spec["param_count"]), dtype="<f8")
            nets.append(
                DriftNetwork(
                    dim=spec["dim"],
                    hidden=tuple(spec["hidden"]),
                    embed_dim=spec["embed_dim"],
                    t0=spec["t0"],
                    horizon=spec["horizon"],
                    params=params.astype(np.float64),
                )
            )
    grid = TimeGrid(tuple(meta["times"]), meta["n_total"])
    ref = ReferenceConfig(sigma=meta["sigma"])
    return BridgeModel(forward_net=nets[0], backward_net=nets[1], grid=grid, ref=ref)
