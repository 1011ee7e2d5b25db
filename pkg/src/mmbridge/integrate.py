"""Batched Euler-Maruyama simulation over heterogeneous bridge intervals.

Rows with different interval lengths share one step axis: each row is active
for its own N_i steps and then frozen, with a binary mask recording which
entries are live. The probability-flow ODE integrator crosses all intervals
continuously and can extrapolate past the last grid time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import DivergenceError, TimeGrid

_GRID_TIME_TOL = 1e-9


@dataclass
class TrajectoryBatch:
    """Paths on a shared step axis; frozen entries repeat the row's endpoint.

    mask[r, k] = 1 when state k of row r was produced by an integration update;
    column 0 holds the given start state, so a row with N steps has N ones.
    """

    states: np.ndarray   # (rows, steps+1, d)
    times: np.ndarray    # (rows, steps+1)
    mask: np.ndarray     # (rows, steps+1) binary
    direction: str
    intervals: np.ndarray | None = None  # per-row interval index; None = full horizon

    def __post_init__(self):
        rows, cols, _ = self.states.shape
        if self.times.shape != (rows, cols) or self.mask.shape != (rows, cols):
            raise ValueError("states/times/mask shapes disagree")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"unknown direction {self.direction!r}")

    @property
    def num_rows(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def final_states(self) -> np.ndarray:
        # frozen rows carry their endpoint through the trailing columns
        return self.states[:, -1, :]

    def shared_times(self) -> np.ndarray:
        t0 = self.times[0]
        if not np.all(np.abs(self.times - t0) <= _GRID_TIME_TOL):
            raise ValueError("rows do not share a common time axis")
        return t0

    def states_at_time(self, t: float) -> np.ndarray:
        times = self.shared_times()
        j = int(np.argmin(np.abs(times - t)))
        if abs(times[j] - t) > _GRID_TIME_TOL:
            raise ValueError(f"time {t} not on the trajectory time axis")
        return self.states[:, j, :]


def sde_simulate(X_init, intervals, drift, direction, grid: TimeGrid, ref, rng) -> TrajectoryBatch:
    """Euler-Maruyama within each row's interval: z += v(t,z)dt + sigma sqrt(dt) xi.

    Forward rows run t_i -> t_{i+1}; backward rows run t_{i+1} -> t_i with the
    same positive step magnitude. Frozen rows keep their state bit-exactly and
    consume no updates.
    """
    X = np.array(X_init, dtype=np.float64)
    rows, dim = X.shape
    intervals = np.asarray(intervals, dtype=np.int64)
    if intervals.shape != (rows,):
        raise ValueError("one interval index per row required")
    if np.any(intervals < 0) or np.any(intervals >= grid.num_intervals):
        raise ValueError("interval index out of range")
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")

    steps = np.asarray(grid.steps)[intervals]
    dts = np.asarray(grid.dts)[intervals]
    max_steps = int(steps.max())
    sign = 1.0 if direction == "forward" else -1.0
    left = np.asarray(grid.times)[intervals]
    right = np.asarray(grid.times)[intervals + 1]
    start = left if direction == "forward" else right
    end = right if direction == "forward" else left

    k_axis = np.arange(max_steps + 1)
    k_clip = np.minimum(k_axis[None, :], steps[:, None])
    times = start[:, None] + sign * k_clip * dts[:, None]
    times[k_clip == steps[:, None]] = np.broadcast_to(end[:, None], times.shape)[
        k_clip == steps[:, None]
    ]  # land exactly on the interval endpoint
    mask = ((k_axis[None, :] >= 1) & (k_axis[None, :] <= steps[:, None])).astype(np.int8)

    states = np.empty((rows, max_steps + 1, dim))
    states[:, 0] = X
    for k in range(max_steps):
        active = k < steps
        x = states[:, k]
        v = np.zeros_like(x)
        v[active] = drift(times[active, k], x[active])
        if not np.all(np.isfinite(v[active])):
            raise DivergenceError(
                f"non-finite drift at step {k} ({direction} simulation)"
            )
        noise = rng.standard_normal((rows, dim))
        stepped = x + v * dts[:, None] + ref.sigma * np.sqrt(dts)[:, None] * noise
        states[:, k + 1] = np.where(active[:, None], stepped, x)
        if not np.all(np.isfinite(states[active, k + 1])):
            raise DivergenceError(
                f"non-finite state at step {k + 1} ({direction} simulation)"
            )

    return TrajectoryBatch(states=states, times=times, mask=mask,
                           direction=direction, intervals=intervals)


def make_ode_drift(v_theta, v_phi):
    """Probability-flow drift (v_theta - v_phi)/2.

    The backward net regresses displacements toward decreasing time, so its
    forward-time contribution enters with a negation.
    """
    def drift(t, x):
        return 0.5 * (v_theta(t, x) - v_phi(t, x))

    return drift


def _ode_schedule(grid: TimeGrid, direction: str, start_index: int, t_end):
    """Per-step times for a full ODE pass, optionally extrapolated past t_K."""
    times = [grid.times[start_index]]
    if direction == "forward":
        for i in range(start_index, grid.num_intervals):
            for k in range(1, grid.steps[i] + 1):
                times.append(grid.times[i] + k * grid.dts[i])
            times[-1] = grid.times[i + 1]
        if t_end is not None and t_end > grid.t_end + _GRID_TIME_TOL:
            dt = grid.dts[-1]
            t = grid.t_end
            while t + dt < t_end - _GRID_TIME_TOL:
                t += dt
                times.append(t)
            times.append(float(t_end))
    else:
        for i in range(start_index - 1, -1, -1):
            for k in range(1, grid.steps[i] + 1):
                times.append(grid.times[i + 1] - k * grid.dts[i])
            times[-1] = grid.times[i]
    return np.asarray(times)


def ode_simulate(X_start, v_theta, v_phi, grid: TimeGrid, direction="forward",
                 start_index=None, t_end=None) -> TrajectoryBatch:
    """Deterministic Euler integration of dx/dt = (v_theta - v_phi)/2.

    Crosses grid times continuously; ``t_end`` beyond the horizon continues
    the integration with the last interval's step size.
    """
    X = np.array(X_start, dtype=np.float64)
    rows, dim = X.shape
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    if start_index is None:
        start_index = 0 if direction == "forward" else grid.num_intervals
    if direction == "forward" and start_index >= grid.num_intervals:
        raise ValueError("forward integration must start before the final grid time")
    if direction == "backward" and start_index < 1:
        raise ValueError("backward integration must start after the first grid time")

    drift = make_ode_drift(v_theta, v_phi)
    taxis = _ode_schedule(grid, direction, start_index, t_end)
    n_steps = len(taxis) - 1
    states = np.empty((rows, n_steps + 1, dim))
    states[:, 0] = X
    for k in range(n_steps):
        dt = taxis[k + 1] - taxis[k]  # negative when integrating backward
        t_now = np.full(rows, taxis[k])
        v = drift(t_now, states[:, k])
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"non-finite drift at step {k} (ode {direction})")
        states[:, k + 1] = states[:, k] + v * dt

    times = np.broadcast_to(taxis, (rows, n_steps + 1)).copy()
    mask = np.ones((rows, n_steps + 1), dtype=np.int8)
    mask[:, 0] = 0
    return TrajectoryBatch(states=states, times=times, mask=mask, direction=direction)


def chain_segments(segments) -> TrajectoryBatch:
    """Stitch per-interval trajectories (each row continuing the last state)."""
    if not segments:
        raise ValueError("no segments to chain")
    states = [segments[0].states]
    times = [segments[0].times]
    for prev, seg in zip(segments, segments[1:]):
        if not np.array_equal(seg.states[:, 0], prev.states[:, -1]):
            raise ValueError("segments do not chain: endpoints disagree")
        states.append(seg.states[:, 1:])
        times.append(seg.times[:, 1:])
    states = np.concatenate(states, axis=1)
    times = np.concatenate(times, axis=1)
    mask = np.ones(times.shape, dtype=np.int8)
    mask[:, 0] = 0
    return TrajectoryBatch(states=states, times=times, mask=mask,
                           direction=segments[0].direction)


def path_energy(traj: TrajectoryBatch, drift) -> float:
    """Monte Carlo path energy: sum over rows/steps of |v|^2 dt, / num_rows."""
    total = 0.0
    n_steps = traj.states.shape[1] - 1
    for k in range(n_steps):
        active = traj.mask[:, k + 1] == 1
        if not np.any(active):
            continue
        dt = np.abs(traj.times[active, k + 1] - traj.times[active, k])
        v = drift(traj.times[active, k], traj.states[active, k])
        total += float(np.sum(np.sum(v * v, axis=1) * dt))
    return total / traj.num_rows


def write_trajectories_csv(traj: TrajectoryBatch, path) -> None:
    """Export with columns (row_id, step, t, x_1..x_d, mask)."""
    d = traj.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "step", "t"] + [f"x_{j + 1}" for j in range(d)] + ["mask"])
        for r in range(traj.num_rows):
            for k in range(traj.states.shape[1]):
                writer.writerow(
                    [r, k, repr(float(traj.times[r, k]))]
                    + [repr(float(v)) for v in traj.states[r, k]]
                    + [int(traj.mask[r, k])]
                )


def read_trajectories_csv(path) -> tuple:
    """Round-trip reader for the trajectory export; returns (states, times, mask)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 4
        rows: dict = {}
        for rec in reader:
            r, k = int(rec[0]), int(rec[1])
            rows.setdefault(r, []).append(
                (k, float(rec[2]), [float(v) for v in rec[3:3 + d]], int(rec[3 + d]))
            )
    num_rows = len(rows)
    num_cols = max(len(v) for v in rows.values())
    states = np.zeros((num_rows, num_cols, d))
    times = np.zeros((num_rows, num_cols))
    mask = np.zeros((num_rows, num_cols), dtype=np.int8)
    for r, entries in rows.items():
        for k, t, x, m in entries:
            states[r, k] = x
            times[r, k] = t
            mask[r, k] = m
    return states, times, mask
