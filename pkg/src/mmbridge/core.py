"""Shared domain types: time grids, reference process, run configuration, RNG control.

Everything here is immutable after construction and safe to share across
threads. All arrays are float64; single precision is deliberately unsupported.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_U64 = 0xFFFFFFFFFFFFFFFF

# Training-time guard: conditional drift targets blow up like 1/(t_end - t), so
# sampled times are kept at least this fraction of the interval away from the
# pinned endpoint.
TIME_MARGIN_FRACTION = 1e-3

# Minimum Euler steps per interval after proportional flooring.
MIN_STEPS_PER_INTERVAL = 2


class ConfigurationError(ValueError):
    """Invalid run configuration (bad grid, step budget, key set...)."""


class DataError(ValueError):
    """Invalid or unusable dataset input."""


class DivergenceError(FloatingPointError):
    """Non-finite state encountered during simulation or network evaluation."""


def allocate_steps(times, n_total: int):
    """Split ``n_total`` Euler steps across intervals proportionally to length.

    Returns ``(steps, dts)`` where ``steps[i] = floor(n_total * len_i / T)``
    clamped to at least MIN_STEPS_PER_INTERVAL, and ``dts[i] = len_i / steps[i]``
    so every interval is integrated exactly end to end.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 2:
        raise ConfigurationError("need at least two grid times")
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError(f"grid times must be strictly increasing, got {times.tolist()}")
    k = times.size - 1
    if n_total < MIN_STEPS_PER_INTERVAL * k:
        raise ConfigurationError(
            f"n_total_steps={n_total} too small for {k} intervals "
            f"(need >= {MIN_STEPS_PER_INTERVAL * k})"
        )
    horizon = float(times[-1] - times[0])
    steps = []
    for i in range(k):
        length = float(times[i + 1] - times[i])
        n_i = max(int(math.floor(n_total * length / horizon)), MIN_STEPS_PER_INTERVAL)
        steps.append(n_i)
    dts = tuple(float(times[i + 1] - times[i]) / steps[i] for i in range(k))
    return tuple(steps), dts


@dataclass(frozen=True)
class TimeGrid:
    """Ordered marginal times with a per-interval Euler discretization."""

    times: tuple
    n_total: int
    steps: tuple = dataclasses.field(init=False)
    dts: tuple = dataclasses.field(init=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        steps, dts = allocate_steps(times, self.n_total)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "dts", dts)

    @property
    def num_intervals(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return self.times[-1] - self.times[0]

    @property
    def t0(self) -> float:
        return self.times[0]

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def interval(self, i: int):
        return self.times[i], self.times[i + 1]

    def interval_length(self, i: int) -> float:
        return self.times[i + 1] - self.times[i]


def bridge_index(grid: TimeGrid, t):
    """Interval index i with ``times[i] <= t <= times[i+1]``.

    Interior grid points tie to the left interval; ``t0`` maps to interval 0.
    Accepts a scalar or an array of times.
    """
    times = np.asarray(grid.times)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < times[0]) or np.any(t_arr > times[-1]):
        raise ValueError(f"time out of grid range [{times[0]}, {times[-1]}]")
    idx = np.searchsorted(times, t_arr, side="left") - 1
    idx = np.clip(idx, 0, times.size - 2)
    if np.isscalar(t) or t_arr.ndim == 0:
        return int(idx)
    return idx.astype(np.int64)


@dataclass(frozen=True)
class ReferenceConfig:
    """Brownian reference process: zero drift, constant volatility ``sigma``."""

    sigma: float
    reference_drift: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if self.reference_drift != 0.0:
            raise ConfigurationError("only a zero-drift Brownian reference is supported")

    @property
    def epsilon_entropic(self) -> float:
        """Entropic regularization of the static problem, exactly 2*sigma^2."""
        return 2.0 * self.sigma * self.sigma


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    warmup_steps: int
    outer_iterations: int
    inner_steps: int
    learning_rate: float = 2e-4
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "warmup_steps", "outer_iterations", "inner_steps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")

    def rows_per_bridge(self, num_bridges: int) -> int:
        if self.batch_size % num_bridges != 0:
            raise ConfigurationError(
                f"batch_size={self.batch_size} not divisible by {num_bridges} bridges"
            )
        return self.batch_size // num_bridges


@dataclass
class SampleBatch:
    """A batch of points tied to one grid time, or to per-row interior times."""

    points: np.ndarray
    grid_index: int | None = None
    times: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1 or self.points.shape[1] < 1:
            raise DataError(f"points must be a nonempty n x d matrix, got shape {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise DataError("points contain non-finite entries")
        if self.grid_index is None and self.times is None:
            raise DataError("SampleBatch needs either a grid_index or explicit times")
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: identical seeds yield identical streams."""
    return np.random.default_rng(int(seed) & _U64)


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _U64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31)


def worker_rng(seed: int, worker_index: int) -> np.random.Generator:
    """Per-worker stream: master seed XOR worker index, hashed through splitmix64."""
    return seeded_rng(_splitmix64((int(seed) ^ int(worker_index)) & _U64))


# --- flat key/value run configuration -------------------------------------

CONFIG_KEYS = (
    "times",
    "n_total_steps",
    "sigma",
    "batch_size",
    "warmup_steps",
    "outer_iterations",
    "inner_steps",
    "learning_rate",
    "seed",
)


@dataclass(frozen=True)
class RunConfig:
    grid: TimeGrid
    ref: ReferenceConfig
    train: TrainConfig

    def as_dict(self) -> dict:
        return {
            "times": list(self.grid.times),
            "n_total_steps": self.grid.n_total,
            "sigma": self.ref.sigma,
            "batch_size": self.train.batch_size,
            "warmup_steps": self.train.warmup_steps,
            "outer_iterations": self.train.outer_iterations,
            "inner_steps": self.train.inner_steps,
            "learning_rate": self.train.learning_rate,
            "seed": self.train.seed,
        }

    def to_text(self) -> str:
        d = self.as_dict()
        d["times"] = ",".join(repr(t) for t in d["times"])
        return "".join(f"{k} = {d[k]}\n" for k in CONFIG_KEYS)


def parse_config(text: str) -> RunConfig:
    """Parse the flat ``key = value`` configuration format.

    Exactly the keys in CONFIG_KEYS are required; unknown keys are rejected.
    ``times`` is a comma- or space-separated list of grid times.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else (":" if ":" in line else None)
        if sep is None:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition(sep)
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"line {lineno}: unknown configuration key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        values[key] = val.strip()
    missing = [k for k in CONFIG_KEYS if k not in values]
    if missing:
        raise ConfigurationError(f"missing configuration keys: {', '.join(missing)}")
    try:
        times = tuple(float(v) for v in values["times"].replace(",", " ").split())
        grid = TimeGrid(times, n_total=int(values["n_total_steps"]))
        ref = ReferenceConfig(sigma=float(values["sigma"]))
        train = TrainConfig(
            batch_size=int(values["batch_size"]),
            warmup_steps=int(values["warmup_steps"]),
            outer_iterations=int(values["outer_iterations"]),
            inner_steps=int(values["inner_steps"]),
            learning_rate=float(values["learning_rate"]),
            seed=int(values["seed"]),
        )
    except ConfigurationError:
        raise
    except ValueError as exc:
        raise ConfigurationError(f"bad configuration value: {exc}") from exc
    return RunConfig(grid=grid, ref=ref, train=train)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
