"""Snapshot dataset generators and the tabular loader.

Each dataset is a sequence of unpaired marginals pinned to the grid times,
split into train and test rows. Toy generators use fixed geometry constants
(recorded below); the loader ingests any comma-separated table whose first
column is a timepoint label and standardizes features to zero mean and unit
variance on the pooled training rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import DataError, seeded_rng

# Geometry constants for the toy tasks. The two-mixture centers sit at
# x = +-4 with the shared y coordinate flipping sign at each grid time, so the
# optimal transport between consecutive marginals is a vertical translation of
# each component.
MIXTURE_X_OFFSET = 4.0
MIXTURE_Y_AMPLITUDE = 2.0

MOON_NOISE = 0.05

EIGHT_RADIUS = 5.0
EIGHT_COMPONENT_STD = np.sqrt(0.1)

GAUSSIAN_50D_DIM = 50
GAUSSIAN_50D_MEAN = 0.1


@dataclass(frozen=True)
class MarginalDataset:
    """Unpaired marginals on a time grid with a shared standardization."""

    name: str
    times: tuple
    train: tuple
    test: tuple
    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if len(self.train) != len(self.times) or len(self.test) != len(self.times):
            raise DataError("marginal count does not match grid times")
        if len(self.times) < 2:
            raise DataError("need at least two marginals")
        dims = {m.shape[1] for m in self.train} | {m.shape[1] for m in self.test if m.size}
        if len(dims) != 1:
            raise DataError(f"marginals disagree on dimension: {sorted(dims)}")
        for split in (self.train, self.test):
            for m in split:
                if not np.all(np.isfinite(m)):
                    raise DataError("non-finite dataset entries")
        if min(m.shape[0] for m in self.train) < 1:
            raise DataError("empty training marginal")

    @property
    def dim(self) -> int:
        return self.train[0].shape[1]

    @property
    def num_marginals(self) -> int:
        return len(self.times)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.shift) / self.scale

    def destandardize(self, X: np.ndarray) -> np.ndarray:
        return X * self.scale + self.shift


def _identity_standardization(dim: int):
    return np.zeros(dim), np.ones(dim)


def _finalize(name, times, marginals, n_train):
    train = tuple(m[:n_train] for m in marginals)
    test = tuple(m[n_train:] for m in marginals)
    shift, scale = _identity_standardization(marginals[0].shape[1])
    return MarginalDataset(name=name, times=tuple(times), train=train, test=test,
                           shift=shift, scale=scale)


def _sample_std_normal(rng, n, d=2):
    return rng.standard_normal((n, d))


def _sample_two_mixture(rng, n, y_sign):
    comp = rng.integers(0, 2, n)
    centers = np.column_stack([
        np.where(comp == 0, -MIXTURE_X_OFFSET, MIXTURE_X_OFFSET),
        np.full(n, y_sign * MIXTURE_Y_AMPLITUDE),
    ])
    return centers + rng.standard_normal((n, 2))


def _sample_moons(rng, n):
    theta = rng.uniform(0.0, np.pi, n)
    upper = rng.integers(0, 2, n).astype(bool)
    x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
    return np.column_stack([x, y]) + MOON_NOISE * rng.standard_normal((n, 2))


def _sample_eight_gaussians(rng, n):
    angle = rng.integers(0, 8, n) * (np.pi / 4.0)
    centers = EIGHT_RADIUS * np.column_stack([np.cos(angle), np.sin(angle)])
    return centers + EIGHT_COMPONENT_STD * rng.standard_normal((n, 2))


def gen_gaussian_mixture_sequence(n, seed, n_test=1000) -> MarginalDataset:
    """Three two-component Gaussian mixtures; consecutive marginals are translates."""
    rng = seeded_rng(seed)
    total = n + n_test
    marginals = [_sample_two_mixture(rng, total, (-1.0) ** k) for k in range(3)]
    return _finalize("mixture3", (0.0, 1.0, 2.0), marginals, n)


def gen_moons_sequence(n, seed, n_test=1000) -> MarginalDataset:
    """Standard normal -> two moons -> standard normal -> two moons at times 0..3."""
    rng = seeded_rng(seed)
    total = n + n_test
    marginals = [
        _sample_std_normal(rng, total),
        _sample_moons(rng, total),
        _sample_std_normal(rng, total),
        _sample_moons(rng, total),
    ]
    return _finalize("moons4", (0.0, 1.0, 2.0, 3.0), marginals, n)


def gen_8gaussians_sequence(n, seed, n_test=1000) -> MarginalDataset:
    """Standard normal -> ring of 8 Gaussians, repeated, at times 0..3."""
    rng = seeded_rng(seed)
    total = n + n_test
    marginals = [
        _sample_std_normal(rng, total),
        _sample_eight_gaussians(rng, total),
        _sample_std_normal(rng, total),
        _sample_eight_gaussians(rng, total),
    ]
    return _finalize("8gaussians4", (0.0, 1.0, 2.0, 3.0), marginals, n)


def gen_gaussian_50d(n, seed, n_test=1000) -> MarginalDataset:
    """Unit Gaussians in 50-d with mean alternating between -0.1 and +0.1."""
    rng = seeded_rng(seed)
    total = n + n_test
    marginals = []
    for k in range(4):
        sign = -1.0 if k % 2 == 0 else 1.0
        mean = sign * GAUSSIAN_50D_MEAN
        marginals.append(mean + rng.standard_normal((total, GAUSSIAN_50D_DIM)))
    return _finalize("gaussians50d", (0.0, 1.0, 2.0, 3.0), marginals, n)


def _pair_dataset(full: MarginalDataset, name: str) -> MarginalDataset:
    return MarginalDataset(name=name, times=(0.0, 1.0),
                           train=full.train[:2], test=full.test[:2],
                           shift=full.shift, scale=full.scale)


DATASET_NAMES = ("mixture3", "moons4", "moons2", "8gaussians4", "8gaussians2", "gaussians50d")


def make_dataset(name: str, n_train=2000, n_test=1000, seed=0) -> MarginalDataset:
    """Build a named toy dataset; the *2 variants keep only the first bridge."""
    if name == "mixture3":
        return gen_gaussian_mixture_sequence(n_train, seed, n_test)
    if name == "moons4":
        return gen_moons_sequence(n_train, seed, n_test)
    if name == "moons2":
        return _pair_dataset(gen_moons_sequence(n_train, seed, n_test), "moons2")
    if name == "8gaussians4":
        return gen_8gaussians_sequence(n_train, seed, n_test)
    if name == "8gaussians2":
        return _pair_dataset(gen_8gaussians_sequence(n_train, seed, n_test), "8gaussians2")
    if name == "gaussians50d":
        return gen_gaussian_50d(n_train, seed, n_test)
    raise DataError(f"unknown dataset {name!r}; known: {', '.join(DATASET_NAMES)}")


def load_snapshot_table(path, test_rows=0, name=None) -> MarginalDataset:
    """Load a comma-separated snapshot table (column 1 = timepoint label).

    Rows are grouped by timepoint and ordered by label value; features are
    standardized to zero mean and unit variance on the pooled training rows;
    the last ``test_rows`` rows of each group are withheld as the test split.
    Grid times are assigned unit spacing 0..K regardless of label values.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) < 2:
                raise DataError(f"{path}: need a header with a timepoint column and features")
            rows = list(reader)
    except OSError as err:
        raise DataError(f"cannot read snapshot table {path}: {err}") from err
    if not rows:
        raise DataError(f"{path}: no data rows")

    width = len(header)
    groups: dict = {}
    for idx, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {idx + 2} has {len(row)} columns, expected {width}")
        try:
            label = float(row[0])
            values = [float(v) for v in row[1:]]
        except ValueError as err:
            raise DataError(f"{path}: non-numeric entry in row {idx + 2}: {err}") from err
        groups.setdefault(label, []).append(values)

    labels = sorted(groups)
    if len(labels) < 2:
        raise DataError(f"{path}: need at least 2 timepoints, found {len(labels)}")

    marginals = [np.asarray(groups[lab], dtype=np.float64) for lab in labels]
    for lab, m in zip(labels, marginals):
        if m.shape[0] <= test_rows:
            raise DataError(f"{path}: timepoint {lab} has {m.shape[0]} rows, "
                            f"cannot withhold {test_rows}")

    train = [m[: m.shape[0] - test_rows] for m in marginals]
    test = [m[m.shape[0] - test_rows:] for m in marginals]

    pooled = np.concatenate(train, axis=0)
    shift = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    scale = np.where(std > 0, std, 1.0)  # constant columns pass through unscaled

    return MarginalDataset(
        name=name or f"snapshot:{path}",
        times=tuple(float(i) for i in range(len(labels))),
        train=tuple((m - shift) / scale for m in train),
        test=tuple((m - shift) / scale for m in test),
        shift=shift,
        scale=scale,
    )


def write_samples_csv(path, times, batches) -> None:
    """Export samples as comma-separated text with columns (time, x_1..x_d)."""
    batches = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in batches]
    if len(batches) != len(times):
        raise ValueError("one batch per time required")
    d = batches[0].shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"x_{j + 1}" for j in range(d)])
        for t, batch in zip(times, batches):
            for row in batch:
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_samples_csv(path):
    """Inverse of write_samples_csv: returns (times, batches) grouped by time."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "time":
            raise DataError(f"{path}: not a samples table")
        groups: dict = {}
        order = []
        for row in reader:
            t = float(row[0])
            if t not in groups:
                groups[t] = []
                order.append(t)
            groups[t].append([float(v) for v in row[1:]])
    return order, [np.asarray(groups[t]) for t in order]
