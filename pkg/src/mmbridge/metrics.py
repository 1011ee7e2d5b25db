"""Two-sample evaluation: exact W2, unbiased RBF MMD, sliced Wasserstein, moments.

W2 uses exact assignment so small-sample comparisons carry no solver noise.
MMD defaults to the median-heuristic bandwidth on the pooled sample, and the
bandwidth travels with every reported value. SWD averages closed-form 1-d W2
over random unit projections.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import seeded_rng

W2_MAX_ROWS = 2000
DEFAULT_NUM_PROJECTIONS = 128


def _rows(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] < 1:
        raise ValueError("expected a nonempty (n, d) sample array")
    return A


def _subsample(rng, X, k):
    idx = rng.choice(X.shape[0], size=k, replace=False)
    return X[np.sort(idx)]


def w2_exact(A, B, rng=None) -> float:
    """2-Wasserstein distance between empirical measures via exact assignment.

    Unequal sizes (or more than 2000 rows) are seeded-subsampled to a common
    size, with a warning naming the size used.
    """
    A, B = _rows(A), _rows(B)
    n = min(A.shape[0], B.shape[0], W2_MAX_ROWS)
    if A.shape[0] != n or B.shape[0] != n:
        rng = rng if rng is not None else seeded_rng(0)
        warnings.warn(
            f"w2_exact: subsampled inputs of {A.shape[0]} and {B.shape[0]} rows to {n}",
            stacklevel=2,
        )
        if A.shape[0] != n:
            A = _subsample(rng, A, n)
        if B.shape[0] != n:
            B = _subsample(rng, B, n)
    diff = A[:, None, :] - B[None, :, :]
    cost = np.sum(diff * diff, axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def median_bandwidth(A, B) -> float:
    """Median pairwise distance over the pooled sample (the MMD default)."""
    P = np.concatenate([_rows(A), _rows(B)], axis=0)
    sq = np.sum(P * P, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (P @ P.T)
    iu = np.triu_indices(P.shape[0], k=1)
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    return med if med > 0 else 1.0


def mmd_rbf(A, B, bandwidth=None) -> float:
    """Unbiased Gaussian-kernel MMD estimate, clamped at 0 before the root."""
    A, B = _rows(A), _rows(B)
    n, m = A.shape[0], B.shape[0]
    if n < 2 or m < 2:
        raise ValueError("unbiased MMD needs at least 2 rows per sample")
    h = bandwidth if bandwidth is not None else median_bandwidth(A, B)

    def kernel(X, Y):
        sx = np.sum(X * X, axis=1)
        sy = np.sum(Y * Y, axis=1)
        d2 = np.maximum(sx[:, None] + sy[None, :] - 2.0 * (X @ Y.T), 0.0)
        return np.exp(-d2 / (2.0 * h * h))

    Kaa = kernel(A, A)
    Kbb = kernel(B, B)
    term_a = (Kaa.sum() - np.trace(Kaa)) / (n * (n - 1))
    term_b = (Kbb.sum() - np.trace(Kbb)) / (m * (m - 1))
    # fsum makes the cross term independent of argument order, so
    # mmd(A, B) == mmd(B, A) bit-exactly
    cross = math.fsum(kernel(A, B).ravel()) / (n * m)
    mmd2 = max(term_a + term_b - 2.0 * cross, 0.0)
    return float(np.sqrt(mmd2))


def _w2_1d(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(a)
    b = np.sort(b)
    if a.shape == b.shape:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    levels = max(len(a), len(b))
    q = (np.arange(levels) + 0.5) / levels
    qa = a[np.minimum((q * len(a)).astype(int), len(a) - 1)]
    qb = b[np.minimum((q * len(b)).astype(int), len(b) - 1)]
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


def sliced_w(A, B, num_projections=DEFAULT_NUM_PROJECTIONS, rng=None) -> float:
    """Average of 1-d W2 along random unit directions (quantile pairing)."""
    A, B = _rows(A), _rows(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError("samples disagree on dimension")
    rng = rng if rng is not None else seeded_rng(0)
    dirs = rng.standard_normal((num_projections, A.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = [_w2_1d(A @ u, B @ u) for u in dirs]
    return float(np.mean(vals))


@dataclass
class MomentCurves:
    """Per-time mean/variance (coordinate-averaged) and anchor covariance."""

    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None  # vs most recent grid-time state

    def as_rows(self):
        for j, t in enumerate(self.times):
            cov = self.covariance[j] if self.covariance is not None else float("nan")
            yield float(t), float(self.mean[j]), float(self.variance[j]), float(cov)


def moment_track(traj, grid=None) -> MomentCurves:
    """Moment curves along a trajectory batch with a shared time axis.

    Covariance is between X_t and the state at the most recent grid time
    (requires ``grid``); at anchor times it coincides with the variance.
    """
    times = traj.shared_times()
    X = traj.states
    mean = X.mean(axis=(0, 2))
    variance = X.var(axis=0, ddof=1).mean(axis=1)

    covariance = None
    if grid is not None:
        grid_times = np.asarray(grid.times)
        anchor = np.zeros(len(times), dtype=int)
        last = 0
        for j, t in enumerate(times):
            if np.any(np.abs(grid_times - t) <= 1e-9):
                last = j
            anchor[j] = last
        covariance = np.empty(len(times))
        n = X.shape[0]
        for j in range(len(times)):
            a = X[:, j, :] - X[:, j, :].mean(axis=0)
            b = X[:, anchor[j], :] - X[:, anchor[j], :].mean(axis=0)
            covariance[j] = float(np.sum(a * b) / ((n - 1) * X.shape[2]))

    return MomentCurves(times=np.asarray(times), mean=mean, variance=variance,
                        covariance=covariance)


@dataclass
class MetricReport:
    """Per-target-time metric values plus averages and path energy."""

    times: tuple
    w2: tuple | None = None
    mmd: tuple | None = None
    mmd_bandwidth: tuple | None = None
    swd: tuple | None = None
    path_energy: float | None = None
    moments: MomentCurves | None = None

    def __post_init__(self):
        for vals in (self.w2, self.mmd, self.swd):
            if vals is not None:
                arr = np.asarray(vals)
                if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                    raise ValueError("metric values must be finite and nonnegative")

    def average(self, which: str) -> float:
        vals = getattr(self, which)
        if vals is None:
            raise ValueError(f"{which} was not computed")
        return float(np.mean(vals))

    def as_text(self) -> str:
        """Structured report: full per-time block, then the per-timepoint
        mmd/swd table (rows t1..tK and the average), then path energy."""
        lines = ["# marginal metrics"]
        header = ["time"]
        for name in ("w2", "mmd", "mmd_bandwidth", "swd"):
            if getattr(self, name) is not None:
                header.append(name)
        lines.append(",".join(header))
        for j, t in enumerate(self.times):
            row = [f"{t:g}"]
            for name in ("w2", "mmd", "mmd_bandwidth", "swd"):
                vals = getattr(self, name)
                if vals is not None:
                    row.append(f"{vals[j]:.6f}")
            lines.append(",".join(row))

        if self.mmd is not None and self.swd is not None:
            lines.append("")
            lines.append("# per-timepoint summary")
            lines.append("time,mmd,swd")
            for j in range(len(self.times)):
                lines.append(f"t{j + 1},{self.mmd[j]:.4f},{self.swd[j]:.4f}")
            lines.append(f"average,{self.average('mmd'):.4f},{self.average('swd'):.4f}")

        if self.path_energy is not None:
            lines.append("")
            lines.append(f"path_energy,{self.path_energy:.6f}")

        if self.moments is not None:
            lines.append("")
            lines.append("# moment curves")
            lines.append("t,mean,variance,covariance")
            for t, m, v, c in self.moments.as_rows():
                lines.append(f"{t!r},{m!r},{v!r},{c!r}")
        return "\n".join(lines) + "\n"
