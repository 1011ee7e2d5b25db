"""Brownian reference process: bridge interpolation, drift targets, analytic moments.

A pinned Brownian bridge on ``[t_init, t_final]`` with endpoints ``(x0, x1)``
has mean ``(1-s) x0 + s x1`` and per-coordinate variance
``sigma^2 * (t_final - t_init) * s * (1-s)`` at relative position
``s = (t - t_init) / (t_final - t_init)``. Sampling that law row-wise is the
factorized reciprocal projection for an empirical endpoint coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ReferenceConfig, SampleBatch, TIME_MARGIN_FRACTION


def _as_rowwise(t, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(n, float(t))
    if t.shape != (n,):
        raise ValueError(f"expected per-row times of shape ({n},), got {t.shape}")
    return t


@dataclass
class BridgePairBatch:
    """Endpoint pairs for one batch of bridges; rows may live on different intervals."""

    X_init: np.ndarray
    X_final: np.ndarray
    t_init: np.ndarray
    t_final: np.ndarray

    def __post_init__(self):
        self.X_init = np.asarray(self.X_init, dtype=np.float64)
        self.X_final = np.asarray(self.X_final, dtype=np.float64)
        if self.X_init.shape != self.X_final.shape or self.X_init.ndim != 2:
            raise ValueError(
                f"endpoint shapes must agree, got {self.X_init.shape} vs {self.X_final.shape}"
            )
        n = self.X_init.shape[0]
        self.t_init = _as_rowwise(self.t_init, n)
        self.t_final = _as_rowwise(self.t_final, n)
        if not np.all(self.t_init < self.t_final):
            raise ValueError("need t_init < t_final row-wise")

    @property
    def n(self) -> int:
        return self.X_init.shape[0]


def interp(pairs: BridgePairBatch, t, Z: np.ndarray, ref: ReferenceConfig) -> SampleBatch:
    """Sample the reference bridge at per-row times ``t``: one reciprocal-projection draw.

    Returns ``(1-s) X_init + s X_final + sqrt(sigma^2 * delta * s * (1-s)) * Z``.
    Endpoints are pinned bit-exactly at s = 0 and s = 1.
    """
    t = _as_rowwise(t, pairs.n)
    delta = pairs.t_final - pairs.t_init
    if np.any(delta <= 0):
        raise ValueError("degenerate zero-length interval")
    if np.any(t < pairs.t_init) or np.any(t > pairs.t_final):
        raise ValueError("interpolation time outside [t_init, t_final]")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape != pairs.X_init.shape:
        raise ValueError(f"noise shape {Z.shape} must match endpoints {pairs.X_init.shape}")
    s = ((t - pairs.t_init) / delta)[:, None]
    scale = np.sqrt(ref.sigma**2 * delta[:, None] * s * (1.0 - s))
    points = (1.0 - s) * pairs.X_init + s * pairs.X_final + scale * Z
    return SampleBatch(points=points, times=t)


def forward_target(X_t: np.ndarray, X_final: np.ndarray, t, t_final) -> np.ndarray:
    """Conditional forward drift target ``(X_final - X_t) / (t_final - t)``."""
    X_t = np.asarray(X_t, dtype=np.float64)
    t = _as_rowwise(t, X_t.shape[0])
    t_final = _as_rowwise(t_final, X_t.shape[0])
    if np.any(t >= t_final):
        raise ValueError("forward target is singular at t >= t_final")
    return (np.asarray(X_final, dtype=np.float64) - X_t) / (t_final - t)[:, None]


def backward_target(X_t: np.ndarray, X_init: np.ndarray, t, t_init) -> np.ndarray:
    """Conditional backward drift target ``(X_init - X_t) / (t - t_init)``."""
    X_t = np.asarray(X_t, dtype=np.float64)
    t = _as_rowwise(t, X_t.shape[0])
    t_init = _as_rowwise(t_init, X_t.shape[0])
    if np.any(t <= t_init):
        raise ValueError("backward target is singular at t <= t_init")
    return (np.asarray(X_init, dtype=np.float64) - X_t) / (t - t_init)[:, None]


def bridge_moments(x0, x1, t: float, interval, ref: ReferenceConfig):
    """Analytic bridge law at time ``t``: (mean vector, per-coordinate variance)."""
    t_lo, t_hi = float(interval[0]), float(interval[1])
    if not t_lo <= t <= t_hi:
        raise ValueError(f"t={t} outside interval [{t_lo}, {t_hi}]")
    delta = t_hi - t_lo
    if delta <= 0:
        raise ValueError("degenerate zero-length interval")
    s = (t - t_lo) / delta
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    mean = (1.0 - s) * x0 + s * x1
    var = ref.sigma**2 * delta * s * (1.0 - s)
    return mean, var


def sample_bridge_times(rng: np.random.Generator, t_init, t_final, n: int) -> np.ndarray:
    """Uniform per-row times on the interval, clamped away from both endpoints.

    The clamp keeps drift targets at least TIME_MARGIN_FRACTION of the interval
    length away from their 1/(t_end - t) singularities.
    """
    t_init = _as_rowwise(t_init, n)
    t_final = _as_rowwise(t_final, n)
    margin = TIME_MARGIN_FRACTION * (t_final - t_init)
    t = rng.uniform(t_init, t_final)
    return np.clip(t, t_init + margin, t_final - margin)
