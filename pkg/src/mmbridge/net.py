"""Time-conditioned drift network: plain MLP with hand-written reverse mode and Adam.

The network maps ``(t, x)`` to a drift vector in R^d. Time enters through a
sinusoidal embedding concatenated with ``x`` at the input layer, so one
network covers every bridge interval. Parameters live in one flat float64
array; gradients come from an explicit backward pass, checked against finite
differences in the test suite.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import DivergenceError, seeded_rng

DEFAULT_HIDDEN = (256, 256, 256)
DEFAULT_EMBED_DIM = 64

# Lowest embedding frequency is pi, so the first cosine feature is strictly
# monotone on the normalized time range and the embedding separates any two
# distinct times. Higher frequencies grow geometrically up to 100*pi.
EMBED_BASE_FREQ = np.pi
EMBED_MAX_FACTOR = 100.0

# All dense products run through GEMM tiles of a fixed row count so a row's
# result never depends on batch size or on its neighbours (pure per-row map).
_GEMM_TILE = 128

_CHECKPOINT_MAGIC = b"MMBRNET1"


def embed_frequencies(embed_dim: int) -> np.ndarray:
    if embed_dim < 2 or embed_dim % 2 != 0:
        raise ValueError(f"embed_dim must be even and >= 2, got {embed_dim}")
    n_freq = embed_dim // 2
    if n_freq == 1:
        return np.array([EMBED_BASE_FREQ])
    expo = np.arange(n_freq) / (n_freq - 1)
    return EMBED_BASE_FREQ * EMBED_MAX_FACTOR**expo


def time_embed(t, embed_dim: int = DEFAULT_EMBED_DIM, t0: float = 0.0, horizon: float = 1.0):
    """Sinusoidal time features ``[sin(w_j s), cos(w_j s)]`` with s = (t - t0)/horizon."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    s = (t - t0) / horizon
    phases = s[:, None] * embed_frequencies(embed_dim)[None, :]
    return np.concatenate([np.sin(phases), np.cos(phases)], axis=1)


def _matmul_rows(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``X @ W`` evaluated in fixed-height GEMM tiles (batch-size independent rows)."""
    n = X.shape[0]
    if n == _GEMM_TILE:
        return X @ W
    out = np.empty((n, W.shape[1]), dtype=np.float64)
    for start in range(0, n, _GEMM_TILE):
        stop = min(start + _GEMM_TILE, n)
        if stop - start == _GEMM_TILE:
            out[start:stop] = X[start:stop] @ W
        else:
            pad = np.zeros((_GEMM_TILE, X.shape[1]), dtype=np.float64)
            pad[: stop - start] = X[start:stop]
            out[start:stop] = (pad @ W)[: stop - start]
    return out


def _silu(z: np.ndarray) -> np.ndarray:
    return z / (1.0 + np.exp(-z))


def _silu_grad(z: np.ndarray) -> np.ndarray:
    sig = 1.0 / (1.0 + np.exp(-z))
    return sig * (1.0 + z * (1.0 - sig))


def _layer_slices(sizes):
    out = []
    off = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = fan_in * fan_out
        out.append((slice(off, off + w), (fan_in, fan_out), slice(off + w, off + w + fan_out)))
        off += w + fan_out
    return out, off


def network_param_count(dim: int, hidden=DEFAULT_HIDDEN, embed_dim: int = DEFAULT_EMBED_DIM) -> int:
    sizes = [dim + embed_dim, *hidden, dim]
    return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class DriftNetwork:
    """MLP drift ``v(t, x)`` with SiLU activations and a flat parameter vector."""

    dim: int
    hidden: tuple
    embed_dim: int
    t0: float
    horizon: float
    params: np.ndarray
    _slices: list = field(init=False, repr=False)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        sizes = [self.dim + self.embed_dim, *self.hidden, self.dim]
        self._slices, count = _layer_slices(sizes)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (count,):
            raise ValueError(f"expected {count} parameters, got shape {self.params.shape}")

    def layers(self):
        for w_sl, w_shape, b_sl in self._slices:
            yield self.params[w_sl].reshape(w_shape), self.params[b_sl]

    def __call__(self, t, x):
        return forward_pass(self, t, x)

    def clone(self) -> "DriftNetwork":
        return DriftNetwork(
            dim=self.dim,
            hidden=self.hidden,
            embed_dim=self.embed_dim,
            t0=self.t0,
            horizon=self.horizon,
            params=self.params.copy(),
        )


def init_drift_network(
    dim: int,
    t0: float,
    horizon: float,
    hidden=DEFAULT_HIDDEN,
    embed_dim: int = DEFAULT_EMBED_DIM,
    rng: np.random.Generator | None = None,
) -> DriftNetwork:
    """He-initialized hidden layers; final layer zeroed so the initial drift is 0."""
    rng = rng if rng is not None else seeded_rng(0)
    sizes = [dim + embed_dim, *hidden, dim]
    slices, count = _layer_slices(sizes)
    params = np.zeros(count, dtype=np.float64)
    for li, (w_sl, (fan_in, fan_out), _b_sl) in enumerate(slices):
        if li == len(slices) - 1:
            break  # final layer stays zero
        params[w_sl] = (rng.standard_normal(fan_in * fan_out) * np.sqrt(2.0 / fan_in))
    return DriftNetwork(
        dim=dim, hidden=tuple(hidden), embed_dim=embed_dim, t0=t0, horizon=horizon, params=params
    )


def _forward_cached(net: DriftNetwork, t, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.dim:
        raise ValueError(f"expected inputs of shape (n, {net.dim}), got {x.shape}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if t.shape == (1,) and x.shape[0] != 1:
        t = np.full(x.shape[0], t[0])
    if t.shape != (x.shape[0],):
        raise ValueError(f"times of shape {t.shape} do not match batch of {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise DivergenceError("non-finite network input")
    h = np.concatenate([x, time_embed(t, net.embed_dim, net.t0, net.horizon)], axis=1)
    hs = [h]
    zs = []
    layers = list(net.layers())
    for W, b in layers[:-1]:
        z = _matmul_rows(h, W) + b
        zs.append(z)
        h = _silu(z)
        hs.append(h)
    W, b = layers[-1]
    out = _matmul_rows(h, W) + b
    return out, hs, zs


def forward_pass(net: DriftNetwork, t, x) -> np.ndarray:
    """Drift values ``v(t, x)`` for a batch; deterministic and finite."""
    out, _, _ = _forward_cached(net, t, x)
    return out


def loss_and_grad(net: DriftNetwork, t, x, target):
    """Mean-of-squared-norm regression loss and its parameter gradient.

    loss = ||v(t, x) - target||^2 / batch, summed over rows and coordinates.
    """
    target = np.asarray(target, dtype=np.float64)
    if not np.all(np.isfinite(target)):
        raise DivergenceError("non-finite regression target")
    out, hs, zs = _forward_cached(net, t, x)
    n = out.shape[0]
    diff = out - target
    loss = float(np.sum(diff * diff) / n)
    grad = np.zeros_like(net.params)
    layers = list(net.layers())

    d_out = (2.0 / n) * diff
    for li in range(len(layers) - 1, -1, -1):
        W, _b = layers[li]
        w_sl, w_shape, b_sl = net._slices[li]
        grad[w_sl] = (hs[li].T @ d_out).reshape(-1)
        grad[b_sl] = d_out.sum(axis=0)
        if li > 0:
            d_out = (d_out @ W.T) * _silu_grad(zs[li - 1])
    return loss, grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, param_count: int, learning_rate: float = 2e-4) -> "AdamState":
        return cls(
            m=np.zeros(param_count, dtype=np.float64),
            v=np.zeros(param_count, dtype=np.float64),
            learning_rate=learning_rate,
        )


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new parameters."""
    if grad.shape != params.shape or grad.shape != state.m.shape:
        raise ValueError("gradient/parameter/state shapes disagree")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def save_network(net: DriftNetwork, path) -> None:
    """Binary checkpoint: magic + JSON architecture header + little-endian float64 block."""
    header = json.dumps(
        {
            "dim": net.dim,
            "hidden": list(net.hidden),
            "embed_dim": net.embed_dim,
            "t0": net.t0,
            "horizon": net.horizon,
            "param_count": int(net.params.size),
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(net.params.astype("<f8").tobytes())


def load_network(path) -> DriftNetwork:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"not a drift-network checkpoint: {path}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(hlen).decode("utf-8"))
        params = np.frombuffer(fh.read(8 * meta["param_count"]), dtype="<f8").astype(np.float64)
    return DriftNetwork(
        dim=meta["dim"],
        hidden=tuple(meta["hidden"]),
        embed_dim=meta["embed_dim"],
        t0=meta["t0"],
        horizon=meta["horizon"],
        params=params,
    )
