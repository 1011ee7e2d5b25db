"""Discrete multi-marginal entropic OT ground truth on chain-structured costs.

The joint over all grid times factorizes as prod_i u_i(x_i) * prod_i
K_i(x_i, x_{i+1}) with Gaussian transition kernels, so marginals come from
forward/backward message passing and the Sinkhorn-style potential updates
never materialize the full joint. Everything runs in log space; these are
desk-scale tools (a few marginals, tens of atoms) by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import DivergenceError, ReferenceConfig, TimeGrid, seeded_rng

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 5000

# exact drifts are evaluated no closer to an endpoint than this fraction of
# the interval (same guard as training-time targets)
DRIFT_TIME_MARGIN = 1e-3

_JOINT_MAX_MARGINALS = 3
_JOINT_MAX_ATOMS = 20


def _as_support(S) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if S.ndim != 2 or S.shape[0] < 1:
        raise ValueError("supports must be nonempty (m, d) arrays")
    return S


def _log_kernels(supports, grid: TimeGrid, ref: ReferenceConfig):
    kernels = []
    for i in range(grid.num_intervals):
        diff = supports[i][:, None, :] - supports[i + 1][None, :, :]
        sq = np.sum(diff * diff, axis=2)
        kernels.append(-sq / (2.0 * ref.sigma**2 * grid.interval_length(i)))
    return kernels


def _messages(log_u, log_K):
    """Forward/backward chain messages excluding the local potential."""
    K = len(log_K)
    fwd = [np.zeros_like(log_u[0])]
    for i in range(K):
        fwd.append(logsumexp(fwd[i][:, None] + log_u[i][:, None] + log_K[i], axis=0))
    bwd = [None] * (K + 1)
    bwd[K] = np.zeros_like(log_u[K])
    for i in range(K - 1, -1, -1):
        bwd[i] = logsumexp(log_K[i] + log_u[i + 1][None, :] + bwd[i + 1][None, :], axis=1)
    return fwd, bwd


def _log_marginal(i, log_u, fwd, bwd):
    unnorm = log_u[i] + fwd[i] + bwd[i]
    return unnorm - logsumexp(unnorm)


@dataclass
class DiscreteCoupling:
    """Converged factored joint: supports, potentials, and transition kernels."""

    supports: tuple
    log_potentials: tuple
    weights: tuple
    grid: TimeGrid
    ref: ReferenceConfig
    residuals: list = field(default_factory=list)

    @property
    def num_marginals(self) -> int:
        return len(self.supports)

    @property
    def potentials(self) -> tuple:
        return tuple(np.exp(lu) for lu in self.log_potentials)

    def _log_kernels(self):
        return _log_kernels(self.supports, self.grid, self.ref)

    def marginal(self, i: int) -> np.ndarray:
        fwd, bwd = _messages(self.log_potentials, self._log_kernels())
        return np.exp(_log_marginal(i, self.log_potentials, fwd, bwd))

    def log_pairwise_marginal(self, i: int) -> np.ndarray:
        log_u = self.log_potentials
        fwd, bwd = _messages(log_u, self._log_kernels())
        table = (fwd[i][:, None] + log_u[i][:, None] + self._log_kernels()[i]
                 + log_u[i + 1][None, :] + bwd[i + 1][None, :])
        return table - logsumexp(table)

    def pairwise_marginal(self, i: int) -> np.ndarray:
        return np.exp(self.log_pairwise_marginal(i))

    def materialize_joint(self) -> np.ndarray:
        """Full joint table; guarded to at most 3 marginals of at most 20 atoms."""
        sizes = [s.shape[0] for s in self.supports]
        if self.num_marginals > _JOINT_MAX_MARGINALS or max(sizes) > _JOINT_MAX_ATOMS:
            raise ValueError(
                f"joint table limited to {_JOINT_MAX_MARGINALS} marginals x "
                f"{_JOINT_MAX_ATOMS} atoms, got {sizes}"
            )
        log_K = self._log_kernels()
        log_u = self.log_potentials
        log_joint = log_u[0][:, None] + log_K[0] + log_u[1][None, :]
        if self.num_marginals == 3:
            log_joint = (log_joint[:, :, None] + log_K[1][None, :, :]
                         + log_u[2][None, None, :])
        log_joint = log_joint - logsumexp(log_joint)
        return np.exp(log_joint)


def chain_sinkhorn(supports, weights, grid: TimeGrid, ref: ReferenceConfig,
                   tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> DiscreteCoupling:
    """Iterative Bregman projections on the factored chain joint.

    Cycles over marginals, rescaling each potential so the corresponding
    marginal of the current joint matches its target; stops when the largest
    marginal L1 residual over a full cycle is at most ``tol``.
    """
    supports = tuple(_as_support(S) for S in supports)
    if len(supports) != len(grid.times):
        raise ValueError(f"need {len(grid.times)} supports, got {len(supports)}")
    dims = {S.shape[1] for S in supports}
    if len(dims) != 1:
        raise ValueError("supports disagree on dimension")
    if weights is None:
        weights = tuple(np.full(S.shape[0], 1.0 / S.shape[0]) for S in supports)
    else:
        weights = tuple(np.asarray(w, dtype=np.float64) for w in weights)
    for S, w in zip(supports, weights):
        if w.shape != (S.shape[0],):
            raise ValueError("one weight per support atom required")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive (drop zero atoms)")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    log_K = _log_kernels(supports, grid, ref)
    log_w = [np.log(w) for w in weights]
    log_u = [lw.copy() for lw in log_w]

    residuals = []
    for _cycle in range(max_iter):
        for i in range(len(supports)):
            fwd, bwd = _messages(log_u, log_K)
            log_u[i] = log_u[i] + log_w[i] - _log_marginal(i, log_u, fwd, bwd)
        fwd, bwd = _messages(log_u, log_K)
        res = max(
            float(np.abs(np.exp(_log_marginal(i, log_u, fwd, bwd)) - weights[i]).sum())
            for i in range(len(supports))
        )
        residuals.append(res)
        if res <= tol:
            return DiscreteCoupling(
                supports=supports,
                log_potentials=tuple(lu.copy() for lu in log_u),
                weights=weights,
                grid=grid,
                ref=ref,
                residuals=residuals,
            )
    err = DivergenceError(
        f"chain sinkhorn did not reach tol={tol} in {max_iter} cycles "
        f"(last residuals: {residuals[-3:]})"
    )
    err.residuals = residuals
    raise err


@dataclass
class InteriorLaw:
    """Mixture of bridge Gaussians: the coupling's law at an interior time."""

    weights: np.ndarray    # (pairs,)
    means: np.ndarray      # (pairs, d)
    variance: float        # isotropic per-coordinate bridge variance

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def variance_per_dim(self) -> np.ndarray:
        # law of total variance: bridge noise plus spread of the pair means
        m = self.mean()
        centered = self.means - m
        return self.variance + self.weights @ (centered * centered)

    def sample(self, rng, n: int) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        out = self.means[idx]
        if self.variance > 0:
            out = out + np.sqrt(self.variance) * rng.standard_normal(out.shape)
        return out


def _interval_for(grid: TimeGrid, t: float, prefer_right: bool) -> int:
    if t < grid.t0 - 1e-12 or t > grid.t_end + 1e-12:
        raise ValueError(f"time {t} outside the grid range")
    side = "right" if prefer_right else "left"
    i = int(np.searchsorted(np.asarray(grid.times), t, side=side)) - 1
    return int(np.clip(i, 0, grid.num_intervals - 1))


def oracle_interior_marginal(coupling: DiscreteCoupling, t: float) -> InteriorLaw:
    """Exact interior law of the coupling at time t: a bridge-Gaussian mixture."""
    grid = coupling.grid
    i = _interval_for(grid, t, prefer_right=True)
    t_i, t_j = grid.interval(i)
    delta = t_j - t_i
    s = (t - t_i) / delta
    pair = coupling.pairwise_marginal(i)
    X, Y = coupling.supports[i], coupling.supports[i + 1]
    means = (1.0 - s) * X[:, None, :] + s * Y[None, :, :]
    variance = coupling.ref.sigma**2 * delta * s * (1.0 - s)
    return InteriorLaw(weights=pair.reshape(-1),
                       means=means.reshape(-1, X.shape[1]),
                       variance=float(variance))


@dataclass
class OracleDrift:
    """Conditional-expectation drift of the coupling's bridge mixture.

    Forward: (E[X_right | X_t = x] - x)/(t_right - t); backward mirrors with
    the left endpoint. Drop-in replacement for a drift network in simulation.
    """

    coupling: DiscreteCoupling
    direction: str = "forward"

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def __call__(self, t, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if t.shape == (1,) and x.shape[0] != 1:
            t = np.full(x.shape[0], t[0])
        out = np.empty_like(x)
        grid = self.coupling.grid
        if np.any(t < grid.t0 - 1e-12) or np.any(t > grid.t_end + 1e-12):
            raise ValueError("drift time outside the grid range")
        side = "right" if self.direction == "forward" else "left"
        idx = np.clip(np.searchsorted(np.asarray(grid.times), t, side=side) - 1,
                      0, grid.num_intervals - 1)
        for i in np.unique(idx):
            rows = idx == i
            out[rows] = self._interval_drift(int(i), t[rows], x[rows])
        return out

    def _interval_drift(self, i, t, x):
        grid, ref = self.coupling.grid, self.coupling.ref
        t_i, t_j = grid.interval(i)
        delta = t_j - t_i
        margin = DRIFT_TIME_MARGIN * delta
        t = np.clip(t, t_i + margin, t_j - margin)
        s = (t - t_i) / delta

        X, Y = self.coupling.supports[i], self.coupling.supports[i + 1]
        log_pair = self.coupling.log_pairwise_marginal(i).reshape(-1)
        means = ((1.0 - s)[:, None, None, None] * X[None, :, None, :]
                 + s[:, None, None, None] * Y[None, None, :, :]).reshape(len(t), -1, x.shape[1])
        var = (ref.sigma**2 * delta * s * (1.0 - s))[:, None]

        diff = x[:, None, :] - means
        log_post = log_pair[None, :] - np.sum(diff * diff, axis=2) / (2.0 * var)
        log_post = log_post - logsumexp(log_post, axis=1, keepdims=True)
        post = np.exp(log_post)

        # expected endpoint under the posterior over support pairs
        if self.direction == "forward":
            pair_endpoint = np.repeat(Y[None, :, :], X.shape[0], axis=0).reshape(-1, x.shape[1])
            expect = post @ pair_endpoint
            return (expect - x) / (t_j - t)[:, None]
        pair_endpoint = np.repeat(X[:, None, :], Y.shape[0], axis=1).reshape(-1, x.shape[1])
        expect = post @ pair_endpoint
        return (expect - x) / (t - t_i)[:, None]


@dataclass
class EmpiricalCoupling:
    """Per-interval endpoint frequency tables from simulated paths."""

    tables: tuple           # one (m_i, m_{i+1}) array per interval
    overflow: tuple         # fraction of endpoints not matching any atom
    paths_per_atom: int


def empirical_coupling(forward_drift, supports, grid: TimeGrid, ref: ReferenceConfig,
                       weights=None, paths_per_atom=1000, rng=None) -> EmpiricalCoupling:
    """Simulate paths from every start atom and snap endpoints to target atoms.

    Endpoints farther than half the minimum target inter-atom distance from
    every atom land in an overflow bin. Rows of table i sum to the start
    weights minus that overflow mass.
    """
    from .integrate import sde_simulate as sim

    if rng is None:
        rng = seeded_rng(0)
    supports = tuple(_as_support(S) for S in supports)
    if weights is None:
        weights = tuple(np.full(S.shape[0], 1.0 / S.shape[0]) for S in supports)

    tables = []
    overflow = []
    for i in range(grid.num_intervals):
        X, Y = supports[i], supports[i + 1]
        m, d = X.shape
        if Y.shape[0] > 1:
            pair_d = np.sqrt(np.sum((Y[:, None, :] - Y[None, :, :]) ** 2, axis=2))
            snap_radius = 0.5 * pair_d[pair_d > 0].min()
        else:
            snap_radius = np.inf
        starts = np.repeat(X, paths_per_atom, axis=0)
        traj = sim(starts, np.full(len(starts), i), forward_drift, "forward",
                   grid, ref, rng)
        ends = traj.final_states()
        dists = np.sqrt(np.sum((ends[:, None, :] - Y[None, :, :]) ** 2, axis=2))
        nearest = np.argmin(dists, axis=1)
        ok = dists[np.arange(len(ends)), nearest] <= snap_radius
        counts = np.zeros((m, Y.shape[0]))
        atom_of_row = np.repeat(np.arange(m), paths_per_atom)
        np.add.at(counts, (atom_of_row[ok], nearest[ok]), 1.0)
        table = weights[i][:, None] * counts / paths_per_atom
        tables.append(table)
        overflow.append(float(np.sum(~ok)) / len(ends))
    return EmpiricalCoupling(tables=tuple(tables), overflow=tuple(overflow),
                             paths_per_atom=paths_per_atom)


def total_variation(P: np.ndarray, Q: np.ndarray) -> float:
    """TV distance between two (possibly sub-)probability tables."""
    return 0.5 * float(np.abs(np.asarray(P) - np.asarray(Q)).sum())
