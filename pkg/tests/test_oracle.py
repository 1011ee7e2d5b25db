"""Discrete entropic-OT ground truth: solver, interior laws, exact drifts.

The load-bearing check regresses the chain solver against an independently
written dense two-marginal Sinkhorn on the same kernel. Everything here runs
on tiny supports so the whole file stays in the fast-suite budget.
"""

import numpy as np
import pytest
from scipy.special import logsumexp

from mmbridge import (
    DivergenceError,
    DiscreteCoupling,
    InteriorLaw,
    OracleDrift,
    ReferenceConfig,
    TimeGrid,
    chain_sinkhorn,
    empirical_coupling,
    oracle_interior_marginal,
    seeded_rng,
    total_variation,
)
from mmbridge.reference import bridge_moments


def dense_sinkhorn_log(a, w_a, b, w_b, epsilon, iters=20_000, tol=1e-13):
    """Textbook two-marginal log-domain Sinkhorn, written independently of
    the chain solver: alternating potential updates on the dense kernel."""
    C = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    log_K = -C / epsilon
    log_wa, log_wb = np.log(w_a), np.log(w_b)
    f = np.zeros(len(w_a))
    g = np.zeros(len(w_b))
    for _ in range(iters):
        f_new = log_wa - logsumexp(log_K + g[None, :], axis=1)
        g_new = log_wb - logsumexp(log_K + f_new[:, None], axis=0)
        if max(np.abs(f_new - f).max(), np.abs(g_new - g).max()) < tol:
            f, g = f_new, g_new
            break
        f, g = f_new, g_new
    return np.exp(f[:, None] + log_K + g[None, :])


def _atoms(rng, m, d=1, scale=1.0):
    return scale * rng.standard_normal((m, d))


# ------------------------------------------------------------------ solver

def test_chain_solver_matches_dense_sinkhorn_two_marginals():
    rng = seeded_rng(0)
    a = _atoms(rng, 5)
    b = _atoms(rng, 6) + 0.8
    w_a = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
    w_b = np.full(6, 1.0 / 6)
    grid = TimeGrid((0.0, 1.0), 10)
    ref = ReferenceConfig(sigma=0.6)

    cp = chain_sinkhorn([a, b], [w_a, w_b], grid, ref, tol=1e-12)
    dense = dense_sinkhorn_log(a, w_a, b, w_b, ref.epsilon_entropic)
    assert np.abs(cp.pairwise_marginal(0) - dense).max() <= 1e-8


def test_chain_solver_dense_agreement_with_nonunit_interval():
    # interval length 2 halves the effective inverse temperature
    rng = seeded_rng(1)
    a = _atoms(rng, 4, d=2)
    b = _atoms(rng, 4, d=2) + np.array([1.0, -0.5])
    grid = TimeGrid((0.0, 2.0), 10)
    ref = ReferenceConfig(sigma=0.5)
    w = np.full(4, 0.25)

    cp = chain_sinkhorn([a, b], [w, w], grid, ref, tol=1e-12)
    dense = dense_sinkhorn_log(a, w, b, w, ref.epsilon_entropic * 2.0)
    assert np.abs(cp.pairwise_marginal(0) - dense).max() <= 1e-8


def test_single_atom_marginals_yield_unit_tables():
    grid = TimeGrid((0.0, 1.0, 2.0), 10)
    ref = ReferenceConfig(sigma=0.5)
    cp = chain_sinkhorn([[0.0], [1.0], [3.0]], None, grid, ref)
    for i in range(2):
        assert cp.pairwise_marginal(i) == pytest.approx(np.array([[1.0]]))
        assert cp.marginal(i) == pytest.approx(np.array([1.0]))


def test_large_sigma_limit_is_product_coupling():
    # epsilon -> inf makes the kernel flat, so the coupling factorizes
    rng = seeded_rng(2)
    supports = [_atoms(rng, 5), _atoms(rng, 5) + 1.0, _atoms(rng, 5) - 0.5]
    w = [np.array([0.1, 0.2, 0.3, 0.25, 0.15]),
         np.full(5, 0.2),
         np.array([0.05, 0.45, 0.2, 0.2, 0.1])]
    grid = TimeGrid((0.0, 1.0, 2.0), 10)
    cp = chain_sinkhorn(supports, w, grid, ReferenceConfig(sigma=100.0), tol=1e-12)
    for i in range(2):
        product = np.outer(w[i], w[i + 1])
        assert total_variation(cp.pairwise_marginal(i), product) <= 1e-3


def test_converged_marginals_match_target_weights():
    rng = seeded_rng(3)
    supports = [_atoms(rng, 6), _atoms(rng, 4) + 1.5, _atoms(rng, 5)]
    grid = TimeGrid((0.0, 1.0, 2.0), 10)
    cp = chain_sinkhorn(supports, None, grid, ReferenceConfig(sigma=0.7), tol=1e-11)
    for i, w in enumerate(cp.weights):
        assert np.abs(cp.marginal(i) - w).sum() <= 1e-10


def test_adjacent_pairwise_tables_share_the_middle_marginal():
    rng = seeded_rng(4)
    supports = [_atoms(rng, 5), _atoms(rng, 6) + 1.0, _atoms(rng, 4) - 1.0]
    grid = TimeGrid((0.0, 1.0, 2.0), 10)
    cp = chain_sinkhorn(supports, None, grid, ReferenceConfig(sigma=0.8), tol=1e-12)
    assert cp.pairwise_marginal(0).sum(axis=0) == pytest.approx(
        cp.pairwise_marginal(1).sum(axis=1), abs=1e-9
    )


def test_solver_reports_residual_history_on_failure():
    rng = seeded_rng(5)
    supports = [_atoms(rng, 8), _atoms(rng, 8) + 6.0]
    grid = TimeGrid((0.0, 1.0), 10)
    with pytest.raises(DivergenceError) as exc:
        chain_sinkhorn(supports, None, grid, ReferenceConfig(sigma=0.3),
                       tol=1e-14, max_iter=1)
    assert len(exc.value.residuals) == 1
    assert exc.value.residuals[0] > 1e-14


def test_solver_input_validation():
    grid = TimeGrid((0.0, 1.0), 10)
    ref = ReferenceConfig(sigma=0.5)
    with pytest.raises(ValueError):
        chain_sinkhorn([[0.0]], None, grid, ref)  # one support for two times
    with pytest.raises(ValueError):
        chain_sinkhorn([np.zeros((3, 1)), np.zeros((3, 2))], None, grid, ref)
    with pytest.raises(ValueError):
        chain_sinkhorn([[0.0, 1.0], [0.0, 1.0]],
                       [np.array([0.5, 0.5]), np.array([0.7, 0.2])], grid, ref)
    with pytest.raises(ValueError):
        chain_sinkhorn([[0.0, 1.0], [0.0, 1.0]],
                       [np.array([0.5, 0.5]), np.array([1.0, 0.0])], grid, ref)


def test_joint_table_matches_pairwise_for_two_marginals():
    rng = seeded_rng(6)
    supports = [_atoms(rng, 4), _atoms(rng, 5) + 0.5]
    grid = TimeGrid((0.0, 1.0), 10)
    cp = chain_sinkhorn(supports, None, grid, ReferenceConfig(sigma=0.6), tol=1e-12)
    joint = cp.materialize_joint()
    assert joint.sum() == pytest.approx(1.0, abs=1e-12)
    assert joint == pytest.approx(cp.pairwise_marginal(0), abs=1e-12)


def test_joint_table_guards_reject_large_problems():
    grid4 = TimeGrid((0.0, 1.0, 2.0, 3.0), 12)
    ref = ReferenceConfig(sigma=0.8)
    cp4 = chain_sinkhorn([[0.0], [0.5], [1.0], [1.5]], None, grid4, ref)
    with pytest.raises(ValueError):
        cp4.materialize_joint()

    rng = seeded_rng(7)
    big = _atoms(rng, 21)
    grid = TimeGrid((0.0, 1.0), 10)
    cp = chain_sinkhorn([big, big], None, grid, ReferenceConfig(sigma=2.0), tol=1e-8)
    with pytest.raises(ValueError):
        cp.materialize_joint()


# ---------------------------------------------------------- interior laws

def test_interior_law_single_pair_matches_bridge_moments():
    grid = TimeGrid((0.0, 2.0), 10)
    ref = ReferenceConfig(sigma=0.5)
    cp = chain_sinkhorn([[1.0], [3.0]], None, grid, ref)
    a, b = np.array([1.0]), np.array([3.0])
    for t in (0.4, 1.0, 1.7):
        law = oracle_interior_marginal(cp, t)
        mean, var = bridge_moments(a, b, t, (0.0, 2.0), ref)
        assert law.mean() == pytest.approx(mean)
        assert law.variance_per_dim() == pytest.approx(var)
    # midpoint of a unit interval: variance sigma^2 * delta / 4
    mid = oracle_interior_marginal(cp, 1.0)
    assert mid.variance == pytest.approx(0.25 * ref.sigma**2 * 2.0)


def test_interior_law_at_grid_time_collapses_to_that_marginal():
    rng = seeded_rng(8)
    supports = [_atoms(rng, 4), _atoms(rng, 5) + 1.0, _atoms(rng, 3)]
    grid = TimeGrid((0.0, 1.0, 2.0), 10)
    cp = chain_sinkhorn(supports, None, grid, ReferenceConfig(sigma=0.7), tol=1e-11)
    law = oracle_interior_marginal(cp, 1.0)
    assert law.variance == 0.0
    assert law.mean() == pytest.approx(cp.weights[1] @ supports[1], abs=1e-9)


def test_interior_law_sampler_agrees_with_its_moments():
    rng = seeded_rng(9)
    supports = [_atoms(rng, 3, d=2), _atoms(rng, 4, d=2) + 1.0]
    grid = TimeGrid((0.0, 1.0), 10)
    cp = chain_sinkhorn(supports, None, grid, ReferenceConfig(sigma=0.6), tol=1e-11)
    law = oracle_interior_marginal(cp, 0.35)

    n = 200_000
    draws = law.sample(seeded_rng(10), n)
    se_mean = np.sqrt(law.variance_per_dim() / n)
    assert np.all(np.abs(draws.mean(axis=0) - law.mean()) <= 4.0 * se_mean)
    assert draws.var(axis=0) == pytest.approx(law.variance_per_dim(), rel=0.02)


# ------------------------------------------------------------ exact drifts

def test_single_pair_drift_has_closed_form():
    grid = TimeGrid((0.0, 1.0), 10)
    ref = ReferenceConfig(sigma=0.5)
    cp = chain_sinkhorn([[0.0], [2.0]], None, grid, ref)
    x = np.array([[0.7]])
    # only one endpoint pair, so the posterior is degenerate
    assert OracleDrift(cp, "forward")(0.5, x)[0, 0] == pytest.approx((2.0 - 0.7) / 0.5)
    assert OracleDrift(cp, "backward")(0.5, x)[0, 0] == pytest.approx((0.0 - 0.7) / 0.5)


def test_drift_interval_choice_at_interior_grid_time():
    grid = TimeGrid((0.0, 1.0, 2.0), 10)
    ref = ReferenceConfig(sigma=0.5)
    cp = chain_sinkhorn([[0.0], [1.0], [3.0]], None, grid, ref)
    x = np.array([[1.0]])
    # forward reads the interval to the right of t=1, backward the left one
    fwd = OracleDrift(cp, "forward")(1.0, x)[0, 0]
    bwd = OracleDrift(cp, "backward")(1.0, x)[0, 0]
    assert fwd == pytest.approx(2.0, rel=1e-2)
    assert bwd == pytest.approx(-1.0, rel=1e-2)


def test_drift_posterior_weighs_nearby_pairs():
    # two well-separated pairs: a probe near one endpoint should follow it
    grid = TimeGrid((0.0, 1.0), 10)
    ref = ReferenceConfig(sigma=0.4)
    cp = chain_sinkhorn([[-3.0, 3.0], [-3.0, 3.0]], None, grid, ref, tol=1e-12)
    drift = OracleDrift(cp, "forward")
    v = drift(0.5, np.array([[-3.0], [3.0]]))
    assert v[0, 0] == pytest.approx(0.0, abs=1e-6)
    assert v[1, 0] == pytest.approx(0.0, abs=1e-6)
    # halfway probe between the clouds gets a symmetric (zero) pull
    assert drift(0.5, np.array([[0.0]]))[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_drift_rejects_out_of_range_times():
    grid = TimeGrid((0.0, 1.0), 10)
    cp = chain_sinkhorn([[0.0], [1.0]], None, grid, ReferenceConfig(sigma=0.5))
    with pytest.raises(ValueError):
        OracleDrift(cp, "forward")(1.5, np.array([[0.0]]))
    with pytest.raises(ValueError):
        OracleDrift(cp, "sideways")


# ------------------------------------------------- simulated coupling check

def test_empirical_coupling_recovers_identity_transport():
    # far-apart atom pairs at small sigma: the solution is the identity map
    grid = TimeGrid((0.0, 1.0), 20)
    ref = ReferenceConfig(sigma=0.1)
    supports = [np.array([-4.0, 4.0]), np.array([-4.0, 4.0])]
    cp = chain_sinkhorn(supports, None, grid, ref, tol=1e-12)
    drift = OracleDrift(cp, "forward")

    emp = empirical_coupling(drift, supports, grid, ref, paths_per_atom=500,
                             rng=seeded_rng(11))
    assert len(emp.tables) == 1
    assert emp.overflow[0] <= 0.01
    assert total_variation(emp.tables[0], np.diag([0.5, 0.5])) <= 0.05
    # rows account for the start weights up to overflow
    assert emp.tables[0].sum(axis=1) == pytest.approx(
        np.full(2, 0.5), abs=0.5 * emp.overflow[0] + 1e-12
    )


def test_total_variation_basics():
    assert total_variation(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]])) == 0.0
    P = np.array([[1.0, 0.0], [0.0, 0.0]])
    Q = np.array([[0.0, 0.0], [0.0, 1.0]])
    assert total_variation(P, Q) == pytest.approx(1.0)
