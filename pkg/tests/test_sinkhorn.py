import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from latent_ot.measures import gibbs_kernel
from latent_ot.sinkhorn import SolverConfig, TransportPlan, entropy, kl_divergence, ot_cost, sinkhorn


def _gkl(P, K):
    # generalised KL, the quantity minimised by the scaling iteration
    return float(np.sum(P * np.log(P / K) - P + K))


def golden_2x2(mu, nu, K, eps):
    """Plan minimising eps * KL(P | K) over the one free entry p11."""
    lo, hi = max(0.0, mu[0] - nu[1]), min(mu[0], nu[0])

    def plan(p):
        return np.array([[p, mu[0] - p], [nu[0] - p, mu[1] - nu[0] + p]])

    def f(p):
        return eps * _gkl(np.maximum(plan(p), 1e-300), K)

    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return plan(res.x)


def test_single_point():
    P = sinkhorn(np.array([1.0]), np.array([1.0]), gibbs_kernel([[0.3]], 1.0))
    np.testing.assert_allclose(P.values, [[1.0]])


def test_constant_kernel_gives_product():
    P = sinkhorn(np.array([0.5, 0.5]), np.array([0.5, 0.5]), np.ones((2, 2)), SolverConfig(epsilon=1.0))
    np.testing.assert_allclose(P.values, 0.25, atol=1e-12)


def test_golden_section_oracle_spec_instance():
    mu, nu = np.array([0.7, 0.3]), np.array([0.4, 0.6])
    K = np.array([[1.0, 0.5], [0.5, 1.0]])
    P = sinkhorn(mu, nu, K, SolverConfig(epsilon=1.0, tol=1e-13))
    assert np.max(np.abs(P.values - golden_2x2(mu, nu, K, 1.0))) < 1e-6


def test_golden_section_oracle_random_draws():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        mu = rng.dirichlet([1, 1])
        nu = rng.dirichlet([1, 1])
        eps = float(rng.uniform(0.2, 5))
        K = gibbs_kernel(rng.uniform(0, 2, (2, 2)), eps)
        P = sinkhorn(mu, nu, K, SolverConfig(epsilon=eps, tol=1e-13, max_iter=100000))
        worst = max(worst, np.max(np.abs(P.values - golden_2x2(mu, nu, K.values, eps))))
    assert worst < 1e-6


def test_ot_cost_examples():
    assert ot_cost(np.array([[1.0]]), np.array([[3.0]])) == 3.0
    assert ot_cost(np.array([[0.0, 1.0]]), np.array([[np.inf, 2.0]])) == 2.0
    assert ot_cost(np.full((2, 2), 0.25), np.array([[0.0, 1.0], [1.0, 0.0]])) == 0.5


def test_ot_cost_shape_mismatch():
    with pytest.raises(ValueError):
        ot_cost(np.ones((2, 2)), np.ones((2, 3)))


def test_entropy_and_kl_conventions():
    assert entropy([1.0, 0.0]) == 0.0
    assert math.isclose(entropy([0.5, 0.5]), math.log(2))
    assert kl_divergence(np.array([[1.0]]), np.array([[0.0]])) == math.inf
    assert kl_divergence(np.array([[0.0]]), np.array([[0.0]])) == 0.0


def test_rejects_unequal_masses():
    with pytest.raises(ValueError):
        sinkhorn(np.array([1.0]), np.array([2.0]), np.ones((1, 1)))


def test_rejects_zero_kernel_row():
    with pytest.raises(ValueError):
        sinkhorn(np.array([0.5, 0.5]), np.array([1.0]), np.array([[1.0], [0.0]]))


def test_reports_non_convergence():
    K = gibbs_kernel(np.array([[0.0, 30.0], [30.0, 0.0]]), 1.0)
    P = sinkhorn(np.array([0.9, 0.1]), np.array([0.1, 0.9]), K, SolverConfig(epsilon=1.0, max_iter=3, tol=1e-14))
    assert not P.converged and P.iterations == 3


def test_solver_config_validation():
    for kw in ({"epsilon": 0}, {"max_iter": 0}, {"tol": 0}, {"seed": -1}):
        with pytest.raises(ValueError):
            SolverConfig(**kw)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.floats(0.1, 10), st.integers(0, 2**31))
def test_converged_plans_meet_marginals(n, m, eps, seed):
    rng = np.random.default_rng(seed)
    mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
    K = gibbs_kernel(rng.uniform(0, 3, (n, m)), eps)
    P = sinkhorn(mu, nu, K, SolverConfig(epsilon=eps, max_iter=100000))
    assert P.converged
    assert P.marginal_violation() < P.tol


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.floats(0.2, 5), st.integers(0, 2**31))
def test_dual_trace_monotone(n, m, eps, seed):
    rng = np.random.default_rng(seed)
    mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
    K = gibbs_kernel(rng.uniform(0, 3, (n, m)), eps)
    P = sinkhorn(mu, nu, K, SolverConfig(epsilon=eps, tol=1e-10), log=True)
    d = np.array(P.dual_trace)
    assert np.all(np.diff(d) >= -1e-12 * max(1.0, np.abs(d).max()))
    # at convergence the dual meets the generalised KL of the plan
    gap = eps * (K.values.sum() - P.values.sum())
    assert abs(P.trace[-1] + gap - d[-1]) < 1e-6


def test_transport_plan_violation():
    p = TransportPlan(np.array([[0.5, 0.0], [0.0, 0.5]]), np.array([0.5, 0.5]), np.array([0.4, 0.6]))
    assert math.isclose(p.marginal_violation(), 0.2)
