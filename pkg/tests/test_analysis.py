import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_ot.analysis import (
    Metrics,
    check_relaxation,
    compose_plan,
    estimate_transport,
    estimate_transport_wa,
    knn_accuracy,
    latent_discrepancy,
    plan_deviation,
    quasi_triangle_slack,
    relaxation_kernels,
    transport_rank,
)
from latent_ot.bregman import PlanTriple
from latent_ot.lot import LotConfig, lot_solve, lot_wa_solve
from latent_ot.measures import PointCloud
from latent_ot.sinkhorn import SolverConfig, TransportPlan
from latent_ot.synth import GmmSpec, gen_gmm

TIGHT = SolverConfig(tol=1e-10, max_iter=100000)


def fake_solution(px, pz, py, mu=None, nu=None, inner=None, costs=None):
    px, pz, py = (np.asarray(a, dtype=float) for a in (px, pz, py))
    plans = PlanTriple(px, pz, py, pz.sum(1), pz.sum(0))
    return SimpleNamespace(
        plans=plans,
        mu=px.sum(1) if mu is None else mu,
        nu=py.sum(0) if nu is None else nu,
        inner_plans=inner,
        costs=costs,
        diagnostics={"solver_tol": 1e-6},
        converged=True,
        iterations=1,
    )


def grid_cloud(side=4, spacing=1.0):
    g = np.arange(side) * spacing
    xx, yy = np.meshgrid(g, g)
    return PointCloud(np.vstack([xx.ravel(), yy.ravel()]))


# ---------------------------------------------------------------------------
# compose_plan
# ---------------------------------------------------------------------------


def test_single_relay_gives_product(rng):
    X, Y = PointCloud(rng.standard_normal((2, 6))), PointCloud(rng.standard_normal((2, 5)))
    sol = lot_solve(X, Y, LotConfig(1, 1, epsilon=1.0))
    np.testing.assert_allclose(compose_plan(sol).values, np.outer(sol.mu, sol.nu), atol=1e-12)


def test_composed_marginals_on_converged_solve(rng):
    X, Y = PointCloud(rng.standard_normal((3, 20))), PointCloud(rng.standard_normal((3, 20)) + 1)
    sol = lot_solve(X, Y, LotConfig(3, 4, epsilon=1.0))
    P = compose_plan(sol)
    assert np.abs(P.values.sum(1) - sol.mu).sum() < 1e-5
    assert np.abs(P.values.sum(0) - sol.nu).sum() < 1e-5


@pytest.mark.parametrize("kx, ky", [(4, 4), (4, 6)])
def test_composed_rank_bound(kx, ky):
    X, Y = gen_gmm(GmmSpec(4, 6, 3, 10, 0))
    sol = lot_solve(X, Y, LotConfig(kx, ky, epsilon=2.0))
    assert transport_rank(compose_plan(sol)) <= min(kx, ky)


def test_compose_rejects_zero_mass():
    sol = fake_solution([[1.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]], [[1.0], [0.0]])
    with pytest.raises(ValueError):
        compose_plan(sol)


# ---------------------------------------------------------------------------
# estimate_transport
# ---------------------------------------------------------------------------


def test_translation_single_anchor(rng):
    X = PointCloud(rng.standard_normal((3, 8)))
    t = np.array([1.0, -2.0, 0.5])
    Y = PointCloud(X.points + t[:, None])
    sol = lot_solve(X, Y, LotConfig(1, 1, epsilon=1.0, solver=SolverConfig(tol=1e-14)))
    est = estimate_transport(sol, X, Y)
    np.testing.assert_allclose(est.points, Y.points, atol=1e-12)


def test_self_alignment_small_displacement():
    X = grid_cloud(side=4, spacing=3.0)
    sol = lot_solve(X, X, LotConfig(4, 4, epsilon=0.05, solver=TIGHT))
    est = estimate_transport(sol, X, X)
    scale = np.abs(X.points).max()
    assert np.abs(est.points - X.points).max() < 1e-3 * scale


def test_barycentric_permutation_plan(rng):
    Y = PointCloud(rng.standard_normal((2, 5)))
    X = PointCloud(rng.standard_normal((2, 5)))
    est = estimate_transport(TransportPlan(np.eye(5) / 5, np.full(5, 0.2), np.full(5, 0.2)), X, Y, "ot_barycentric")
    np.testing.assert_allclose(est.points, Y.points)


def test_fc_mode_requires_equal_k(rng):
    X, Y = PointCloud(rng.standard_normal((2, 6))), PointCloud(rng.standard_normal((2, 6)))
    sol = lot_solve(X, Y, LotConfig(2, 3, epsilon=1.0))
    with pytest.raises(ValueError):
        estimate_transport(sol, X, Y, "fc_displacement")
    with pytest.raises(ValueError):
        estimate_transport(sol, X, Y, "teleport")


def test_fc_mode_matches_lot_mode_for_diagonal_pz(rng):
    X, Y = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
    px = np.array([[0.25, 0], [0.25, 0], [0, 0.25], [0, 0.25]])
    sol = fake_solution(px, np.diag([0.5, 0.5]), px.T)
    a = estimate_transport(sol, X, Y, "fc_displacement").points
    b = estimate_transport(sol, X, Y, "lot_displacement").points
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_estimate_keeps_source_labels(rng):
    X = PointCloud(rng.standard_normal((2, 4)), np.array([0, 1, 0, 1]))
    sol = lot_solve(X, X, LotConfig(2, 2, epsilon=1.0))
    np.testing.assert_array_equal(estimate_transport(sol, X, X).labels, X.labels)


# ---------------------------------------------------------------------------
# estimate_transport_wa
# ---------------------------------------------------------------------------


def test_wa_self_alignment_identity():
    X = grid_cloud(side=4)
    eps = 0.01
    sol = lot_wa_solve(X, X, LotConfig(1, 1, epsilon=1.0, variant="wa", inner_epsilon=eps))
    est = estimate_transport_wa(sol, X, X)
    assert np.abs(est.points - X.points).max() < 10 * eps


def test_wa_unit_row_lands_on_target_point():
    X, Y = np.zeros((2, 2)), np.array([[1.0, 5.0], [2.0, 6.0]])
    inner = {(0, 0): np.array([[0.0, 0.5], [0.5, 0.0]])}
    sol = fake_solution([[0.5], [0.5]], [[1.0]], [[0.5, 0.5]], inner=inner)
    est = estimate_transport_wa(sol, X, Y)
    np.testing.assert_array_equal(est.points, [[5.0, 1.0], [6.0, 2.0]])


def test_wa_ties_pick_lowest_index():
    X, Y = np.zeros((1, 1)), np.array([[1.0, 2.0]])
    inner = {(0, 0): np.array([[1.0, 0.0]]), (1, 1): np.array([[0.0, 1.0]])}
    sol = fake_solution([[0.5, 0.5]], [[0.5, 0.0], [0.0, 0.5]], [[0.5, 0.0], [0.0, 0.5]], inner=inner)
    assert estimate_transport_wa(sol, X, Y).points[0, 0] == 1.0


def test_wa_pruned_pair_falls_back():
    X, Y = np.zeros((1, 2)), np.array([[1.0, 2.0]])
    sol = fake_solution([[0.5], [0.5]], [[1.0]], [[0.5, 0.5]], inner={})
    diag = {}
    est = estimate_transport_wa(sol, X, Y, diag)
    assert diag["wa_fallbacks"] == 2
    np.testing.assert_allclose(est.points, estimate_transport(sol, X, Y).points)


def test_wa_needs_inner_plans():
    sol = fake_solution([[1.0]], [[1.0]], [[1.0]])
    with pytest.raises(ValueError):
        estimate_transport_wa(sol, np.zeros((1, 1)), np.zeros((1, 1)))


# ---------------------------------------------------------------------------
# latent discrepancy and theory checks
# ---------------------------------------------------------------------------


def test_discrepancy_point_mass_is_zero():
    X = PointCloud(np.array([[1.0], [2.0]]))
    assert latent_discrepancy(lot_solve(X, X, LotConfig(1, 1))) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(1, 6), st.floats(1, 3), st.integers(0, 2**31))
def test_discrepancy_nonnegative(n, kx, ky, m, p, seed):
    rng = np.random.default_rng(seed)
    sol = fake_solution(rng.uniform(0, 1, (n, kx)), rng.uniform(0, 1, (kx, ky)), rng.uniform(0, 1, (ky, m)))
    costs = [rng.uniform(0, 5, s) for s in ((n, kx), (kx, ky), (ky, m))]
    assert latent_discrepancy(sol, costs, p) >= 0


def test_discrepancy_rejects_negative_costs():
    sol = fake_solution([[1.0]], [[1.0]], [[1.0]])
    with pytest.raises(ValueError):
        latent_discrepancy(sol, ([[-1.0]], [[0.0]], [[0.0]]))
    with pytest.raises(ValueError):
        latent_discrepancy(sol, ([[1.0]], [[0.0]], [[0.0]]), p=0.5)


def test_relaxation_scalar_identity():
    kx, kz, ky = 0.7, 0.4, 0.9
    sol = fake_solution([[1.0]], [[1.0]], [[1.0]])
    rep = check_relaxation(sol, ([[kx]], [[kz]], [[ky]]), [[kx * kz * ky]], 1.0)
    assert rep.premise_satisfied
    assert rep.slack == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_relaxation_slack_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d, n, m, k = 2, 8, 7, 2
    X, Y = PointCloud(rng.standard_normal((d, n))), PointCloud(rng.standard_normal((d, m)) + 1)
    sol = lot_solve(X, Y, LotConfig(k, k, epsilon=0.2))
    kernels, K = relaxation_kernels(X, Y, sol.anchors_x, sol.anchors_y, 0.2)
    rep = check_relaxation(sol, kernels, K, 0.2)
    assert rep.premise_satisfied
    assert rep.slack >= -1e-9


def test_relaxation_premise_violation_reported():
    sol = fake_solution([[1.0]], [[1.0]], [[1.0]])
    rep = check_relaxation(sol, ([[1.0]], [[1.0]], [[1.0]]), [[0.5]], 1.0)
    assert not rep.premise_satisfied
    assert math.isfinite(rep.slack)


def test_relaxation_zero_kernel_gives_infinite_slack():
    sol = fake_solution([[0.5, 0.5]], [[0.5], [0.5]], [[1.0]])
    rep = check_relaxation(sol, ([[1.0, 0.0]], [[1.0], [1.0]], [[1.0]]), [[1.0]], 1.0)
    assert rep.slack == math.inf


def test_quasi_triangle_point_mass():
    X = PointCloud(np.array([[0.5]]))
    assert quasi_triangle_slack(X, X, X, LotConfig(1, 1)) == 0.0


def test_quasi_triangle_uses_kappa_two():
    A, B = gen_gmm(GmmSpec(2, 3, 2, 6, 0))
    C, _ = gen_gmm(GmmSpec(2, 3, 2, 6, 1))
    cfg = LotConfig(2, 2, epsilon=2.0)

    def W(a, b):
        return latent_discrepancy(lot_solve(a, b, cfg))

    expected = 2.0 * max(W(A, C), W(C, B)) - W(A, B)
    assert quasi_triangle_slack(A, B, C, cfg) == pytest.approx(expected, abs=1e-12)
    assert expected >= -1e-6


def test_quasi_triangle_rejects_unequal_budgets():
    X = PointCloud(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        quasi_triangle_slack(X, X, X, LotConfig(1, 2))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def test_plan_deviation_examples():
    P0 = np.eye(2) / 2
    assert plan_deviation(P0, P0) == 0.0
    assert plan_deviation(2 * P0, P0) == pytest.approx(1.0)
    assert plan_deviation(np.array([[0, 1], [1, 0]]) / 2, P0) == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        plan_deviation(P0, np.zeros((2, 2)))


def test_transport_rank_examples(rng):
    mu, nu = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(4))
    assert transport_rank(np.outer(mu, nu)) == 1
    assert transport_rank(np.eye(6) / 6) == 6
    with pytest.raises(ValueError):
        transport_rank(np.eye(2), rel_tol=0)


def test_knn_accuracy_examples():
    Y = PointCloud(np.array([[0.0, 1.0, 2.0, 3.0]]), np.array([0, 1, 2, 3]))
    assert knn_accuracy(PointCloud(Y.points, Y.labels), Y) == 1.0
    wrong = PointCloud(Y.points[:, ::-1], Y.labels)
    assert knn_accuracy(wrong, Y) == 0.0
    half = PointCloud(np.array([[0.0, 1.0, 0.0, 0.0]]), Y.labels)
    assert knn_accuracy(half, Y) == 0.5
    with pytest.raises(ValueError):
        knn_accuracy(PointCloud(Y.points), Y)


def test_metrics_validation():
    Metrics(0.1, 0.5, 2, 1.0)
    with pytest.raises(ValueError):
        Metrics(-0.1, 0.5, 2, 1.0)
