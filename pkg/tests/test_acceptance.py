"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import time

import conftest
import numpy as np
import pytest
from oracles import anchor_oracle, entropic_clustering, fd_gradient, random_anchor_instance

from latent_ot import cli
from latent_ot.analysis import (
    check_relaxation,
    compose_plan,
    estimate_transport,
    knn_accuracy,
    latent_discrepancy,
    plan_deviation,
    quasi_triangle_slack,
    relaxation_kernels,
    transport_rank,
)
from latent_ot.anchors import anchor_objective, kmeans_init, update_anchors
from latent_ot.bregman import update_plan, update_plan_unbalanced
from latent_ot.experiments import fit_slope
from latent_ot.lot import LotConfig, lot_solve, lot_transform_solve
from latent_ot.measures import MetricSpec, PointCloud, gibbs_kernel, sq_euclidean
from latent_ot.sinkhorn import SolverConfig, sinkhorn
from latent_ot.synth import GmmSpec, PerturbationSpec, gen_benchmark, gen_gmm, perturb


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def l1(a, b):
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum())


# ---------------------------------------------------------------------------
# 1. feasibility
# ---------------------------------------------------------------------------


def six_violations(p, mu, nu):
    return (
        l1(p.px.sum(1), mu),
        l1(p.px.sum(0), p.u_z),
        l1(p.pz.sum(1), p.u_z),
        l1(p.pz.sum(0), p.v_z),
        l1(p.py.sum(1), p.v_z),
        l1(p.py.sum(0), nu),
    )


def test_criterion_1_feasibility(report):
    t0 = time.perf_counter()
    worst, failed = 0.0, 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n, m = rng.integers(1, 51, 2)
        kx, ky = rng.integers(1, 9, 2)
        eps = float(rng.uniform(0.5, 2.0))
        K = [gibbs_kernel(rng.uniform(0, 3, s), eps) for s in ((n, kx), (kx, ky), (ky, m))]
        mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        plans, _ = update_plan(*K, mu, nu, SolverConfig(epsilon=eps, tol=1e-7, max_iter=100000))
        v = max(six_violations(plans, mu, nu))
        worst = max(worst, v)
        failed += not (plans.converged and v < 1e-6)
    elapsed = time.perf_counter() - t0
    report(1, failed == 0 and elapsed < 30, f"50 instances, worst L1 violation {worst:.2e}, {failed} failures, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 2. anchor update
# ---------------------------------------------------------------------------


def test_criterion_2_anchor_oracle(report):
    worst_coord, worst_fd = 0.0, 0.0
    for seed in range(25):
        rng = np.random.default_rng(1000 + seed)
        d, kx, ky = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
        X, Y, plans, (mx, mz, my) = random_anchor_instance(rng, d, kx, ky, general=bool(seed % 2))
        zx, zy = update_anchors(X, Y, plans, mx, mz, my)
        ox, oy, gnorm = anchor_oracle(X, Y, plans, mx, mz, my)
        assert gnorm < 1e-10
        err = max(np.max(np.abs(zx.locations - ox)), np.max(np.abs(zy.locations - oy)))

        def obj(theta):
            return anchor_objective(X, Y, plans, theta[: d * kx].reshape(d, kx), theta[d * kx :].reshape(d, ky), mx, mz, my)

        theta = np.concatenate([zx.locations.ravel(), zy.locations.ravel()])
        fd = np.linalg.norm(fd_gradient(obj, theta)) / max(1.0, obj(theta))
        worst_coord, worst_fd = max(worst_coord, err), max(worst_fd, fd)
    ok = worst_coord < 1e-6 and worst_fd < 1e-6
    report(2, ok, f"25 instances, max coordinate error {worst_coord:.2e}, max scaled FD gradient {worst_fd:.2e}")


# ---------------------------------------------------------------------------
# 3. relaxation bound
# ---------------------------------------------------------------------------


def test_criterion_3_relaxation(report):
    eps = 0.2
    slacks, excluded = [], 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 4))
        n, m = rng.integers(5, 15, 2)
        kx, ky = rng.integers(1, 4, 2)
        X = PointCloud(rng.standard_normal((d, n)))
        Y = PointCloud(rng.standard_normal((d, m)) + 1)
        M = MetricSpec.identity(d, 3.0)
        cfg = LotConfig(int(kx), int(ky), mx=M, mz=M, my=M, epsilon=eps, solver=SolverConfig(epsilon=eps), seed=seed)
        sol = lot_solve(X, Y, cfg)
        kernels, K = relaxation_kernels(X, Y, sol.anchors_x, sol.anchors_y, eps)
        rep = check_relaxation(sol, kernels, K, eps)
        if not rep.premise_satisfied:
            excluded += 1
            continue
        slacks.append(rep.slack)
    ok = min(slacks) >= -1e-9
    report(3, ok, f"{len(slacks)} instances checked, {excluded} excluded by the kernel premise, min slack {min(slacks):.3e}")


# ---------------------------------------------------------------------------
# 4. rank bound
# ---------------------------------------------------------------------------


def test_criterion_4_rank_bound(report):
    # extra solves on top of everything the session records
    for seed in range(10):
        rng = np.random.default_rng(seed)
        k1, k2 = rng.integers(1, 5, 2)
        X, Y = gen_gmm(GmmSpec(3, 4, 2, 8, seed))
        lot_solve(X, Y, LotConfig(int(k1), int(k2), epsilon=float(rng.uniform(0.5, 5)), seed=seed))
    log = conftest.RANK_LOG
    ok = log["solves"] > 0 and not log["violations"]
    report(4, ok, f"rank <= min(kx, ky) on {log['solves']} solves so far; the full-session total is printed at the end")


# ---------------------------------------------------------------------------
# 5. discrepancy properties
# ---------------------------------------------------------------------------


def test_criterion_5_discrepancy(report):
    values, worst_sym = [], 0.0
    solver = SolverConfig(epsilon=5.0, tol=1e-10, max_iter=100000, cold_start=True)
    for seed in range(20):
        X, Y = gen_gmm(GmmSpec(3, 5, 3, 20, seed))
        cfg = LotConfig(3, 3, epsilon=5.0, solver=solver, outer_tol=1e-12, outer_max_iter=1000, seed=seed)
        a = latent_discrepancy(lot_solve(X, Y, cfg))
        b = latent_discrepancy(lot_solve(Y, X, cfg))
        values += [a, b]
        worst_sym = max(worst_sym, abs(a - b))
    slacks = []
    for seed in range(100):
        A, B = gen_gmm(GmmSpec(3, 5, 3, 15, seed))
        C, _ = gen_gmm(GmmSpec(3, 5, 3, 15, seed + 1000))
        slacks.append(quasi_triangle_slack(A, B, C, LotConfig(3, 3, epsilon=5.0, seed=seed)))
    ok = min(values) >= 0 and worst_sym < 1e-5 and min(slacks) >= -1e-6
    report(
        5,
        ok,
        f"min W {min(values):.3e}, worst asymmetry {worst_sym:.2e} over 20 pairs, "
        f"min quasi-triangle slack {min(slacks):.3e} over 100 triples",
    )


# ---------------------------------------------------------------------------
# 6. robustness to outliers
# ---------------------------------------------------------------------------


def entropic_ot(X, Y, eps):
    C = sq_euclidean(X.points, Y.points)
    n, m = C.shape
    return sinkhorn(np.full(n, 1 / n), np.full(m, 1 / m), gibbs_kernel(C - C.min(), eps), SolverConfig(epsilon=eps))


def test_criterion_6_outlier_robustness(report):
    t0 = time.perf_counter()
    eps = 10.0
    rows = []
    for seed in range(20):
        X, Y = gen_gmm(GmmSpec(4, 30, 5, 100, seed))
        Xo = perturb(X, PerturbationSpec("outliers", rate=0.2), seed)
        cfg = LotConfig(4, 4, epsilon=eps, solver=SolverConfig(epsilon=eps), seed=seed)
        P0, P1 = entropic_ot(X, Y, eps), entropic_ot(Xo, Y, eps)
        s0, s1 = lot_solve(X, Y, cfg), lot_solve(Xo, Y, cfg)
        rows.append(
            (
                knn_accuracy(estimate_transport(P1, Xo, Y, "ot_barycentric"), Y),
                knn_accuracy(estimate_transport(s1, Xo, Y), Y),
                plan_deviation(P1, P0),
                plan_deviation(compose_plan(s1), compose_plan(s0)),
            )
        )
    acc_ot, acc_lot, dev_ot, dev_lot = np.mean(rows, axis=0)
    elapsed = time.perf_counter() - t0
    ok = acc_lot >= acc_ot and dev_lot <= dev_ot and elapsed < 600
    report(
        6,
        ok,
        f"accuracy LOT {acc_lot:.4f} vs OT {acc_ot:.4f}, plan deviation LOT {dev_lot:.4f} vs OT {dev_ot:.4f}, {elapsed:.0f} s",
    )


# ---------------------------------------------------------------------------
# 7. fragmented hypercube
# ---------------------------------------------------------------------------


def quadrant_purity(px, labels):
    assign = np.argmax(px, axis=1)
    return sum(np.bincount(labels[assign == a]).max() for a in np.unique(assign)) / labels.size


def test_criterion_7_hypercube(report):
    eps = 1.5
    purity, ranks = [], []
    for seed in range(10):
        X, Y = gen_benchmark("hypercube", 30, 250, seed)
        sol = lot_solve(X, Y, LotConfig(4, 4, epsilon=eps, solver=SolverConfig(epsilon=eps), seed=seed))
        purity.append(quadrant_purity(sol.plans.px, X.labels))
        ranks.append(transport_rank(compose_plan(sol)))
    ok = np.mean(purity) >= 0.9 and max(ranks) <= 4
    report(7, ok, f"mean purity {np.mean(purity):.3f} over 10 seeds (min {min(purity):.3f}), max rank {max(ranks)}")


# ---------------------------------------------------------------------------
# 8. sampling convergence
# ---------------------------------------------------------------------------


def test_criterion_8_sampling(report):
    X, Y = gen_gmm(GmmSpec(4, 30, 5, 500, 0))
    cfg = LotConfig(4, 4, epsilon=10.0, solver=SolverConfig(epsilon=10.0), seed=0)
    full = lot_solve(X, Y, cfg).transport_cost
    pairs = []
    for n in (50, 100, 200, 400, 800):
        for s in range(10):
            idx = np.sort(np.random.default_rng([n, s]).choice(X.size, n, replace=False))
            pairs.append((n, abs(lot_solve(X.subset(idx), Y, cfg).transport_cost - full)))
    slope = fit_slope(pairs)
    ok = slope is not None and -0.8 <= slope <= -0.2
    report(8, ok, f"log-log slope {slope:.3f} from 50 (N, |delta|) pairs")


# ---------------------------------------------------------------------------
# 9. unbalanced limit
# ---------------------------------------------------------------------------


def test_criterion_9_unbalanced_limit(report):
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n, m, kx, ky = rng.integers(5, 30), rng.integers(5, 30), rng.integers(2, 6), rng.integers(2, 6)
        eps = 1.0
        K = [gibbs_kernel(rng.uniform(0, 3, s), eps) for s in ((n, kx), (kx, ky), (ky, m))]
        mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        cfg = SolverConfig(epsilon=eps, tol=1e-8, max_iter=200000)
        bal, _ = update_plan(*K, mu, nu, cfg)
        unb, _ = update_plan_unbalanced(*K, mu, nu, 1e4 * eps, 1e4 * eps, eps, cfg)
        diff = max(l1(bal.px, unb.px), l1(bal.pz, unb.pz), l1(bal.py, unb.py))
        worst = max(worst, diff)
    report(9, worst < 1e-3, f"worst plan L1 difference {worst:.2e} over 10 instances")


# ---------------------------------------------------------------------------
# 10. interpolation limits
# ---------------------------------------------------------------------------


def test_criterion_10_interpolation(report):
    eps = 5.0
    worst = 0.0
    for seed in range(3):
        X, Y = gen_gmm(GmmSpec(3, 5, 3, 30, seed))
        cfg = LotConfig(
            3,
            3,
            mz=MetricSpec.identity(5, 1e-6),
            epsilon=eps,
            solver=SolverConfig(tol=1e-12, max_iter=100000),
            outer_tol=1e-13,
            outer_max_iter=2000,
            seed=seed,
        )
        sol = lot_solve(X, Y, cfg)
        mu, nu = np.full(X.size, 1 / X.size), np.full(Y.size, 1 / Y.size)
        ox, _ = entropic_clustering(X.points, mu, kmeans_init(X, 3, seed=seed, weights=mu).locations, eps)
        oy, _ = entropic_clustering(Y.points, nu, kmeans_init(Y, 3, seed=seed, weights=nu).locations, eps)
        worst = max(worst, abs(sol.objective - (ox + oy)) / abs(ox + oy))

    X, Y = gen_gmm(GmmSpec(3, 5, 3, 30, 0))
    dist = []
    for lam in (0.1, 1.0, 10.0, 100.0):
        sol = lot_solve(X, Y, LotConfig(3, 3, epsilon=eps, mz=MetricSpec.identity(5, lam)))
        D = np.sqrt(sq_euclidean(sol.anchors_x.locations, sol.anchors_y.locations))
        dist.append(float(D.min(axis=1).mean()))
    monotone = all(b <= a for a, b in zip(dist, dist[1:]))
    report(
        10,
        worst < 1e-5 and monotone,
        f"max relative gap to split clustering {worst:.2e}; merge distances {np.round(dist, 4).tolist()}",
    )


# ---------------------------------------------------------------------------
# 11. transform variant
# ---------------------------------------------------------------------------


def test_criterion_11_transform(report):
    worst_orth, worst_gap = 0.0, np.inf
    for seed in range(5):
        rng = np.random.default_rng(seed)
        centers = np.array([[0, 8, 0], [0, 0, 8], [0, 0, 0]], dtype=float)
        pts = np.hstack([c[:, None] + 0.3 * rng.standard_normal((3, 10)) for c in centers.T])
        X = PointCloud(pts, np.repeat(np.arange(3), 10))
        O, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        Y = PointCloud(O @ pts, X.labels)
        sol = lot_transform_solve(X, Y, LotConfig(3, 3, epsilon=1.0, variant="transform", seed=seed))
        M = sol.transform.matrix
        B = sol.anchors_y.locations @ sol.plans.pz.T @ sol.anchors_x.locations.T
        worst_orth = max(worst_orth, np.linalg.norm(M.T @ M - np.eye(3)))
        worst_gap = min(worst_gap, np.sum(M * B) - np.sum(O * B))
    ok = worst_orth < 1e-8 and worst_gap >= -1e-6
    report(11, ok, f"orthogonality error {worst_orth:.2e}, min objective gain over ground truth {worst_gap:.3e}")


# ---------------------------------------------------------------------------
# 12. determinism
# ---------------------------------------------------------------------------


GRIDS = [
    ("gmm_sweep", "outlier_rate", [0.0, 0.2], {"components": 2, "ambient_dim": 4, "signal_dim": 2, "points_per_component": 8}),
    ("hypercube", "epsilon", [1.0, 2.0], {"d": 4, "n": 24}),
    ("annulus", "k", [2, 3], {"d": 4, "n": 24}),
    ("sampling", "n", [8, 16], {"components": 2, "ambient_dim": 4, "signal_dim": 2, "points_per_component": 8}),
    ("cluster_correlation", "mean_scale", [0.5, 1.0], {"components": 2, "ambient_dim": 4, "signal_dim": 2, "points_per_component": 8}),
]


def test_criterion_12_determinism(report, tmp_path):
    same = []
    for name, param, values, data in GRIDS:
        cfg = {
            "experiment": name,
            "sweep": {"param": param, "values": values},
            "repetitions": 2,
            "methods": ["OT", "LOT_L2"],
            "lot": {"kx": 2, "ky": 2, "epsilon": 2.0},
            "data": data,
            "seed": 3,
        }
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        runs = []
        for i, jobs in enumerate(("1", "4")):
            out = tmp_path / f"{name}_{i}"
            assert cli.main(["experiment", "--config", str(path), "--out", str(out), "--jobs", jobs]) in (0, 2)
            runs.append((tmp_path / f"{name}_{i}.csv").read_bytes())
        same.append(runs[0] == runs[1])
    report(12, all(same), f"byte-identical CSV on rerun for {sum(same)}/{len(same)} experiments")
