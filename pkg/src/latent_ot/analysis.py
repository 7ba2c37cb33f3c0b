"""Plan composition, point transport estimates, discrepancies and diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measures import PointCloud, gibbs_kernel, sq_euclidean
from .sinkhorn import TransportPlan, entropy, kl_divergence

__all__ = [
    "TheoryCheckReport",
    "Metrics",
    "compose_plan",
    "estimate_transport",
    "estimate_transport_wa",
    "latent_discrepancy",
    "check_relaxation",
    "relaxation_kernels",
    "quasi_triangle_slack",
    "plan_deviation",
    "transport_rank",
    "knn_accuracy",
    "solution_kernels",
]


@dataclass
class TheoryCheckReport:
    slack: float
    premise_satisfied: bool
    details: dict = field(default_factory=dict)


@dataclass
class Metrics:
    plan_deviation: float
    knn_accuracy: float
    transport_rank: int
    latent_discrepancy: float

    def __post_init__(self):
        for name in ("plan_deviation", "knn_accuracy", "transport_rank", "latent_discrepancy"):
            v = getattr(self, name)
            if v is not None and not np.isnan(v) and v < 0:
                raise ValueError(f"{name} must be nonnegative")


def _vals(p) -> np.ndarray:
    return p.values if hasattr(p, "values") else np.asarray(p, dtype=float)


def _pts(a) -> np.ndarray:
    if isinstance(a, PointCloud):
        return a.points
    return np.atleast_2d(np.asarray(getattr(a, "locations", a), dtype=float))


def _labels(a):
    return a.labels if isinstance(a, PointCloud) else None


def _masses(sol):
    u, v = sol.plans.u_z, sol.plans.v_z
    if np.any(u <= 0) or np.any(v <= 0):
        raise ValueError("anchor masses must be positive")
    return u, v


def compose_plan(sol) -> TransportPlan:
    """Full n x m plan ``Px diag(1/u) Pz diag(1/v) Py`` of a latent solution.

    The returned plan's tolerance is ten times the solver tolerance, the
    accumulated bound on its marginal violations for a converged solve.
    """
    u, v = _masses(sol)
    p = sol.plans
    P = (p.px / u[None, :]) @ (p.pz / v[None, :]) @ p.py
    tol = 10 * float(sol.diagnostics.get("solver_tol", 1e-6))
    return TransportPlan(P, np.asarray(sol.mu), np.asarray(sol.nu), tol, sol.converged, sol.iterations)


def _centroids(sol, X, Y):
    u, v = _masses(sol)
    Qx = (sol.plans.px.T @ X.T) / u[:, None]  # kx x d
    Qy = (sol.plans.py @ Y.T) / v[:, None]  # ky x d
    return Qx, Qy


def estimate_transport(sol, X, Y, mode: str = "lot_displacement") -> PointCloud:
    """Image of every source point under a transport plan.

    Parameters
    ----------
    sol : LotSolution or TransportPlan
        A flat plan is accepted for ``ot_barycentric`` only.
    X, Y : PointCloud
    mode : {"lot_displacement", "fc_displacement", "ot_barycentric"}
        ``lot_displacement`` moves each point by the plan-weighted difference
        between target-anchor and source-anchor centroids,
        ``X + diag(1/mu) Px (diag(1/u) Pz Qy - Qx)``; ``fc_displacement``
        pairs anchor ``m`` with anchor ``m`` (``kx == ky``);
        ``ot_barycentric`` maps to the plan-weighted mean of the targets.

    Returns
    -------
    PointCloud
        Estimated images, carrying the labels of ``X``.
    """
    Xp, Yp = _pts(X), _pts(Y)
    labels = _labels(X)
    if mode == "ot_barycentric":
        P = _vals(sol) if not hasattr(sol, "plans") else compose_plan(sol).values
        rows = P.sum(axis=1)
        if np.any(rows <= 0):
            raise ValueError("plan has an empty row")
        return PointCloud((P @ Yp.T / rows[:, None]).T, labels)
    if mode not in ("lot_displacement", "fc_displacement"):
        raise ValueError(f"unknown transport mode {mode!r}")
    u, _ = _masses(sol)
    mu = np.asarray(sol.mu, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("source weights must be positive")
    Qx, Qy = _centroids(sol, Xp, Yp)
    if mode == "fc_displacement":
        if Qx.shape[0] != Qy.shape[0]:
            raise ValueError("fc_displacement requires kx = ky")
        shift = Qy - Qx
    else:
        shift = (sol.plans.pz / u[:, None]) @ Qy - Qx
    disp = (sol.plans.px @ shift) / mu[:, None]
    return PointCloud(Xp + disp.T, labels)


def estimate_transport_wa(sol, X, Y, diagnostics: Optional[dict] = None) -> PointCloud:
    """Images through the conditional plans of a Wasserstein-anchor solution.

    Point ``i`` goes through its dominant source anchor ``m*`` and that
    anchor's dominant partner ``n*`` (ties to the lowest index) and lands on
    the barycentre of its row of the inner plan ``(m*, n*)``.  Points whose
    pair was pruned fall back to ``lot_displacement``; their count is
    stored under ``diagnostics["wa_fallbacks"]``.
    """
    if sol.inner_plans is None:
        raise ValueError("solution carries no inner plans")
    Xp, Yp = _pts(X), _pts(Y)
    px, pz = sol.plans.px, sol.plans.pz
    m_star = np.argmax(px, axis=1)
    n_star = np.argmax(pz, axis=1)
    out = np.empty_like(Xp)
    fallback = []
    for i in range(Xp.shape[1]):
        m = int(m_star[i])
        key = (m, int(n_star[m]))
        inner = sol.inner_plans.get(key)
        row = None if inner is None else inner[i]
        if row is None or row.sum() <= 0:
            fallback.append(i)
            continue
        out[:, i] = Yp @ (row / row.sum())
    if fallback:
        est = estimate_transport(sol, Xp, Yp, "lot_displacement").points
        out[:, fallback] = est[:, fallback]
    if diagnostics is not None:
        diagnostics["wa_fallbacks"] = len(fallback)
    return PointCloud(out, _labels(X))


def latent_discrepancy(sol, costs=None, p: float = 2.0) -> float:
    """``(<Cx, Px> + <Cz, Pz> + <Cy, Py>)^(1/p)``, the latent Wasserstein discrepancy.

    ``costs`` default to the solution's own cost matrices.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    costs = sol.costs if costs is None else costs
    total = 0.0
    for C, P in zip(costs, (sol.plans.px, sol.plans.pz, sol.plans.py)):
        C = np.asarray(C, dtype=float)
        if np.any(C < 0):
            raise ValueError("costs must be nonnegative")
        mask = P > 0
        total += float(np.sum(C[mask] * P[mask]))
    return max(total, 0.0) ** (1.0 / p)


def _pnorm_p(A, B, p: float) -> np.ndarray:
    A, B = _pts(A), _pts(B)
    if p == 2:
        return sq_euclidean(A, B)
    return np.sum(np.abs(A[:, :, None] - B[:, None, :]) ** p, axis=0)


def relaxation_kernels(X, Y, zx, zy, epsilon: float, p: float = 2.0):
    """Kernels for the bound check with ``3^(p-1)``-scaled latent costs.

    Returns ``((Kx, Kz, Ky), K)`` where ``K`` comes from ``|x_i - y_j|_p^p``.
    """
    s = 3.0 ** (p - 1.0)
    Kx = gibbs_kernel(s * _pnorm_p(X, zx, p), epsilon)
    Kz = gibbs_kernel(s * _pnorm_p(zx, zy, p), epsilon)
    Ky = gibbs_kernel(s * _pnorm_p(zy, Y, p), epsilon)
    K = gibbs_kernel(_pnorm_p(X, Y, p), epsilon)
    return (Kx, Kz, Ky), K


def solution_kernels(sol, epsilon: Optional[float] = None):
    """Gibbs kernels of the solution's cost matrices."""
    eps = sol.epsilons if epsilon is None else (epsilon,) * 3
    return tuple(gibbs_kernel(C, e) for C, e in zip(sol.costs, eps))


def check_relaxation(sol, kernels, K, epsilon: float, tol: float = 1e-12) -> TheoryCheckReport:
    """Check the upper bound of the composed plan's KL by the latent objective.

    ``slack = eps (KL(Px|Kx) + KL(Pz|Kz) + KL(Py|Ky) + H(u) + H(v)) - eps KL(P|K)``
    which is nonnegative whenever ``Kx Kz Ky <= K`` entrywise.  A kernel
    zero under plan mass makes the bound infinite (``slack = +inf``).
    """
    Kx, Kz, Ky = (_vals(k) for k in kernels)
    Kv = _vals(K)
    prod = Kx @ Kz @ Ky
    if prod.shape != Kv.shape:
        raise ValueError(f"kernel product shape {prod.shape} does not match K {Kv.shape}")
    premise = bool(np.all(prod <= Kv + tol))
    P = compose_plan(sol).values
    p = sol.plans
    terms = {
        "kl_x": kl_divergence(p.px, Kx),
        "kl_z": kl_divergence(p.pz, Kz),
        "kl_y": kl_divergence(p.py, Ky),
        "h_u": entropy(p.u_z),
        "h_v": entropy(p.v_z),
        "kl_full": kl_divergence(P, Kv),
    }
    upper = epsilon * (terms["kl_x"] + terms["kl_z"] + terms["kl_y"] + terms["h_u"] + terms["h_v"])
    lower = epsilon * terms["kl_full"]
    if np.isinf(upper):
        slack = float("inf")
    else:
        slack = float(upper - lower)
    terms["max_premise_excess"] = float(np.max(prod - Kv))
    return TheoryCheckReport(slack, premise, terms)


def quasi_triangle_slack(mu, nu, zeta, cfg, p: float = 2.0) -> float:
    """``kappa max(W(mu, zeta), W(zeta, nu)) - W(mu, nu)`` with ``kappa = 4^(1 - 1/p)``.

    Each latent discrepancy ``W`` comes from a squared-Euclidean
    :func:`~latent_ot.lot.lot_solve`, so only ``p = 2`` is supported.
    Arguments are point clouds or discrete measures.
    """
    from .lot import lot_solve
    from .measures import DiscreteMeasure

    if p != 2:
        raise ValueError("only p = 2 is supported with squared Euclidean costs")
    if cfg.kx != cfg.ky:
        raise ValueError("quasi-triangle check needs kx = ky")

    def split(a):
        if isinstance(a, DiscreteMeasure):
            return a.support, a.weights
        return a, None

    def W(a, b):
        (A, wa), (B, wb) = split(a), split(b)
        return latent_discrepancy(lot_solve(A, B, cfg, wa, wb), p=p)

    kappa = 4.0 ** (1.0 - 1.0 / p)
    return kappa * max(W(mu, zeta), W(zeta, nu)) - W(mu, nu)


def plan_deviation(p, p0) -> float:
    """``|P - P0|_F / |P0|_F``."""
    P, P0 = _vals(p), _vals(p0)
    if P.shape != P0.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {P0.shape}")
    ref = np.linalg.norm(P0)
    if ref == 0:
        raise ValueError("reference plan is zero")
    return float(np.linalg.norm(P - P0) / ref)


def transport_rank(p, rel_tol: float = 1e-8) -> int:
    """Number of singular values at least ``rel_tol`` times the largest."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    s = np.linalg.svd(_vals(p), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s >= rel_tol * s[0]))


def knn_accuracy(x_hat: PointCloud, Y: PointCloud) -> float:
    """Fraction of estimates whose nearest target point carries the same label."""
    if x_hat.labels is None or Y.labels is None:
        raise ValueError("both clouds need labels")
    nearest = np.argmin(sq_euclidean(x_hat.points, Y.points), axis=1)
    return float(np.mean(Y.labels[nearest] == x_hat.labels))
