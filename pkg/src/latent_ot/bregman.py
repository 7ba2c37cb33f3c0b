"""Iterative Bregman projections for the three-plan latent transport problem.

Given Gibbs kernels ``Kx`` (n x kx), ``Kz`` (kx x ky) and ``Ky`` (ky x m)
the plan step solves::

    min  ex KL(Px|Kx) + ez KL(Pz|Kz) + ey KL(Py|Ky)
    s.t. Px 1 = mu, Px^T 1 = Pz 1 = u, Pz^T 1 = Py 1 = v, Py^T 1 = nu

by cycling KL projections onto the four affine constraint sets.  Every
plan stays of the form ``diag(alpha) K diag(beta)`` so only the scaling
vectors are iterated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measures import DiscreteMeasure, GibbsKernel
from .sinkhorn import FLOOR, SolverConfig

__all__ = [
    "ScalingState",
    "PlanTriple",
    "UnreachableError",
    "update_plan",
    "update_plan_unbalanced",
    "plan_objective",
]

logger = logging.getLogger(__name__)

# anchor masses are clamped to at least this fraction of mass / k
MASS_CLAMP = 1e-12


class UnreachableError(ValueError):
    """A point or anchor that must carry mass has an all-zero kernel row/column."""


@dataclass
class ScalingState:
    alpha_x: np.ndarray
    beta_x: np.ndarray
    alpha_z: np.ndarray
    beta_z: np.ndarray
    alpha_y: np.ndarray
    beta_y: np.ndarray

    @classmethod
    def ones(cls, n, kx, ky, m) -> "ScalingState":
        return cls(np.ones(n), np.ones(kx), np.ones(kx), np.ones(ky), np.ones(ky), np.ones(m))

    def copy(self) -> "ScalingState":
        return ScalingState(*(v.copy() for v in self._vectors()))

    def _vectors(self):
        return (self.alpha_x, self.beta_x, self.alpha_z, self.beta_z, self.alpha_y, self.beta_y)

    def shapes(self):
        return tuple(v.shape[0] for v in self._vectors())


@dataclass
class PlanTriple:
    """Source-to-anchor, anchor-to-anchor and anchor-to-target plans."""

    px: np.ndarray
    pz: np.ndarray
    py: np.ndarray
    u_z: np.ndarray
    v_z: np.ndarray
    converged: bool = True
    iterations: int = 0
    violations: dict = field(default_factory=dict)
    state: Optional[ScalingState] = field(default=None, repr=False)
    dual_trace: list = field(default_factory=list, repr=False)

    @property
    def kx(self) -> int:
        return self.pz.shape[0]

    @property
    def ky(self) -> int:
        return self.pz.shape[1]

    def max_violation(self) -> float:
        return max(self.violations.values()) if self.violations else float("nan")


def _vec(m) -> np.ndarray:
    if isinstance(m, DiscreteMeasure):
        return m.weights
    return np.asarray(m, dtype=float).ravel()


def _kern(k):
    if isinstance(k, GibbsKernel):
        return k.values, k.epsilon
    return np.asarray(k, dtype=float), None


def _violations(Px, Pz, Py, mu, nu, u, v) -> dict:
    l1 = lambda a, b: float(np.abs(a - b).sum())  # noqa: E731
    return {
        "px_rows": l1(Px.sum(1), mu),
        "px_cols": l1(Px.sum(0), u),
        "pz_rows": l1(Pz.sum(1), u),
        "pz_cols": l1(Pz.sum(0), v),
        "py_rows": l1(Py.sum(1), v),
        "py_cols": l1(Py.sum(0), nu),
    }


def _check_reachable(Kx, Kz, Ky, mu, nu):
    rows = np.flatnonzero((Kx.max(1) <= 0) & (mu > 0))
    if rows.size:
        raise UnreachableError(f"source point(s) {rows.tolist()} cannot reach any source anchor")
    cols = np.flatnonzero((Ky.max(0) <= 0) & (nu > 0))
    if cols.size:
        raise UnreachableError(f"target point(s) {cols.tolist()} cannot reach any target anchor")
    zrows = np.flatnonzero(Kz.max(1) <= 0)
    if zrows.size:
        raise UnreachableError(f"source anchor {int(zrows[0])} has no admissible target anchor")


def _assemble(Kx, Kz, Ky, s: ScalingState):
    Px = s.alpha_x[:, None] * Kx * s.beta_x[None, :]
    Pz = s.alpha_z[:, None] * Kz * s.beta_z[None, :]
    Py = s.alpha_y[:, None] * Ky * s.beta_y[None, :]
    return Px, Pz, Py


def _xlogy(w, x) -> float:
    mask = w > 0
    return float(np.sum(w[mask] * np.log(x[mask])))


def update_plan(
    kx,
    kz,
    ky,
    mu,
    nu,
    cfg: Optional[SolverConfig] = None,
    warm: Optional[ScalingState] = None,
    log: bool = False,
):
    """Balanced plan update by iterative Bregman projections.

    One sweep performs, in order: the two outer marginal projections, the
    projection coupling ``Px^T 1`` with ``Pz 1`` (new ``u``), then the one
    coupling ``Pz^T 1`` with ``Py 1`` (new ``v``).  The coupled marginal is
    the geometric mean of the two current ones, weighted by the plans'
    regularisation strengths (the plain square root when they are equal).

    Parameters
    ----------
    kx, kz, ky : GibbsKernel or ndarray
        Kernels of shapes ``(n, kx)``, ``(kx, ky)``, ``(ky, m)``.  Bare arrays
        take their epsilon from ``cfg``.
    mu, nu : DiscreteMeasure or ndarray
        Outer marginals with equal mass.
    cfg : SolverConfig
        ``tol`` bounds the largest of the six L1 marginal violations.
    warm : ScalingState, optional
        Scalings to start from (ones otherwise).
    log : bool
        Record the dual objective after every sweep; it is non-decreasing.

    Returns
    -------
    plans : PlanTriple
    state : ScalingState
    """
    cfg = cfg or SolverConfig()
    Kx, ex = _kern(kx)
    Kz, ez = _kern(kz)
    Ky, ey = _kern(ky)
    ex, ez, ey = (e if e is not None else cfg.epsilon for e in (ex, ez, ey))
    mu, nu = _vec(mu), _vec(nu)
    n, k1 = Kx.shape
    k2, m = Ky.shape
    if Kz.shape != (k1, k2) or mu.size != n or nu.size != m:
        raise ValueError(f"inconsistent shapes: Kx {Kx.shape}, Kz {Kz.shape}, Ky {Ky.shape}, mu {mu.size}, nu {nu.size}")
    mass = mu.sum()
    if abs(mass - nu.sum()) > 1e-12 * max(1.0, mass):
        raise ValueError(f"source and target masses differ: {mass} vs {nu.sum()}")
    _check_reachable(Kx, Kz, Ky, mu, nu)

    s = ScalingState.ones(n, k1, k2, m) if warm is None else warm.copy()
    if s.shapes() != (n, k1, k1, k2, k2, m):
        raise ValueError("warm-start scalings do not match the kernel shapes")
    wu = ex / (ex + ez)
    wv = ey / (ey + ez)
    u_floor = MASS_CLAMP * mass / k1
    v_floor = MASS_CLAMP * mass / k2
    k_mass = (ex * Kx.sum(), ez * Kz.sum(), ey * Ky.sum())

    dual = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        # outer marginals
        s.alpha_x = mu / np.maximum(Kx @ s.beta_x, FLOOR)
        s.beta_y = nu / np.maximum(Ky.T @ s.alpha_y, FLOOR)
        # Px^T 1 = Pz 1 = u
        kxa = Kx.T @ s.alpha_x
        kzb = Kz @ s.beta_z
        u = np.maximum((s.beta_x * kxa) ** wu * (s.alpha_z * kzb) ** (1.0 - wu), u_floor)
        s.beta_x = u / np.maximum(kxa, FLOOR)
        s.alpha_z = u / np.maximum(kzb, FLOOR)
        # Pz^T 1 = Py 1 = v
        kza = Kz.T @ s.alpha_z
        kyb = Ky @ s.beta_y
        v = np.maximum((s.beta_z * kza) ** (1.0 - wv) * (s.alpha_y * kyb) ** wv, v_floor)
        s.beta_z = v / np.maximum(kza, FLOOR)
        s.alpha_y = v / np.maximum(kyb, FLOOR)

        # after the last projection only three constraints can be off
        err = max(
            np.abs(s.alpha_x * (Kx @ s.beta_x) - mu).sum(),
            np.abs(s.alpha_z * (Kz @ s.beta_z) - u).sum(),
            np.abs(s.beta_y * (Ky.T @ s.alpha_y) - nu).sum(),
        )
        if log:
            Px, Pz, Py = _assemble(Kx, Kz, Ky, s)
            dual.append(
                ex * _xlogy(mu, s.alpha_x)
                + ey * _xlogy(nu, s.beta_y)
                - ex * Px.sum() - ez * Pz.sum() - ey * Py.sum()
                + sum(k_mass)
            )
        if not np.isfinite(err):
            raise FloatingPointError("non-finite scalings in plan update")
        if err < cfg.tol:
            converged = True
            break

    Px, Pz, Py = _assemble(Kx, Kz, Ky, s)
    viol = _violations(Px, Pz, Py, mu, nu, u, v)
    if not converged:
        logger.warning("plan update did not converge in %d sweeps (violation %.3e)", cfg.max_iter, max(viol.values()))
    triple = PlanTriple(Px, Pz, Py, u, v, converged, it, viol, s, dual)
    return triple, s


def update_plan_unbalanced(
    kx,
    kz,
    ky,
    mu,
    nu,
    tau1: float,
    tau2: float,
    epsilon: float,
    cfg: Optional[SolverConfig] = None,
    warm: Optional[ScalingState] = None,
):
    """Plan update with KL-relaxed outer marginals.

    Minimises the balanced objective plus ``tau1 KL(z1|mu) + tau2 KL(z2|nu)``
    where ``z1 = Px 1`` and ``z2 = Py^T 1`` are free.  The outer steps are
    the proximal scaling updates (exponent ``tau / (tau + epsilon)``); the
    anchor-marginal steps are those of :func:`update_plan`.

    Returns
    -------
    plans : PlanTriple
        ``plans.state`` holds the final scalings for warm starts.
    relaxed : tuple of ndarray
        The relaxed marginals ``(z1, z2)``.
    """
    cfg = cfg or SolverConfig(epsilon=epsilon)
    if not (tau1 > 0 and tau2 > 0):
        raise ValueError("tau1 and tau2 must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    Kx, ex = _kern(kx)
    Kz, ez = _kern(kz)
    Ky, ey = _kern(ky)
    ex, ez, ey = (e if e is not None else epsilon for e in (ex, ez, ey))
    mu, nu = _vec(mu), _vec(nu)
    n, k1 = Kx.shape
    k2, m = Ky.shape
    if Kz.shape != (k1, k2) or mu.size != n or nu.size != m:
        raise ValueError("inconsistent kernel / marginal shapes")
    _check_reachable(Kx, Kz, Ky, mu, nu)

    s = ScalingState.ones(n, k1, k2, m) if warm is None else warm.copy()
    f1 = tau1 / (tau1 + ex)
    f2 = tau2 / (tau2 + ey)
    wu = ex / (ex + ez)
    wv = ey / (ey + ez)
    mass = 0.5 * (mu.sum() + nu.sum())
    u_floor = MASS_CLAMP * mass / k1
    v_floor = MASS_CLAMP * mass / k2

    converged = False
    it = 0
    prev = None
    for it in range(1, cfg.max_iter + 1):
        kb = np.maximum(Kx @ s.beta_x, FLOOR)
        z1 = kb ** (1.0 - f1) * mu**f1
        s.alpha_x = z1 / kb
        ka = np.maximum(Ky.T @ s.alpha_y, FLOOR)
        z2 = ka ** (1.0 - f2) * nu**f2
        s.beta_y = z2 / ka

        kxa = Kx.T @ s.alpha_x
        kzb = Kz @ s.beta_z
        u = np.maximum((s.beta_x * kxa) ** wu * (s.alpha_z * kzb) ** (1.0 - wu), u_floor)
        s.beta_x = u / np.maximum(kxa, FLOOR)
        s.alpha_z = u / np.maximum(kzb, FLOOR)
        kza = Kz.T @ s.alpha_z
        kyb = Ky @ s.beta_y
        v = np.maximum((s.beta_z * kza) ** (1.0 - wv) * (s.alpha_y * kyb) ** wv, v_floor)
        s.beta_z = v / np.maximum(kza, FLOOR)
        s.alpha_y = v / np.maximum(kyb, FLOOR)

        # relaxed marginals have no fixed target: stop when the scalings'
        # marginals stop moving and the hard anchor constraints hold
        cur = np.concatenate([s.alpha_x * (Kx @ s.beta_x), s.beta_y * (Ky.T @ s.alpha_y), u, v])
        inner = np.abs(s.alpha_z * (Kz @ s.beta_z) - u).sum()
        if not np.all(np.isfinite(cur)):
            raise FloatingPointError("non-finite scalings in unbalanced plan update")
        if prev is not None and np.abs(cur - prev).sum() < cfg.tol and inner < cfg.tol:
            converged = True
            break
        prev = cur

    Px, Pz, Py = _assemble(Kx, Kz, Ky, s)
    z1, z2 = Px.sum(1), Py.sum(0)
    viol = _violations(Px, Pz, Py, z1, z2, u, v)
    if not converged:
        logger.warning("unbalanced plan update did not converge in %d sweeps", cfg.max_iter)
    triple = PlanTriple(Px, Pz, Py, u, v, converged, it, viol, s)
    return triple, (z1, z2)


def plan_objective(plans: PlanTriple, costs, epsilons) -> float:
    """``sum_i <C_i, P_i> + eps_i sum P_i log P_i`` over the three plans."""
    total = 0.0
    for P, C, e in zip((plans.px, plans.pz, plans.py), costs, epsilons):
        mask = P > 0
        total += float(np.sum(P[mask] * C[mask])) + e * float(np.sum(P[mask] * np.log(P[mask])))
    return total
