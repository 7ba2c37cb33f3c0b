"""Entropic optimal transport by Sinkhorn matrix scaling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measures import DiscreteMeasure, GibbsKernel

__all__ = [
    "FLOOR",
    "SolverConfig",
    "TransportPlan",
    "sinkhorn",
    "ot_cost",
    "kl_divergence",
    "entropy",
]

logger = logging.getLogger(__name__)

# underflow floor for scaling denominators
FLOOR = 1e-300


@dataclass
class SolverConfig:
    """Settings shared by the scaling solvers.

    ``tol`` bounds the L1 violation of every marginal constraint.
    ``cold_start`` makes the LOT plan step re-initialise its scalings to
    ones on every call instead of reusing the previous ones.
    """

    epsilon: float = 10.0
    max_iter: int = 10000
    tol: float = 1e-6
    seed: int = 0
    cold_start: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass
class TransportPlan:
    """A coupling matrix together with its target marginals."""

    values: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    tol: float = 1e-6
    converged: bool = True
    iterations: int = 0
    trace: list = field(default_factory=list, repr=False)
    dual_trace: list = field(default_factory=list, repr=False)

    @property
    def shape(self):
        return self.values.shape

    def marginal_violation(self) -> float:
        """Max of the row and column L1 marginal violations."""
        r = np.abs(self.values.sum(1) - self.row_marginal).sum()
        c = np.abs(self.values.sum(0) - self.col_marginal).sum()
        return float(max(r, c))


def _values(p):
    return p.values if hasattr(p, "values") else np.asarray(p, dtype=float)


def ot_cost(p, c) -> float:
    """``sum_ij C[i, j] P[i, j]`` with the convention ``0 * inf = 0``."""
    P, C = _values(p), np.asarray(c, dtype=float)
    if P.shape != C.shape:
        raise ValueError(f"shape mismatch: plan {P.shape} vs cost {C.shape}")
    mask = P > 0
    return float(np.sum(P[mask] * C[mask]))


def entropy(a) -> float:
    """``-sum a log a`` (natural log, ``0 log 0 = 0``)."""
    a = np.asarray(a, dtype=float).ravel()
    a = a[a > 0]
    return float(-np.sum(a * np.log(a)))


def kl_divergence(p, k) -> float:
    """``sum P log(P / K)`` over the support of ``P``.

    This is the plain (not generalised) KL; it is ``+inf`` when ``P`` puts
    mass where ``K`` vanishes.
    """
    P, K = _values(p), _values(k)
    mask = P > 0
    if np.any(K[mask] <= 0):
        return float("inf")
    return float(np.sum(P[mask] * (np.log(P[mask]) - np.log(K[mask]))))


def sinkhorn(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    k: GibbsKernel,
    cfg: Optional[SolverConfig] = None,
    log: bool = False,
) -> TransportPlan:
    r"""Solve :math:`\min_P \varepsilon KL(P \| K)` under the marginals ``mu``, ``nu``.

    Alternating scalings ``alpha <- mu / (K beta)``, ``beta <- nu / (K^T alpha)``
    run until the row violation (columns are exact after each sweep) is
    below ``cfg.tol`` or ``cfg.max_iter`` sweeps are spent.  Non-convergence
    is reported through ``converged`` rather than raised.

    Parameters
    ----------
    mu, nu : DiscreteMeasure
        Source and target measures with equal total mass.
    k : GibbsKernel
        Kernel of shape ``(len(mu), len(nu))``.
    cfg : SolverConfig, optional
    log : bool
        Record ``eps * KL(P || K)`` of every iterate in ``plan.trace`` and
        the dual objective in ``plan.dual_trace``.  The iterates are
        infeasible until convergence, so the primal values climb towards
        the optimum; the dual values are the monotone (non-decreasing) ones.
    """
    cfg = cfg or SolverConfig()
    a, b = _weights(mu), _weights(nu)
    K = _values(k)
    if K.shape != (a.size, b.size):
        raise ValueError(f"kernel shape {K.shape} does not match measures ({a.size}, {b.size})")
    if abs(a.sum() - b.sum()) > 1e-12 * max(1.0, a.sum()):
        raise ValueError(f"source and target masses differ: {a.sum()} vs {b.sum()}")
    zero_rows = np.flatnonzero((K.max(1) <= 0) & (a > 0))
    zero_cols = np.flatnonzero((K.max(0) <= 0) & (b > 0))
    if zero_rows.size or zero_cols.size:
        raise ValueError(f"kernel has zero rows {zero_rows.tolist()} / columns {zero_cols.tolist()} carrying mass")

    eps = getattr(k, "epsilon", cfg.epsilon)
    alpha = np.ones_like(a)
    beta = np.ones_like(b)
    trace, dual_trace = [], []
    k_mass = K.sum()
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        alpha = a / np.maximum(K @ beta, FLOOR)
        beta = b / np.maximum(K.T @ alpha, FLOOR)
        row = alpha * (K @ beta)
        err = np.abs(row - a).sum()
        if log:
            trace.append(eps * kl_divergence(alpha[:, None] * K * beta[None, :], K))
            dual_trace.append(eps * (_xlogy(a, alpha) + _xlogy(b, beta) - row.sum() + k_mass))
        if err < cfg.tol:
            converged = True
            break
    if not converged:
        logger.warning("sinkhorn did not converge in %d iterations (violation %.3e)", cfg.max_iter, err)
    P = alpha[:, None] * K * beta[None, :]
    return TransportPlan(P, a, b, cfg.tol, converged, it, trace, dual_trace)


def _weights(m) -> np.ndarray:
    if isinstance(m, DiscreteMeasure):
        return m.weights
    return np.asarray(m, dtype=float).ravel()


def _xlogy(w, x) -> float:
    mask = w > 0
    return float(np.sum(w[mask] * np.log(x[mask])))
