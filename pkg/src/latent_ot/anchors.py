"""Anchor initialisation, closed-form anchor relocation and Procrustes transforms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .measures import MetricSpec, PointCloud, mahalanobis_cost, sq_euclidean

__all__ = [
    "AnchorSet",
    "StiefelTransform",
    "SingularAnchorSystem",
    "kmeans_init",
    "update_anchors",
    "solve_anchor_system",
    "anchor_objective",
    "procrustes_update",
]

JITTER = 1e-10


class SingularAnchorSystem(ValueError):
    """The anchor linear system is singular; usually a zero-mass anchor."""

    def __init__(self, message, anchor=None):
        super().__init__(message)
        self.anchor = anchor


@dataclass
class AnchorSet:
    locations: np.ndarray  # (d, k)
    masses: np.ndarray  # (k,)

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        self.masses = np.asarray(self.masses, dtype=float).ravel()
        if self.masses.shape[0] != self.locations.shape[1]:
            raise ValueError("one mass per anchor is required")
        if not np.all(np.isfinite(self.locations)):
            raise ValueError("anchor locations must be finite")
        if np.any(self.masses < 0):
            raise ValueError("anchor masses must be nonnegative")

    @property
    def k(self) -> int:
        return self.locations.shape[1]


@dataclass
class StiefelTransform:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("transform must be a square matrix")
        if np.linalg.norm(m.T @ m - np.eye(m.shape[0])) >= 1e-8:
            raise ValueError("transform is not orthogonal")
        self.matrix = m


def _pts(a) -> np.ndarray:
    if isinstance(a, PointCloud):
        return a.points
    if isinstance(a, AnchorSet):
        return a.locations
    a = np.asarray(a, dtype=float)
    return a[None, :] if a.ndim == 1 else a


# ---------------------------------------------------------------------------
# k-means++ / Lloyd
# ---------------------------------------------------------------------------


def kmeans_init(cloud, k: int, seed: int = 0, weights=None, max_iter: int = 100) -> AnchorSet:
    """Weighted k-means++ seeding followed by Lloyd iterations.

    Lloyd stops at an assignment fixpoint or after ``max_iter`` rounds.
    Anchor masses are the weight fractions of the final clusters.
    """
    X = _pts(cloud)
    n = X.shape[1]
    if k < 1:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k = {k} exceeds the number of points ({n})")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != n or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("invalid point weights")
    w = w / w.sum()
    support = np.flatnonzero(w > 0)
    if np.unique(X[:, support].T, axis=0).shape[0] < k:
        raise ValueError(f"fewer than k = {k} distinct weighted points")

    rng = np.random.default_rng(seed)
    centers = np.empty((X.shape[0], k))
    first = rng.choice(n, p=w)
    centers[:, 0] = X[:, first]
    d2 = sq_euclidean(X, centers[:, :1])[:, 0]
    for c in range(1, k):
        p = w * d2
        tot = p.sum()
        idx = rng.choice(n, p=p / tot)
        centers[:, c] = X[:, idx]
        d2 = np.minimum(d2, sq_euclidean(X, centers[:, c : c + 1])[:, 0])

    assign = None
    for _ in range(max_iter):
        dist = sq_euclidean(X, centers)
        new = np.argmin(dist, axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            members = assign == c
            wc = w[members].sum()
            if wc > 0:
                centers[:, c] = X[:, members] @ w[members] / wc
            else:
                # empty cluster: move it to the worst-served point
                far = int(np.argmax(w * dist[np.arange(n), assign]))
                centers[:, c] = X[:, far]
                assign[far] = c
    masses = np.bincount(assign, weights=w, minlength=k)
    return AnchorSet(centers, masses)


# ---------------------------------------------------------------------------
# closed-form anchor update
# ---------------------------------------------------------------------------


def _metric(m: Optional[MetricSpec], d: int) -> MetricSpec:
    m = MetricSpec.identity(d) if m is None else m
    if m.dim != d:
        raise ValueError(f"metric dimension {m.dim} does not match data dimension {d}")
    return m


def _common_scales(*metrics: MetricSpec):
    """Scalars ``s_i`` with ``M_i = s_i B`` for one shared ``B``, or None."""
    mats = [m.effective for m in metrics]
    base = max(mats, key=np.linalg.norm)
    nb = np.linalg.norm(base)
    if nb == 0:
        return None
    out = []
    for m in mats:
        s = float(np.sum(m * base)) / nb**2
        if np.linalg.norm(m - s * base) > 1e-12 * nb:
            return None
        out.append(s)
    return out


def solve_anchor_system(
    X,
    Ys: Sequence,
    pxs: Sequence[np.ndarray],
    pzs: Sequence[np.ndarray],
    pys: Sequence[np.ndarray],
    mx: Optional[MetricSpec] = None,
    mz: Optional[MetricSpec] = None,
    my: Optional[MetricSpec] = None,
):
    """Jointly minimise the anchor-dependent transport cost.

    Source anchors are shared by all targets; each target ``t`` has its own
    anchors, plans ``pxs[t]`` (n x kx), ``pzs[t]`` (kx x ky_t) and
    ``pys[t]`` (ky_t x m_t).  Setting the gradient to zero gives, per target,

        (Mx Zx diag(Px^T 1) + Mz Zx diag(Pz 1)) - Mz Zy Pz^T = Mx X Px
        (My Zy diag(Py 1) + Mz Zy diag(Pz^T 1)) - Mz Zx Pz   = My Y Py^T

    with the source equations summed over targets.  The system is symmetric
    positive definite whenever every anchor carries mass.  When the three
    metrics share a common matrix up to scale the ``d``-dimensional factor
    cancels and a ``(kx + sum ky)``-square system is factorised; otherwise
    the full ``d (kx + sum ky)`` system is assembled.

    Returns ``(Zx, [Zy_t ...])``.
    """
    X = _pts(X)
    Ys = [_pts(Y) for Y in Ys]
    d = X.shape[0]
    mx, mz, my = _metric(mx, d), _metric(mz, d), _metric(my, d)
    kx = pzs[0].shape[0]
    kys = [pz.shape[1] for pz in pzs]
    starts = kx + np.concatenate([[0], np.cumsum(kys)[:-1]]).astype(int)
    ktot = kx + sum(kys)

    scales = _common_scales(mx, mz, my)
    if scales is not None:
        # all metrics are multiples of one matrix B, which then cancels
        # from the first-order conditions: solve in anchor space only
        a, c, b = scales
        S = np.zeros((ktot, ktot))
        R = np.zeros((d, ktot))
        for s, px, pz, py, Y in zip(starts, pxs, pzs, pys, Ys):
            sl = slice(s, s + pz.shape[1])
            S[:kx, :kx] += np.diag(a * px.sum(0) + c * pz.sum(1))
            S[:kx, sl] -= c * pz
            S[sl, :kx] -= c * pz.T
            S[sl, sl] += np.diag(b * py.sum(1) + c * pz.sum(0))
            R[:, :kx] += a * X @ px
            R[:, sl] += b * Y @ py.T
        Z = _cholesky_solve(S, R.T, block=1).T
    else:
        Mx, Mz, My = mx.effective, mz.effective, my.effective
        A = np.zeros((d * ktot, d * ktot))
        R = np.zeros((d, ktot))
        xs = slice(0, d * kx)
        for s, px, pz, py, Y in zip(starts, pxs, pzs, pys, Ys):
            ys = slice(d * s, d * (s + pz.shape[1]))
            A[xs, xs] += np.kron(np.diag(px.sum(0)), Mx) + np.kron(np.diag(pz.sum(1)), Mz)
            A[xs, ys] -= np.kron(pz, Mz)
            A[ys, xs] -= np.kron(pz.T, Mz)
            A[ys, ys] += np.kron(np.diag(py.sum(1)), My) + np.kron(np.diag(pz.sum(0)), Mz)
            R[:, :kx] += Mx @ X @ px
            R[:, s : s + pz.shape[1]] += My @ Y @ py.T
        z = _cholesky_solve(A, R.reshape(-1, order="F"), block=d)
        Z = z.reshape(d, ktot, order="F")
    return Z[:, :kx], [Z[:, s : s + ky] for s, ky in zip(starts, kys)]


def _cholesky_solve(A, rhs, block: int):
    A = A + JITTER * np.trace(A) / A.shape[0] * np.eye(A.shape[0]) if np.trace(A) > 0 else A
    try:
        factor = cho_factor(A, lower=True, check_finite=True)
    except LinAlgError:
        diag = np.diag(A).reshape(-1, block).sum(1)
        bad = int(np.argmin(diag))
        raise SingularAnchorSystem(f"anchor system is singular (anchor {bad} carries no mass)", bad) from None
    return cho_solve(factor, rhs)


def update_anchors(X, Y, plans, mx=None, mz=None, my=None, transform=None):
    """Closed-form minimiser of the transport cost over anchor locations.

    ``plans`` is a :class:`~latent_ot.bregman.PlanTriple`.  With an
    orthogonal ``transform`` ``O`` the anchor-to-anchor cost is taken
    between ``O zx`` and ``zy``; the update then runs in the rotated source
    frame and is mapped back.

    Returns
    -------
    anchors_x, anchors_y : AnchorSet
        New locations with masses ``plans.u_z`` and ``plans.v_z``.
    """
    Xp = _pts(X)
    d = Xp.shape[0]
    mx = _metric(mx, d)
    if transform is not None:
        O = transform.matrix if isinstance(transform, StiefelTransform) else np.asarray(transform, float)
        Xp = O @ Xp
        mx = MetricSpec(O @ mx.matrix @ O.T, mx.scale) if not mx.is_isotropic else mx
    zx, (zy,) = solve_anchor_system(Xp, [Y], [plans.px], [plans.pz], [plans.py], mx, mz, my)
    if transform is not None:
        zx = O.T @ zx
    return AnchorSet(zx, plans.u_z), AnchorSet(zy, plans.v_z)


def anchor_objective(X, Y, plans, zx, zy, mx=None, mz=None, my=None, transform=None) -> float:
    """``<Cx, Px> + <Cz, Pz> + <Cy, Py>`` at the given anchor locations."""
    zx, zy = _pts(zx), _pts(zy)
    zxt = zx if transform is None else _transform_matrix(transform) @ zx
    cx = mahalanobis_cost(X, zx, mx)
    cz = mahalanobis_cost(zxt, zy, mz)
    cy = mahalanobis_cost(zy, Y, my)
    return float(np.sum(cx * plans.px) + np.sum(cz * plans.pz) + np.sum(cy * plans.py))


def _transform_matrix(t) -> np.ndarray:
    return t.matrix if isinstance(t, StiefelTransform) else np.asarray(t, dtype=float)


# ---------------------------------------------------------------------------
# orthogonal transform
# ---------------------------------------------------------------------------


def procrustes_update(zx, zy, pz) -> StiefelTransform:
    """Orthogonal ``O`` maximising ``<O, Zy Pz^T Zx^T>`` (``O = U V^T`` from its SVD)."""
    Zx, Zy = _pts(zx), _pts(zy)
    Pz = np.asarray(getattr(pz, "values", pz), dtype=float)
    if Zx.shape[0] != Zy.shape[0] or Pz.shape != (Zx.shape[1], Zy.shape[1]):
        raise ValueError(f"shape mismatch: Zx {Zx.shape}, Zy {Zy.shape}, Pz {Pz.shape}")
    U, _, Vt = np.linalg.svd(Zy @ Pz.T @ Zx.T)
    return StiefelTransform(U @ Vt)
