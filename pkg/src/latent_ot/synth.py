"""Seeded synthetic benchmarks: Gaussian mixtures, perturbations, hypercube and annulus."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .measures import PointCloud

__all__ = ["GmmSpec", "PerturbationSpec", "gen_gmm", "perturb", "gen_benchmark", "cluster_correlation"]


@dataclass(frozen=True)
class GmmSpec:
    """Mixture of ``components`` Gaussians living in a ``signal_dim`` subspace of R^``ambient_dim``."""

    components: int = 4
    ambient_dim: int = 30
    signal_dim: int = 5
    points_per_component: int = 100
    seed: int = 0
    mean_scale: float = 1.0

    def __post_init__(self):
        if min(self.components, self.ambient_dim, self.signal_dim, self.points_per_component) < 1:
            raise ValueError("all GMM sizes must be positive")
        if self.signal_dim > self.ambient_dim:
            raise ValueError(f"signal_dim {self.signal_dim} exceeds ambient_dim {self.ambient_dim}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if not self.mean_scale >= 0:
            raise ValueError("mean_scale must be nonnegative")


@dataclass(frozen=True)
class PerturbationSpec:
    """One of ``rotation`` (``angle`` degrees), ``outliers`` (``rate``),
    ``dim_pad`` (``dim``) or ``mismatch`` (``drop`` labels)."""

    kind: str
    angle: float = 0.0
    rate: float = 0.0
    dim: int = 0
    drop: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("rotation", "outliers", "dim_pad", "mismatch"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "rotation" and not 0.0 <= self.angle < 360.0:
            raise ValueError("rotation angle must lie in [0, 360)")
        if self.kind == "outliers" and not 0.0 <= self.rate <= 1.0:
            raise ValueError("outlier rate must lie in [0, 1]")


def _wishart_identity(rng, k: int) -> np.ndarray:
    # Wishart(k, I_k): Gram matrix of k standard normal vectors
    G = rng.standard_normal((k, k))
    return G.T @ G


def gen_gmm(spec: GmmSpec) -> Tuple[PointCloud, PointCloud]:
    """Draw labelled source and target clouds from one random mixture.

    Each component has a standard normal mean (times ``mean_scale``) and a Wishart(k, I)
    covariance in ``k = signal_dim`` dimensions.  Samples are mapped into
    R^d by one random orthonormal projection shared by all components and
    receive standard normal noise in all ``d`` coordinates.  Source and
    target draw ``points_per_component`` points per component independently.
    """
    rng = np.random.default_rng(spec.seed)
    k, d, M, npc = spec.signal_dim, spec.ambient_dim, spec.components, spec.points_per_component
    means = spec.mean_scale * rng.standard_normal((M, k))
    covs = [_wishart_identity(rng, k) for _ in range(M)]
    proj, _ = np.linalg.qr(rng.standard_normal((d, k)))

    def draw():
        pts, labels = [], []
        for c in range(M):
            s = rng.multivariate_normal(means[c], covs[c], size=npc, method="cholesky")
            pts.append(proj @ s.T + rng.standard_normal((d, npc)))
            labels.append(np.full(npc, c))
        return PointCloud(np.hstack(pts), np.concatenate(labels))

    source = draw()
    target = draw()
    return source, target


def _random_plane(rng, d: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((d, 2)))
    return q


def perturb(cloud: PointCloud, spec: PerturbationSpec, seed: int = 0) -> PointCloud:
    """Apply a seeded perturbation to ``cloud``.

    rotation
        Rotate every point by ``angle`` degrees in a random 2-plane through
        the origin (a Givens rotation in a random orthonormal frame).
    outliers
        Replace ``ceil(rate * n)`` random points ``x`` by
        ``0.5 x + 0.5 g`` with ``g ~ N(0, s^2 I)``, ``s^2`` half the squared
        norm of the point's component mean (global mean when unlabelled).
    dim_pad
        Append standard normal coordinates up to ``dim``.
    mismatch
        Drop every point whose label is in ``drop``.
    """
    rng = np.random.default_rng(seed)
    X = cloud.points
    d, n = X.shape
    if spec.kind == "rotation":
        if spec.angle == 0.0 or d < 2:
            return PointCloud(X.copy(), cloud.labels)
        Q = _random_plane(rng, d)
        t = math.radians(spec.angle)
        R2 = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        coords = Q.T @ X
        return PointCloud(X + Q @ ((R2 - np.eye(2)) @ coords), cloud.labels)
    if spec.kind == "outliers":
        n_out = math.ceil(spec.rate * n - 1e-9)
        Y = X.copy()
        if n_out == 0:
            return PointCloud(Y, cloud.labels)
        idx = np.sort(rng.choice(n, size=n_out, replace=False))
        labels = cloud.labels if cloud.labels is not None else np.zeros(n, dtype=int)
        for i in idx:
            mean = X[:, labels == labels[i]].mean(axis=1)
            sd = math.sqrt(0.5 * float(mean @ mean))
            Y[:, i] = 0.5 * X[:, i] + 0.5 * sd * rng.standard_normal(d)
        return PointCloud(Y, cloud.labels)
    if spec.kind == "dim_pad":
        if spec.dim < d:
            raise ValueError(f"cannot pad dimension {d} down to {spec.dim}")
        pad = rng.standard_normal((spec.dim - d, n))
        return PointCloud(np.vstack([X, pad]), cloud.labels)
    # mismatch
    if cloud.labels is None:
        raise ValueError("mismatch perturbation needs labels")
    keep = ~np.isin(cloud.labels, np.asarray(spec.drop, dtype=int))
    if not keep.any():
        raise ValueError("mismatch perturbation removed every point")
    return cloud.subset(np.flatnonzero(keep))


def _quadrant(P: np.ndarray) -> np.ndarray:
    return (P[0] > 0).astype(int) + 2 * (P[1] > 0).astype(int)


def gen_benchmark(kind: str, d: int = 30, n: int = 250, seed: int = 0) -> Tuple[PointCloud, PointCloud]:
    """Fragmented hypercube or annulus benchmark pair.

    hypercube
        Source uniform on ``[-1, 1]^d``; target ``T(x) = x + 2 sign(x) (e1 + e2)``
        applied to fresh uniform draws.  Labels are the quadrant id
        ``[x1 > 0] + 2 [x2 > 0]``.
    annulus
        First two coordinates uniform on the unit disk (source) or the
        ring of radii ``[2, 3]`` (target); the remaining coordinates are
        uniform on ``{0, 1}``.  Unlabelled.
    """
    if d < 2:
        raise ValueError("benchmarks need d >= 2")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if kind == "hypercube":
        X = rng.uniform(-1.0, 1.0, size=(d, n))
        Z = rng.uniform(-1.0, 1.0, size=(d, n))
        Y = Z.copy()
        Y[:2] += 2.0 * np.sign(Z[:2])
        return PointCloud(X, _quadrant(X)), PointCloud(Y, _quadrant(Z))
    if kind == "annulus":

        def ring(r_lo, r_hi):
            r = np.sqrt(rng.uniform(r_lo**2, r_hi**2, size=n))
            phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
            rest = rng.integers(0, 2, size=(d - 2, n)).astype(float)
            return PointCloud(np.vstack([r * np.cos(phi), r * np.sin(phi), rest]))

        return ring(0.0, 1.0), ring(2.0, 3.0)
    raise ValueError(f"unknown benchmark {kind!r}")


def cluster_correlation(clusters: Sequence[np.ndarray]) -> np.ndarray:
    """Mean inner product ``sum <x, y> / (|Ci| |Cj|)`` between point clusters (d x n_i each)."""
    sums = np.stack([np.asarray(c, dtype=float).mean(axis=1) for c in clusters])
    return sums @ sums.T
