"""Point clouds, discrete measures, ground costs and Gibbs kernels.

Points are stored column-wise: a cloud in ``R^d`` with ``n`` points is a
``(d, n)`` array.  Every cost and kernel in the package follows the
(rows = first argument, columns = second argument) layout.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

__all__ = [
    "PointCloud",
    "DiscreteMeasure",
    "MetricSpec",
    "GibbsKernel",
    "CsvFormatError",
    "build_measure",
    "sq_euclidean",
    "mahalanobis_cost",
    "gibbs_kernel",
    "wasserstein_anchor_cost",
    "read_csv",
    "write_csv",
]


class CsvFormatError(ValueError):
    """Raised for malformed point-cloud CSV input (carries line/column)."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if column is not None:
                loc += f", column {column}"
            loc += ": "
        super().__init__(loc + message)
        self.line = line
        self.column = column


@dataclass
class PointCloud:
    """A finite set of points in ``R^d`` stored as columns of ``points``."""

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must be a non-empty (d, n) matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite entries")
        self.points = pts
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (pts.shape[1],):
                raise ValueError(f"labels must have length {pts.shape[1]}, got shape {lab.shape}")
            self.labels = lab.astype(int)

    @classmethod
    def from_rows(cls, rows, labels=None) -> "PointCloud":
        """Build from an ``(n, d)`` array of row-points."""
        return cls(np.asarray(rows, dtype=float).T, labels)

    @property
    def dim(self) -> int:
        return self.points.shape[0]

    @property
    def size(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        lab = None if self.labels is None else self.labels[idx]
        return PointCloud(self.points[:, idx], lab)


@dataclass
class DiscreteMeasure:
    """Nonnegative weights attached to the points of a cloud."""

    weights: np.ndarray
    support: PointCloud

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != self.support.size:
            raise ValueError(f"weights have length {w.shape[0]}, support has {self.support.size} points")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if w.sum() <= 0:
            raise ValueError("weights must have positive total mass")
        self.weights = w

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def normalized(self) -> bool:
        return abs(self.mass - 1.0) <= 1e-12


def build_measure(cloud: PointCloud, weights=None) -> DiscreteMeasure:
    """Attach weights to ``cloud``; uniform ``1/n`` when ``weights`` is omitted."""
    if cloud.size < 1:
        raise ValueError("cannot build a measure on an empty cloud")
    if weights is None:
        weights = np.full(cloud.size, 1.0 / cloud.size)
    return DiscreteMeasure(np.asarray(weights, dtype=float), cloud)


@dataclass
class MetricSpec:
    """Mahalanobis matrix ``M`` (symmetric PSD) with a positive multiplier."""

    matrix: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"metric matrix must be square, got {m.shape}")
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-12:
            raise ValueError("metric matrix must be symmetric")
        if np.linalg.eigvalsh(m).min() < -1e-12:
            raise ValueError("metric matrix must be positive semi-definite")
        if not self.scale >= 0:
            raise ValueError("metric scale must be nonnegative")
        self.matrix = m

    @classmethod
    def identity(cls, d: int, scale: float = 1.0) -> "MetricSpec":
        return cls(np.eye(d), scale)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def effective(self) -> np.ndarray:
        return self.scale * self.matrix

    @property
    def is_isotropic(self) -> bool:
        m = self.matrix
        return bool(np.allclose(m, m[0, 0] * np.eye(m.shape[0]), rtol=0, atol=1e-15))


@dataclass
class GibbsKernel:
    """``exp(-C / epsilon)`` for a cost matrix ``C`` (``+inf`` cost maps to 0)."""

    values: np.ndarray
    epsilon: float
    cost: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def shape(self):
        return self.values.shape


def _as_points(a) -> np.ndarray:
    if isinstance(a, PointCloud):
        return a.points
    a = np.asarray(a, dtype=float)
    return a[None, :] if a.ndim == 1 else a


def sq_euclidean(a, b) -> np.ndarray:
    """Pairwise squared Euclidean distances between the columns of ``a`` and ``b``."""
    A, B = _as_points(a), _as_points(b)
    c = (A * A).sum(0)[:, None] + (B * B).sum(0)[None, :] - 2.0 * A.T @ B
    return np.maximum(c, 0.0)


def mahalanobis_cost(a, b, metric: Optional[MetricSpec] = None) -> np.ndarray:
    """Cost ``C[i, j] = scale * (a_i - b_j)^T M (a_i - b_j)``, clamped at 0."""
    A, B = _as_points(a), _as_points(b)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape[0]} vs {B.shape[0]}")
    if metric is None:
        return sq_euclidean(A, B)
    if metric.dim != A.shape[0]:
        raise ValueError(f"metric has dimension {metric.dim}, points have {A.shape[0]}")
    M = metric.effective
    MA, MB = M @ A, M @ B
    c = (A * MA).sum(0)[:, None] + (B * MB).sum(0)[None, :] - A.T @ MB - MA.T @ B
    return np.maximum(c, 0.0)


def gibbs_kernel(c, epsilon: float) -> GibbsKernel:
    """Entrywise ``exp(-c / epsilon)``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    c = np.asarray(c, dtype=float)
    if np.isnan(c).any():
        raise ValueError("cost matrix contains NaN")
    with np.errstate(over="ignore", under="ignore"):
        k = np.exp(-c / epsilon)
    k[np.isposinf(c)] = 0.0
    return GibbsKernel(k, float(epsilon), c)


def wasserstein_anchor_cost(px, py, X, Y, pz_prev, theta: float = 0.5, inner_epsilon=None, solver=None):
    """Anchor-to-anchor costs from entropic 2-Wasserstein distances.

    For each anchor pair ``(m, n)`` whose previous coupling exceeds
    ``theta`` times the row maximum of ``pz_prev``, solve an entropic OT
    between the conditional measures ``px[:, m] / sum`` on ``X`` and
    ``py[n, :] / sum`` on ``Y`` with squared Euclidean ground cost.
    Unselected pairs get ``+inf`` cost.

    Returns
    -------
    cost : ndarray, shape (kx, ky)
    inner : dict
        ``(m, n) -> (n_points, m_points)`` inner plan (each summing to 1)
        for the selected pairs only.
    """
    from .sinkhorn import SolverConfig, sinkhorn

    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    px, py, pz_prev = np.asarray(px, float), np.asarray(py, float), np.asarray(pz_prev, float)
    kx, ky = pz_prev.shape
    if px.shape[1] != kx or py.shape[0] != ky:
        raise ValueError("plan shapes are inconsistent with pz_prev")
    ground = sq_euclidean(X, Y)
    if inner_epsilon is None:
        inner_epsilon = 0.05 * float(np.median(ground))
        if inner_epsilon <= 0:
            inner_epsilon = 1.0
    base = solver or SolverConfig(epsilon=inner_epsilon, tol=1e-9, max_iter=10000)
    cfg = SolverConfig(epsilon=inner_epsilon, max_iter=base.max_iter, tol=base.tol, seed=base.seed)
    kernel = gibbs_kernel(ground, inner_epsilon)

    row_max = pz_prev.max(axis=1)
    cost = np.full((kx, ky), np.inf)
    inner = {}
    src_cloud = PointCloud(_as_points(X))
    tgt_cloud = PointCloud(_as_points(Y))
    for m in range(kx):
        for n in range(ky):
            if not pz_prev[m, n] > theta * row_max[m]:
                continue
            a, b = px[:, m], py[n, :]
            if a.sum() <= 0 or b.sum() <= 0:
                raise ValueError(f"conditional measure of anchor pair ({m}, {n}) has zero mass")
            plan = sinkhorn(
                DiscreteMeasure(a / a.sum(), src_cloud),
                DiscreteMeasure(b / b.sum(), tgt_cloud),
                kernel,
                cfg,
            )
            cost[m, n] = float(np.sum(plan.values * ground))
            inner[(m, n)] = plan.values
    return cost, inner


# ---------------------------------------------------------------------------
# CSV point-cloud format
# ---------------------------------------------------------------------------


def _parse_float(tok, line, col):
    try:
        v = float(tok)
    except ValueError:
        raise CsvFormatError(f"cannot parse {tok!r} as a number", line, col) from None
    if not math.isfinite(v):
        raise CsvFormatError(f"non-finite value {tok!r}", line, col)
    return v


def read_csv(source: Union[str, Path, io.TextIOBase]) -> PointCloud:
    """Read a point cloud: one point per row.

    A header row is detected when its first field is not numeric; a final
    header column named ``label`` marks integer labels.  Without a header
    every column is a coordinate.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            text = fh.read()
    else:
        text = source.read()
    rows = [(i + 1, r) for i, r in enumerate(csv.reader(io.StringIO(text))) if r and any(t.strip() for t in r)]
    if not rows:
        raise CsvFormatError("no data rows")
    has_label = False
    first_line, first = rows[0]
    try:
        float(first[0])
    except ValueError:
        names = [t.strip() for t in first]
        has_label = names[-1].lower() == "label"
        rows = rows[1:]
        if not rows:
            raise CsvFormatError("header without data rows", first_line)
    width = len(rows[0][1])
    coords, labels = [], []
    for line, r in rows:
        if len(r) != width:
            raise CsvFormatError(f"expected {width} columns, found {len(r)}", line)
        vals = [_parse_float(t.strip(), line, j + 1) for j, t in enumerate(r)]
        if has_label:
            lab = vals.pop()
            if lab != int(lab):
                raise CsvFormatError(f"label {lab!r} is not an integer", line, width)
            labels.append(int(lab))
        coords.append(vals)
    if has_label and width < 2:
        raise CsvFormatError("label column without coordinates", first_line)
    return PointCloud(np.array(coords, dtype=float).T, np.array(labels) if has_label else None)


def write_csv(cloud: PointCloud, dest: Union[str, Path, io.TextIOBase], header: Optional[bool] = None) -> None:
    """Write ``cloud`` in the CSV point-cloud format.

    A header is written whenever labels are present (the format needs it to
    recognise the label column); ``header=True`` forces one otherwise.
    """
    with_labels = cloud.labels is not None
    if header is None:
        header = with_labels
    if with_labels and not header:
        raise ValueError("labels can only be written with a header row")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        names = [f"x{k}" for k in range(cloud.dim)]
        w.writerow(names + (["label"] if with_labels else []))
    for j in range(cloud.size):
        row = [repr(float(v)) for v in cloud.points[:, j]]
        if with_labels:
            row.append(str(int(cloud.labels[j])))
        w.writerow(row)
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(buf.getvalue())
    else:
        dest.write(buf.getvalue())
