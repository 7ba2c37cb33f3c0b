"""Seeded experiment grids: robustness sweeps, benchmarks, sampling and cluster correlation.

Every cell of a grid is one ``(method, sweep value, seed)`` triple and is a
pure function of the configuration, so cells may run on several threads and
the records are always returned in canonical order.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .analysis import (
    compose_plan,
    estimate_transport,
    estimate_transport_wa,
    knn_accuracy,
    latent_discrepancy,
    plan_deviation,
    transport_rank,
)
from .bregman import UnreachableError
from .lot import LotConfig, Variant, solve
from .measures import MetricSpec, PointCloud, gibbs_kernel, sq_euclidean
from .sinkhorn import SolverConfig, sinkhorn
from .synth import GmmSpec, PerturbationSpec, cluster_correlation, gen_benchmark, gen_gmm, perturb

__all__ = [
    "EXPERIMENTS",
    "METHODS",
    "SWEEP_PARAMS",
    "ExperimentConfig",
    "ResultRecord",
    "run_experiment",
    "summarize",
    "records_csv",
    "fit_slope",
    "lot_config_from_dict",
    "split_metric_scales",
    "lot_config_to_dict",
]

EXPERIMENTS = ("gmm_sweep", "hypercube", "annulus", "sampling", "cluster_correlation")
METHODS = ("OT", "LOT_L2", "LOT_WA", "FC_LIMIT", "UNBALANCED")
SWEEP_PARAMS = {
    "gmm_sweep": ("rotation", "outlier_rate", "dim", "mismatch", "rank"),
    "hypercube": ("epsilon", "k"),
    "annulus": ("epsilon", "k"),
    "sampling": ("n",),
    "cluster_correlation": ("mean_scale",),
}
DEFAULT_DATA = {
    "gmm_sweep": {"components": 4, "ambient_dim": 30, "signal_dim": 5, "points_per_component": 100},
    "hypercube": {"d": 30, "n": 250},
    "annulus": {"d": 30, "n": 250},
    "sampling": {"components": 4, "ambient_dim": 30, "signal_dim": 5, "points_per_component": 500},
    "cluster_correlation": {"components": 5, "ambient_dim": 30, "signal_dim": 5, "points_per_component": 50},
}
METRIC_COLUMNS = ("plan_deviation", "knn_accuracy", "transport_rank", "latent_discrepancy")
EXTRA_COLUMNS = ("delta_ot", "purity", "radius_error", "pattern_correlation")
# summary quantiles: a 75% band
BAND = (0.125, 0.875)

_VARIANTS = {
    "LOT_L2": Variant.L2,
    "LOT_WA": Variant.WA,
    "FC_LIMIT": Variant.FC_LIMIT,
    "UNBALANCED": Variant.UNBALANCED,
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def lot_config_to_dict(cfg: LotConfig) -> dict:
    """JSON-ready form of a :class:`LotConfig` (isotropic metrics as scales)."""
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, MetricSpec):
            if not v.is_isotropic:
                raise ValueError(f"{f.name} is not isotropic and cannot be serialised as a scale")
            v = float(v.scale * v.matrix[0, 0])
        elif isinstance(v, SolverConfig):
            v = asdict(v)
        elif isinstance(v, Variant):
            v = v.value
        out[f.name] = v
    return out


def lot_config_from_dict(d: dict, dim: Optional[int] = None) -> LotConfig:
    """Inverse of :func:`lot_config_to_dict`.

    Metric entries are isotropic scales and need the data dimension
    ``dim``; use :func:`split_metric_scales` first when it is unknown.
    """
    d = dict(d)
    solver = d.pop("solver", None) or {}
    metrics = {name: d.pop(name) for name in ("mx", "mz", "my") if d.get(name) is not None}
    for name in ("mx", "mz", "my"):
        d.pop(name, None)
    if metrics and dim is None:
        raise ValueError("metric scales need the data dimension")
    solver = SolverConfig(**{"epsilon": d.get("epsilon", 10.0), **solver})
    cfg = LotConfig(solver=solver, **d)
    for name, scale in metrics.items():
        setattr(cfg, name, MetricSpec.identity(dim, float(scale)))
    return cfg


def split_metric_scales(d: dict):
    """``(lot dict without metrics, {name: scale})``."""
    d = dict(d)
    scales = {name: float(d.pop(name)) for name in ("mx", "mz", "my") if d.get(name) is not None}
    for name in ("mx", "mz", "my"):
        d.pop(name, None)
    return d, scales


def _resolve_metrics(cfg: LotConfig, scales: dict, dim: int) -> LotConfig:
    if not scales:
        return cfg
    return replace(cfg, **{k: MetricSpec.identity(dim, s) for k, s in scales.items()})


@dataclass
class ExperimentConfig:
    """One experiment grid.

    ``sweep`` maps a single parameter name (see ``SWEEP_PARAMS``) to its
    values; ``data`` overrides the generator sizes of ``DEFAULT_DATA``.
    Repetition ``r`` uses seed ``seed + r``.  ``metric_scales`` holds
    isotropic scales for ``mx``, ``mz`` and ``my``.
    """

    experiment: str
    sweep_param: str
    sweep_values: List[float]
    repetitions: int = 1
    methods: List[str] = field(default_factory=lambda: ["OT", "LOT_L2"])
    lot: LotConfig = field(default_factory=lambda: LotConfig(kx=4, ky=4))
    output: Optional[str] = None
    seed: int = 0
    data: Dict[str, float] = field(default_factory=dict)
    metric_scales: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.sweep_param not in SWEEP_PARAMS[self.experiment]:
            raise ValueError(
                f"sweep parameter {self.sweep_param!r} is not valid for {self.experiment}; "
                f"choose from {', '.join(SWEEP_PARAMS[self.experiment])}"
            )
        if not self.sweep_values:
            raise ValueError("the sweep needs at least one value")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        unknown = set(self.data) - set(DEFAULT_DATA[self.experiment])
        if unknown:
            raise ValueError(f"unknown data field(s) {sorted(unknown)} for {self.experiment}")
        self.sweep_values = [float(v) for v in self.sweep_values]

    @property
    def data_params(self) -> dict:
        return {**DEFAULT_DATA[self.experiment], **self.data}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        sweep = d.pop("sweep", None)
        if sweep is not None:
            d["sweep_param"], d["sweep_values"] = sweep["param"], sweep["values"]
        if "lot" in d:
            lot, d["metric_scales"] = split_metric_scales(d["lot"])
            d["lot"] = lot_config_from_dict(lot)
        return cls(**d)

    def to_dict(self) -> dict:
        lot = lot_config_to_dict(self.lot)
        lot.update(self.metric_scales)
        return {
            "experiment": self.experiment,
            "sweep": {"param": self.sweep_param, "values": list(self.sweep_values)},
            "repetitions": self.repetitions,
            "methods": list(self.methods),
            "lot": lot,
            "output": self.output,
            "seed": self.seed,
            "data": dict(self.data),
        }


@dataclass
class ResultRecord:
    """Metrics of one ``(method, sweep value, seed)`` cell.

    Metrics that do not apply to a cell are None.
    """

    method: str
    sweep_value: float
    seed: int
    plan_deviation: Optional[float] = None
    knn_accuracy: Optional[float] = None
    transport_rank: Optional[int] = None
    latent_discrepancy: Optional[float] = None
    extras: Dict[str, float] = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0
    wall_time: float = 0.0
    error: Optional[str] = None
    artifacts: Dict[str, list] = field(default_factory=dict, repr=False)

    @property
    def key(self):
        return (self.method, self.sweep_value, self.seed)


# ---------------------------------------------------------------------------
# method runners
# ---------------------------------------------------------------------------


@dataclass
class _Fit:
    plan: np.ndarray  # composed n x m plan
    estimate: PointCloud
    cost: float  # unregularised transport cost
    discrepancy: Optional[float]
    converged: bool
    iterations: int
    px: Optional[np.ndarray] = None


def _entropic_ot(X: PointCloud, Y: PointCloud, cfg: LotConfig) -> _Fit:
    C = sq_euclidean(X.points, Y.points)
    n, m = C.shape
    # a constant shift leaves the balanced plan unchanged
    K = gibbs_kernel(C - C.min(), cfg.epsilon)
    solver = replace(cfg.solver, epsilon=cfg.epsilon)
    P = sinkhorn(np.full(n, 1.0 / n), np.full(m, 1.0 / m), K, solver)
    est = estimate_transport(P, X, Y, "ot_barycentric")
    return _Fit(P.values, est, float(np.sum(C * P.values)), None, P.converged, P.iterations)


def _fit(method: str, X: PointCloud, Y: PointCloud, cfg: LotConfig, scales: Optional[dict] = None) -> _Fit:
    if method == "OT":
        return _entropic_ot(X, Y, cfg)
    variant = _VARIANTS[method]
    c = replace(_resolve_metrics(cfg, scales or {}, X.dim), variant=variant)
    if variant is Variant.FC_LIMIT and c.kx != c.ky:
        c = replace(c, ky=c.kx)
    sol = solve(X, Y, c)
    if variant is Variant.WA:
        est = estimate_transport_wa(sol, X, Y)
    elif variant is Variant.FC_LIMIT:
        est = estimate_transport(sol, X, Y, "fc_displacement")
    else:
        est = estimate_transport(sol, X, Y, "lot_displacement")
    return _Fit(
        compose_plan(sol).values,
        est,
        sol.transport_cost,
        latent_discrepancy(sol),
        sol.converged,
        sol.iterations,
        sol.plans.px,
    )


# ---------------------------------------------------------------------------
# data per experiment
# ---------------------------------------------------------------------------


def _gmm_spec(params: dict, seed: int, **over) -> GmmSpec:
    p = {k: params[k] for k in ("components", "ambient_dim", "signal_dim", "points_per_component")}
    p = {k: int(v) for k, v in p.items()}
    p.update(over)
    return GmmSpec(seed=seed, **p)


def _gmm_pair(cfg: ExperimentConfig, value: float, seed: int):
    """Clean and perturbed ``(source, target)`` pairs plus the cell's LOT config."""
    X, Y = gen_gmm(_gmm_spec(cfg.data_params, seed))
    lot = cfg.lot
    p = cfg.sweep_param
    if p == "rotation":
        Xp, Yp = X, perturb(Y, PerturbationSpec("rotation", angle=value % 360.0), seed)
    elif p == "outlier_rate":
        Xp, Yp = perturb(X, PerturbationSpec("outliers", rate=value), seed), Y
    elif p == "dim":
        spec = PerturbationSpec("dim_pad", dim=int(value))
        Xp, Yp = perturb(X, spec, seed), perturb(Y, spec, seed + 1)
    elif p == "mismatch":
        drop = tuple(range(int(value)))
        Xp, Yp = (perturb(X, PerturbationSpec("mismatch", drop=drop)) if drop else X), Y
    else:  # rank
        k = int(value)
        lot = replace(lot, kx=k, ky=k)
        Xp, Yp = X, Y
    return (X, Y), (Xp, Yp), lot


def _cell_data(cfg: ExperimentConfig, value: float, seed: int):
    params = cfg.data_params
    lot = cfg.lot
    if cfg.experiment in ("hypercube", "annulus"):
        X, Y = gen_benchmark(cfg.experiment, int(params["d"]), int(params["n"]), seed)
        if cfg.sweep_param == "epsilon":
            lot = replace(lot, epsilon=value, solver=replace(lot.solver, epsilon=value))
        else:
            lot = replace(lot, kx=int(value), ky=int(value))
        return X, Y, lot
    if cfg.experiment == "cluster_correlation":
        X, Y = gen_gmm(_gmm_spec(params, seed, mean_scale=value))
        return X, Y, lot
    raise AssertionError(cfg.experiment)


def _quadrant_purity(px: np.ndarray, labels: np.ndarray) -> float:
    assign = np.argmax(px, axis=1)
    total = 0
    for m in np.unique(assign):
        total += np.bincount(labels[assign == m]).max()
    return float(total / labels.size)


def _class_plan(P: np.ndarray, lx: np.ndarray, ly: np.ndarray, classes: np.ndarray) -> np.ndarray:
    Ix = (lx[:, None] == classes[None, :]).astype(float)
    Iy = (ly[:, None] == classes[None, :]).astype(float)
    return Ix.T @ P @ Iy


def _cross_correlation(X: PointCloud, Y: PointCloud, classes: np.ndarray) -> np.ndarray:
    clusters = [X.points[:, X.labels == c] for c in classes] + [Y.points[:, Y.labels == c] for c in classes]
    k = classes.size
    return cluster_correlation(clusters)[:k, k:]


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _run_cell(cfg: ExperimentConfig, method: str, value: float, seed: int, refs: dict) -> ResultRecord:
    rec = ResultRecord(method, value, seed)
    t0 = time.perf_counter()
    try:
        _fill(cfg, method, value, seed, refs, rec)
    except (UnreachableError, FloatingPointError, ValueError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.converged = False
    rec.wall_time = time.perf_counter() - t0
    return rec


def _fill(cfg, method, value, seed, refs, rec: ResultRecord):
    exp = cfg.experiment
    if exp == "gmm_sweep":
        (X, Y), (Xp, Yp), lot = _gmm_pair(cfg, value, seed)
        fit = _fit(method, Xp, Yp, lot, cfg.metric_scales)
        ref = refs[(method, seed)] if cfg.sweep_param != "rank" else refs[("OT", seed)]
        if ref is not None and ref.plan.shape == fit.plan.shape:
            rec.plan_deviation = plan_deviation(fit.plan, ref.plan)
        rec.knn_accuracy = knn_accuracy(fit.estimate, Yp)
    elif exp == "sampling":
        X, Y = refs[("data", seed)]
        n = int(value)
        if n > X.size:
            raise ValueError(f"subsample size {n} exceeds the {X.size} source points")
        rng = np.random.default_rng([seed, n])
        idx = np.sort(rng.choice(X.size, size=n, replace=False))
        Xs = X.subset(idx)
        fit = _fit(method, Xs, Y, cfg.lot, cfg.metric_scales)
        full = refs[(method, seed)]
        rec.extras["delta_ot"] = abs(full.cost - fit.cost)
        rec.knn_accuracy = knn_accuracy(fit.estimate, Y)
    else:
        X, Y, lot = _cell_data(cfg, value, seed)
        fit = _fit(method, X, Y, lot, cfg.metric_scales)
        if exp == "hypercube":
            rec.knn_accuracy = knn_accuracy(fit.estimate, Y)
            if fit.px is not None:
                rec.extras["purity"] = _quadrant_purity(fit.px, X.labels)
        elif exp == "annulus":
            r = np.linalg.norm(fit.estimate.points[:2], axis=0)
            rec.extras["radius_error"] = float(np.mean(np.maximum(2.0 - r, 0.0) + np.maximum(r - 3.0, 0.0)))
        else:
            classes = np.unique(np.concatenate([X.labels, Y.labels]))
            rec.knn_accuracy = knn_accuracy(fit.estimate, Y)
            plan = _class_plan(fit.plan, X.labels, Y.labels, classes)
            corr = _cross_correlation(X, Y, classes)
            rec.extras["pattern_correlation"] = float(np.corrcoef(plan.ravel(), corr.ravel())[0, 1])
            rec.artifacts = {"class_plan": plan.tolist(), "cluster_correlation": corr.tolist()}
    rec.transport_rank = transport_rank(fit.plan)
    rec.latent_discrepancy = fit.discrepancy
    rec.converged = bool(fit.converged)
    rec.iterations = int(fit.iterations)
    for name in METRIC_COLUMNS:
        v = getattr(rec, name)
        if v is not None and name != "transport_rank":
            setattr(rec, name, _finite(v))
    rec.extras = {k: _finite(v) for k, v in rec.extras.items()}


def _references(cfg: ExperimentConfig, seeds, pool_map) -> dict:
    """Per-seed reference fits (clean-data plans, full-sample costs)."""
    refs: dict = {}
    if cfg.experiment == "gmm_sweep":
        methods = set(cfg.methods) | ({"OT"} if cfg.sweep_param == "rank" else set())
        jobs = [(m, s) for m in sorted(methods) for s in seeds]

        def ref(job):
            m, s = job
            X, Y = gen_gmm(_gmm_spec(cfg.data_params, s))
            try:
                return _fit(m, X, Y, cfg.lot, cfg.metric_scales)
            except (UnreachableError, FloatingPointError, ValueError):
                return None

        refs.update(zip(jobs, pool_map(ref, jobs)))
    elif cfg.experiment == "sampling":
        for s in seeds:
            refs[("data", s)] = gen_gmm(_gmm_spec(cfg.data_params, s))
        jobs = [(m, s) for m in cfg.methods for s in seeds]
        refs.update(zip(jobs, pool_map(lambda j: _fit(j[0], *refs[("data", j[1])], cfg.lot, cfg.metric_scales), jobs)))
    return refs


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> List[ResultRecord]:
    """Run every ``(method, sweep value, seed)`` cell of the grid.

    ``jobs`` threads share the cells (the ``LOT_JOBS`` environment variable
    takes precedence).  Records are sorted by method, sweep value and seed.
    For the sampling experiment every seed draws its own full 2-cloud
    instance and subsamples the source without replacement.
    """
    env = os.environ.get("LOT_JOBS")
    if env:
        jobs = int(env)
    if jobs < 1:
        raise ValueError("jobs must be positive")
    seeds = [cfg.seed + r for r in range(cfg.repetitions)]
    cells = [(m, v, s) for m in cfg.methods for v in cfg.sweep_values for s in seeds]
    with ThreadPoolExecutor(max_workers=jobs) as pool:

        def pool_map(fn, items):
            return list(pool.map(fn, items)) if jobs > 1 else [fn(i) for i in items]

        refs = _references(cfg, seeds, pool_map)
        records = pool_map(lambda c: _run_cell(cfg, c[0], c[1], c[2], refs), cells)
    return sorted(records, key=lambda r: r.key)


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def records_csv(records: Sequence[ResultRecord]) -> str:
    """CSV text of the records (wall times excluded so reruns are byte-identical)."""
    header = ["method", "sweep_value", "seed", *METRIC_COLUMNS, *EXTRA_COLUMNS, "converged", "iterations", "error"]
    lines = [",".join(header)]
    for r in records:
        row = [r.method, _fmt(r.sweep_value), str(r.seed)]
        row += [_fmt(getattr(r, c)) for c in METRIC_COLUMNS]
        row += [_fmt(r.extras.get(c)) for c in EXTRA_COLUMNS]
        row += [_fmt(r.converged), str(r.iterations), (r.error or "").replace(",", ";").replace("\n", " ")]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def fit_slope(pairs) -> Optional[float]:
    """Least-squares slope of ``log y`` against ``log x`` over pairs with ``y > 0``."""
    pts = [(x, y) for x, y in pairs if y is not None and y > 0 and x > 0]
    if len({x for x, _ in pts}) < 2:
        return None
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    return float(np.polyfit(lx, ly, 1)[0])


def _band(values) -> Optional[dict]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    a = np.asarray(vals, dtype=float)
    lo, hi = np.quantile(a, BAND)
    return {"mean": float(a.mean()), "q_low": float(lo), "q_high": float(hi), "count": int(a.size)}


def summarize(cfg: ExperimentConfig, records: Sequence[ResultRecord]) -> dict:
    """JSON summary: per ``(method, sweep value)`` means and 12.5 / 87.5 % quantiles."""
    groups: Dict[tuple, List[ResultRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.sweep_value), []).append(r)
    cells = []
    for (method, value), recs in sorted(groups.items()):
        metrics = {c: _band([getattr(r, c) for r in recs]) for c in METRIC_COLUMNS}
        for c in EXTRA_COLUMNS:
            b = _band([r.extras.get(c) for r in recs])
            if b is not None:
                metrics[c] = b
        cell = {
            "method": method,
            "sweep_value": value,
            "metrics": metrics,
            "converged": sum(r.converged for r in recs),
            "failed": sum(r.error is not None for r in recs),
            "runs": len(recs),
        }
        first = min(recs, key=lambda r: r.seed)
        if first.artifacts:
            cell["artifacts"] = {"seed": first.seed, **first.artifacts}
        cells.append(cell)
    out = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "records": len(records),
        "summary": cells,
        "wall_time_seconds": {
            "total": float(sum(r.wall_time for r in records)),
            "cells": [
                {"method": r.method, "sweep_value": r.sweep_value, "seed": r.seed, "seconds": r.wall_time}
                for r in records
            ],
        },
    }
    if cfg.experiment == "sampling":
        out["slopes"] = {
            m: fit_slope([(r.sweep_value, r.extras.get("delta_ot")) for r in records if r.method == m])
            for m in cfg.methods
        }
        out["pairs"] = [
            {"method": r.method, "n": int(r.sweep_value), "seed": r.seed, "delta_ot": r.extras.get("delta_ot")}
            for r in records
        ]
    return out
