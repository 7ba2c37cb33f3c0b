"""Command-line interface: ``lot solve``, ``lot experiment`` and ``lot tune-epsilon``.

Exit codes are 0 on success, 2 when a solve did not converge (results are
still written) and 1 on input or usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import struct
import sys
from importlib import resources
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from .analysis import compose_plan, estimate_transport, estimate_transport_wa, latent_discrepancy, transport_rank
from .anchors import SingularAnchorSystem
from .bregman import UnreachableError
from .experiments import ExperimentConfig, lot_config_to_dict, records_csv, run_experiment, summarize
from .lot import LotConfig, Variant, solve
from .measures import CsvFormatError, MetricSpec, read_csv, write_csv
from .sinkhorn import SolverConfig

__all__ = ["main", "dump_json", "validate", "write_lotp", "read_lotp", "LOTP_LIMIT"]

# plans with more entries than this go to a binary sidecar
LOTP_LIMIT = 10**6
LOTP_MAGIC = b"LOTP"
# magic, rows, cols and four reserved bytes
_LOTP_HEADER = struct.Struct("<4sIII")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
_SOLVE_FAILURES = (UnreachableError, SingularAnchorSystem, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def dump_json(obj) -> str:
    """Canonical JSON text: sorted keys, two-space indent, no NaN or infinity."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _schema(name: str) -> dict:
    text = resources.files("latent_ot").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(obj, name: str) -> None:
    """Validate ``obj`` against the shipped schema ``name`` (e.g. ``"solve"``)."""
    jsonschema.validate(obj, _schema(name), cls=jsonschema.Draft202012Validator)


def _write_json(obj, path: Path, schema: str) -> None:
    validate(obj, schema)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(obj))


def write_lotp(path, values: np.ndarray) -> None:
    """Binary plan file: 16-byte header then little-endian float64, row-major."""
    a = np.ascontiguousarray(values, dtype="<f8")
    rows, cols = a.shape
    with open(path, "wb") as fh:
        fh.write(_LOTP_HEADER.pack(LOTP_MAGIC, rows, cols, 0))
        fh.write(a.tobytes(order="C"))


def read_lotp(path) -> np.ndarray:
    """Inverse of :func:`write_lotp`."""
    with open(path, "rb") as fh:
        head = fh.read(_LOTP_HEADER.size)
        if len(head) != _LOTP_HEADER.size:
            raise ValueError("truncated LOTP header")
        magic, rows, cols, _ = _LOTP_HEADER.unpack(head)
        if magic != LOTP_MAGIC:
            raise ValueError("not a LOTP file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"LOTP body holds {data.size} values, header says {rows} x {cols}")
    return data.reshape(rows, cols).astype(float)


def _matrix(a) -> list:
    return [[float(v) for v in row] for row in np.atleast_2d(a)]


def _vector(a) -> list:
    return [float(v) for v in np.ravel(a)]


def _plan_entry(P: np.ndarray, stem: Path, name: str):
    if P.size > LOTP_LIMIT:
        path = stem.with_name(f"{stem.name}.{name}.lotp")
        write_lotp(path, P)
        return {"sidecar": path.name, "rows": int(P.shape[0]), "cols": int(P.shape[1]), "format": "LOTP"}
    return _matrix(P)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"{text!r} must be positive and finite")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return v


def _add_lot_options(p: argparse.ArgumentParser, with_epsilon: bool = True) -> None:
    p.add_argument("--source", required=True, type=Path, help="source point-cloud CSV")
    p.add_argument("--target", required=True, type=Path, help="target point-cloud CSV")
    p.add_argument("--kx", required=True, type=_positive_int, help="number of source anchors")
    p.add_argument("--ky", required=True, type=_positive_int, help="number of target anchors")
    if with_epsilon:
        p.add_argument("--epsilon", type=_positive_float, default=10.0, help="entropic regularisation (default 10)")
        p.add_argument("--epsilon-z", type=_positive_float, help="anchor-to-anchor regularisation")
        p.add_argument("--epsilon-y", type=_positive_float, help="target-side regularisation")
    p.add_argument("--variant", choices=[v.value for v in Variant], default="l2")
    p.add_argument(
        "--lambda",
        dest="lam",
        type=_positive_float,
        help="anchor-to-anchor metric scale (default 1; 1e4 for --variant fc)",
    )
    p.add_argument("--tau1", type=_positive_float, default=1.0, help="source marginal relaxation (unbalanced)")
    p.add_argument("--tau2", type=_positive_float, default=1.0, help="target marginal relaxation (unbalanced)")
    p.add_argument("--theta", type=float, default=0.5, help="anchor-pair pruning threshold (wa)")
    p.add_argument("--max-iter", type=_positive_int, default=200, help="outer alternation cap (default 200)")
    p.add_argument("--tol", type=_positive_float, default=1e-6, help="plan marginal tolerance (default 1e-6)")
    p.add_argument("--outer-tol", type=_positive_float, default=1e-6, help="relative objective change to stop")
    p.add_argument("--seed", type=int, default=0, help="k-means seed (default 0)")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lot", description="Latent optimal transport through learned anchors.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one source/target pair")
    _add_lot_options(p)
    p.add_argument("--map", choices=["displacement", "barycentric"], default="displacement")
    p.add_argument("--out", required=True, type=Path, help="output JSON path (sidecars share its stem)")

    p = sub.add_parser("experiment", help="run a seeded experiment grid")
    p.add_argument("--config", type=Path, help="experiment configuration JSON")
    p.add_argument("--experiment", help="experiment name (overrides the config)")
    p.add_argument("--param", help="sweep parameter")
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--repetitions", type=_positive_int)
    p.add_argument("--methods", help="comma-separated methods")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output prefix (writes PREFIX.csv and PREFIX.json)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel grid cells (LOT_JOBS overrides)")

    p = sub.add_parser("tune-epsilon", help="smallest epsilon for which the solve converges")
    _add_lot_options(p, with_epsilon=False)
    p.add_argument("--eps-lo", type=_positive_float, default=1e-3, help="lower end of the bracket")
    p.add_argument("--eps-hi", type=_positive_float, default=1e3, help="upper end of the bracket")
    p.add_argument("--trials", type=_positive_int, default=1, help="seeds that must all converge per epsilon")
    p.add_argument("--out", type=Path, help="optional JSON report")
    return parser


def _lot_config(args, epsilon: float, d: int, seed: Optional[int] = None) -> LotConfig:
    variant = Variant(args.variant)
    lam = args.lam
    kwargs = {}
    if variant is Variant.FC_LIMIT:
        if lam is not None:
            kwargs["lambda_fc"] = lam
    elif lam is not None:
        kwargs["mz"] = MetricSpec.identity(d, lam)
    return LotConfig(
        kx=args.kx,
        ky=args.ky,
        epsilon=epsilon,
        epsilon_z=getattr(args, "epsilon_z", None),
        epsilon_y=getattr(args, "epsilon_y", None),
        variant=variant,
        solver=SolverConfig(epsilon=epsilon, tol=args.tol),
        theta=args.theta,
        tau1=args.tau1,
        tau2=args.tau2,
        outer_max_iter=args.max_iter,
        outer_tol=args.outer_tol,
        seed=args.seed if seed is None else seed,
        **kwargs,
    )


def _read_pair(args):
    X = read_csv(args.source)
    Y = read_csv(args.target)
    if X.dim != Y.dim:
        raise UsageError(f"source has dimension {X.dim} but target has dimension {Y.dim}")
    return X, Y


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    """Solve one pair and write the JSON result with its sidecars."""
    X, Y = _read_pair(args)
    cfg = _lot_config(args, args.epsilon, X.dim)
    sol = solve(X, Y, cfg)
    stem = args.out.with_suffix("")
    args.out.parent.mkdir(parents=True, exist_ok=True)

    if args.map == "barycentric":
        est = estimate_transport(sol, X, Y, "ot_barycentric")
    elif cfg.variant is Variant.WA:
        est = estimate_transport_wa(sol, X, Y, sol.diagnostics)
    elif cfg.variant is Variant.FC_LIMIT:
        est = estimate_transport(sol, X, Y, "fc_displacement")
    else:
        est = estimate_transport(sol, X, Y, "lot_displacement")
    est_path = stem.with_name(f"{stem.name}.estimate.csv")
    write_csv(est, est_path, header=True)

    P = compose_plan(sol).values
    doc = {
        "variant": cfg.variant.value,
        "converged": bool(sol.converged),
        "iterations": int(sol.iterations),
        "anchors": {"source": _matrix(sol.anchors_x.locations.T), "target": _matrix(sol.anchors_y.locations.T)},
        "anchor_masses": {"source": _vector(sol.anchors_x.masses), "target": _vector(sol.anchors_y.masses)},
        "plans": {
            name: _plan_entry(v, stem, name)
            for name, v in (("px", sol.plans.px), ("pz", sol.plans.pz), ("py", sol.plans.py))
        },
        "composed_plan": {
            "rows": int(P.shape[0]),
            "cols": int(P.shape[1]),
            "rank": transport_rank(P),
            "marginal_violations": {
                "rows": float(np.abs(P.sum(1) - sol.mu).sum()),
                "cols": float(np.abs(P.sum(0) - sol.nu).sum()),
            },
        },
        "objective_trace": _vector(sol.objective_trace),
        "cost_trace": _vector(sol.cost_trace),
        "objective": float(sol.objective),
        "latent_discrepancy": latent_discrepancy(sol),
        "estimate": {"path": est_path.name, "map": args.map},
        "diagnostics": {
            "reseeded_anchors": int(sol.diagnostics.get("reseeded_anchors", 0)),
            "plan_converged": bool(sol.diagnostics["plan_converged"][-1]),
            **({"wa_fallbacks": int(sol.diagnostics["wa_fallbacks"])} if "wa_fallbacks" in sol.diagnostics else {}),
        },
        "config": lot_config_to_dict(cfg),
    }
    if cfg.variant is not Variant.WA:
        doc["transport_cost"] = float(sol.transport_cost)
    if sol.transform is not None:
        doc["transform"] = _matrix(sol.transform.matrix)
    if "relaxed_marginals" in sol.diagnostics:
        z1, z2 = sol.diagnostics["relaxed_marginals"]
        doc["relaxed_marginals"] = {"source": _vector(z1), "target": _vector(z2)}
    _write_json(doc, args.out, "solve")
    if not sol.converged:
        print(f"warning: solve did not converge after {sol.iterations} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    doc = {}
    if args.config is not None:
        try:
            doc = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    if args.experiment is not None:
        doc["experiment"] = args.experiment
    sweep = dict(doc.get("sweep", {}))
    if args.param is not None:
        sweep["param"] = args.param
    if args.values is not None:
        try:
            sweep["values"] = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"--values: cannot parse {args.values!r}") from None
    if sweep:
        doc["sweep"] = sweep
    if args.repetitions is not None:
        doc["repetitions"] = args.repetitions
    if args.methods is not None:
        doc["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["output"] = str(args.out)
    if "experiment" not in doc:
        raise UsageError("no experiment given (use --experiment or --config)")
    try:
        jsonschema.validate(doc, _schema("experiment_config"), cls=jsonschema.Draft202012Validator)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"invalid experiment configuration: {exc.message}") from None
    if doc.get("output") is None:
        raise UsageError("no output prefix given (use --out or the config's output field)")
    return ExperimentConfig.from_dict(doc)


def cmd_experiment(args) -> int:
    """Run a grid and write ``PREFIX.csv`` (records) and ``PREFIX.json`` (summary)."""
    cfg = _experiment_config(args)
    records = run_experiment(cfg, jobs=args.jobs)
    prefix = Path(cfg.output)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_name(prefix.name + ".csv")
    csv_path.write_text(records_csv(records))
    summary = summarize(cfg, records)
    summary["csv"] = csv_path.name
    _write_json(summary, prefix.with_name(prefix.name + ".json"), "experiment_summary")
    failed = sum(r.error is not None for r in records)
    print(f"{len(records)} records written to {csv_path}" + (f" ({failed} failed)" if failed else ""))
    return EXIT_OK


def _converges(args, X, Y, eps: float) -> bool:
    for t in range(args.trials):
        cfg = _lot_config(args, eps, X.dim, seed=args.seed + t)
        try:
            sol = solve(X, Y, cfg)
        except _SOLVE_FAILURES:
            return False
        if not sol.converged:
            return False
    return True


def tune_epsilon(args, X, Y, ratio: float = 1.1):
    """Geometric bisection for the smallest converging epsilon.

    Returns ``(epsilon or None, evaluations)``; None when ``eps_hi`` itself
    does not converge.
    """
    lo, hi = args.eps_lo, args.eps_hi
    evals = []

    def check(eps):
        ok = _converges(args, X, Y, eps)
        evals.append({"epsilon": eps, "converged": ok})
        return ok

    if not check(hi):
        return None, evals
    if check(lo):
        return lo, evals
    while hi / lo > ratio:
        mid = math.sqrt(lo * hi)
        if check(mid):
            hi = mid
        else:
            lo = mid
    return hi, evals


def cmd_tune_epsilon(args) -> int:
    """Print the smallest epsilon (within a factor 1.1) for which the solve converges."""
    if not args.eps_lo < args.eps_hi:
        raise UsageError(f"inverted bracket: eps-lo {args.eps_lo} must be below eps-hi {args.eps_hi}")
    X, Y = _read_pair(args)
    eps, evals = tune_epsilon(args, X, Y)
    if eps is None:
        print(f"no convergence at the upper end of the bracket (epsilon = {args.eps_hi})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    print(repr(eps))
    if args.out is not None:
        doc = {"epsilon": eps, "bracket": [args.eps_lo, args.eps_hi], "trials": args.trials, "evaluations": evals}
        _write_json(doc, args.out, "tune")
    return EXIT_OK


_COMMANDS = {"solve": cmd_solve, "experiment": cmd_experiment, "tune-epsilon": cmd_tune_epsilon}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, CsvFormatError, OSError, ValueError, *_SOLVE_FAILURES) as exc:
        print(f"lot {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
