"""Alternating solvers for latent optimal transport and its variants.

Every solver follows the same outer loop: relocate anchors with the plans
held fixed, rebuild the three Gibbs kernels, then re-solve the plans with
the anchors held fixed.  Variants differ in how the anchor-to-anchor cost
is built (Mahalanobis, Wasserstein between conditionals, after an
orthogonal transform) and in the plan step (balanced or KL-relaxed).
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .anchors import (
    AnchorSet,
    StiefelTransform,
    kmeans_init,
    procrustes_update,
    solve_anchor_system,
)
from .bregman import (
    MASS_CLAMP,
    PlanTriple,
    ScalingState,
    UnreachableError,
    update_plan,
    update_plan_unbalanced,
)
from .measures import (
    DiscreteMeasure,
    MetricSpec,
    PointCloud,
    gibbs_kernel,
    mahalanobis_cost,
    wasserstein_anchor_cost,
)
from .sinkhorn import SolverConfig

__all__ = [
    "Variant",
    "LotConfig",
    "LotSolution",
    "lot_solve",
    "lot_wa_solve",
    "lot_unbalanced_solve",
    "lot_transform_solve",
    "hub_barycenter_solve",
    "solve",
]

logger = logging.getLogger(__name__)

# anchors whose mass falls below this fraction of mass / k are re-seeded
COLLAPSE = 1e3 * MASS_CLAMP
# anchors whose cost columns agree within this fraction of epsilon are duplicates
DUPLICATE = 0.05
# plain alternations run from a re-seeded state before judging it
LOOKAHEAD = 20
# warm-start scalings beyond exp(+-WARM_RANGE) are discarded
WARM_RANGE = 300.0


class Variant(str, enum.Enum):
    L2 = "l2"
    WA = "wa"
    UNBALANCED = "unbalanced"
    TRANSFORM = "transform"
    FC_LIMIT = "fc"


@dataclass
class LotConfig:
    """Inputs of the alternating solver.

    ``epsilon`` regularises the source-side plan; ``epsilon_z`` and
    ``epsilon_y`` default to it.  Metrics default to the identity.
    ``lambda_fc`` is the anchor-to-anchor metric scale used by the
    ``FC_LIMIT`` variant, which also forces ``kx == ky``.
    """

    kx: int
    ky: int
    mx: Optional[MetricSpec] = None
    mz: Optional[MetricSpec] = None
    my: Optional[MetricSpec] = None
    epsilon: float = 10.0
    epsilon_z: Optional[float] = None
    epsilon_y: Optional[float] = None
    variant: Variant = Variant.L2
    solver: SolverConfig = field(default_factory=SolverConfig)
    theta: float = 0.5
    inner_epsilon: Optional[float] = None
    tau1: float = 1.0
    tau2: float = 1.0
    unbalanced_anchor_updates: bool = True
    outer_max_iter: int = 200
    outer_tol: float = 1e-6
    lambda_fc: float = 1e4
    seed: int = 0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.kx < 1 or self.ky < 1:
            raise ValueError("kx and ky must be positive")
        for name in ("epsilon", "epsilon_z", "epsilon_y"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.variant is Variant.UNBALANCED and not (self.tau1 > 0 and self.tau2 > 0):
            raise ValueError("tau1 and tau2 must be positive")
        if self.variant is Variant.FC_LIMIT and self.kx != self.ky:
            raise ValueError("FC limit requires kx = ky")
        if self.outer_max_iter < 1 or not self.outer_tol > 0:
            raise ValueError("outer_max_iter and outer_tol must be positive")
        if not self.lambda_fc > 0:
            raise ValueError("lambda_fc must be positive")

    @property
    def epsilons(self):
        """``(eps_x, eps_z, eps_y)``."""
        ez = self.epsilon if self.epsilon_z is None else self.epsilon_z
        ey = self.epsilon if self.epsilon_y is None else self.epsilon_y
        return self.epsilon, ez, ey

    def metrics(self, d: int):
        mx = self.mx or MetricSpec.identity(d)
        mz = self.mz or MetricSpec.identity(d)
        my = self.my or MetricSpec.identity(d)
        if self.variant is Variant.FC_LIMIT:
            mz = MetricSpec(mz.matrix, self.lambda_fc)
        return mx, mz, my


@dataclass
class LotSolution:
    """Result of an alternating solve.

    ``objective_trace`` holds the entropic objective after every plan step
    and ``cost_trace`` the unregularised transport cost after every anchor
    step.  ``costs`` are the (unshifted) cost matrices of the final plans.
    """

    plans: PlanTriple
    anchors_x: AnchorSet
    anchors_y: AnchorSet
    mu: np.ndarray
    nu: np.ndarray
    costs: tuple
    epsilons: tuple
    objective_trace: List[float]
    cost_trace: List[float]
    converged: bool
    iterations: int
    transform: Optional[StiefelTransform] = None
    inner_plans: Optional[dict] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def transport_cost(self) -> float:
        """``<Cx, Px> + <Cz, Pz> + <Cy, Py>``."""
        return float(sum(_dot(C, P) for C, P in zip(self.costs, self._plans())))

    def _plans(self):
        return self.plans.px, self.plans.pz, self.plans.py


def _dot(C, P) -> float:
    mask = P > 0
    return float(np.sum(C[mask] * P[mask]))


def _xlogx(P) -> float:
    P = P[P > 0]
    return float(np.sum(P * np.log(P)))


def _gkl(z, w) -> float:
    """Generalised KL ``sum z log(z/w) - z + w``."""
    mask = z > 0
    if np.any(w[mask] <= 0):
        return float("inf")
    return float(np.sum(z[mask] * np.log(z[mask] / w[mask])) - z.sum() + w.sum())


def entropic_objective(plans: PlanTriple, costs, epsilons, unbalanced=None) -> float:
    """``sum_i <C_i, P_i> + eps_i sum P_i log P_i``.

    With ``unbalanced = (mu, nu, tau1, tau2)`` the mass terms
    ``-eps_i sum P_i`` and the relaxation penalties ``tau KL(z|mu)`` are added.
    """
    total = 0.0
    for C, P, e in zip(costs, (plans.px, plans.pz, plans.py), epsilons):
        total += _dot(C, P) + e * _xlogx(P)
        if unbalanced is not None:
            total -= e * P.sum()
    if unbalanced is not None:
        mu, nu, t1, t2 = unbalanced
        total += t1 * _gkl(plans.px.sum(1), mu) + t2 * _gkl(plans.py.sum(0), nu)
    return total


def _weights(cloud: PointCloud, w) -> np.ndarray:
    if w is None:
        return np.full(cloud.size, 1.0 / cloud.size)
    if isinstance(w, DiscreteMeasure):
        w = w.weights
    w = np.asarray(w, dtype=float).ravel()
    if w.shape[0] != cloud.size or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("invalid measure weights")
    return w


def _as_cloud(a) -> PointCloud:
    if isinstance(a, PointCloud):
        return a
    if isinstance(a, DiscreteMeasure):
        return a.support
    return PointCloud(np.atleast_2d(np.asarray(a, dtype=float)))


class _Target:
    """Per-target state of the alternation."""

    def __init__(self, Y: PointCloud, nu: np.ndarray, zy: np.ndarray):
        self.Y = Y
        self.nu = nu
        self.zy = zy
        self.plans: Optional[PlanTriple] = None
        self.state = None
        self.costs = None
        self.inner = None
        self.relaxed = None
        self.shift = None


def _finite_min(C, axis):
    with np.errstate(invalid="ignore"):
        m = np.min(np.where(np.isfinite(C), C, np.inf), axis=axis)
    return np.where(np.isfinite(m), m, 0.0)


class _Shifts:
    """Cost shifts that leave the balanced plan step's optimum unchanged.

    Row shifts of ``Cx``, column shifts of ``Cy`` and moving a ``Cz`` row
    (column) shift onto the matching ``Cx`` column (``Cy`` row) all change
    the objective by a constant on the feasible set.  Every kernel row and
    column then keeps an entry equal to one unless its anchor is
    negligible, which keeps the linear-domain iteration away from underflow.
    ``log_factors`` are the diagonal log-scalings with
    ``K_shifted = diag(exp(a)) K diag(exp(b))`` for the three kernels.
    """

    def __init__(self, costs, log_factors):
        self.costs = costs
        self.log_factors = log_factors

    def rebase(self, state: ScalingState, old: Optional["_Shifts"]) -> ScalingState:
        """Express scalings computed under ``old`` shifts under these ones.

        Returns None (cold start) when the result leaves the safe range.
        """
        if old is None:
            return state
        vecs = []
        for v, a, b in zip(state._vectors(), old.log_factors, self.log_factors):
            if v.shape != a.shape or a.shape != b.shape:
                return None
            with np.errstate(divide="ignore"):
                lv = np.log(v) + a - b
            if not np.all(np.abs(lv) < WARM_RANGE):
                return None
            vecs.append(np.exp(lv))
        return ScalingState(*vecs)


def _balanced_shifts(Cx, Cz, Cy, ex, ez, ey) -> _Shifts:
    r = _finite_min(Cz, 1)
    Cz = Cz - r[:, None]
    c = _finite_min(Cz, 0)
    Cz = Cz - c[None, :]
    Cx = Cx + r[None, :]
    Cy = Cy + c[:, None]
    a = Cx.min(axis=1)
    b = Cy.min(axis=0)
    costs = (Cx - a[:, None], Cz, Cy - b[None, :])
    factors = (a / ex, -r / ex, r / ez, c / ez, -c / ey, b / ey)
    return _Shifts(costs, factors)


def _run(X, Ys, cfg: LotConfig, mu=None, nus=None, jobs: int = 1):
    X = _as_cloud(X)
    Ys = [_as_cloud(Y) for Y in Ys]
    d = X.dim
    if any(Y.dim != d for Y in Ys):
        raise ValueError("source and target dimensions differ")
    if cfg.kx > X.size:
        raise ValueError(f"kx = {cfg.kx} exceeds the number of source points ({X.size})")
    for Y in Ys:
        if cfg.ky > Y.size:
            raise ValueError(f"ky = {cfg.ky} exceeds the number of target points ({Y.size})")
    variant = cfg.variant
    if len(Ys) > 1 and variant not in (Variant.L2, Variant.FC_LIMIT):
        raise ValueError(f"multiple targets are not supported for variant {variant.value}")
    mu = _weights(X, mu)
    nus = [_weights(Y, nus[t] if nus is not None else None) for t, Y in enumerate(Ys)]
    balanced = variant is not Variant.UNBALANCED
    if balanced:
        for nu in nus:
            if abs(mu.sum() - nu.sum()) > 1e-12 * max(1.0, mu.sum()):
                raise ValueError(f"source and target masses differ: {mu.sum()} vs {nu.sum()}")

    mx, mz, my = cfg.metrics(d)
    ex, ez, ey = cfg.epsilons
    if variant is Variant.TRANSFORM and not mz.is_isotropic:
        raise ValueError("the transform variant requires an isotropic anchor metric")
    solver = cfg.solver
    # WA anchors only see the outer costs
    mz_anchor = MetricSpec(np.zeros((d, d))) if variant is Variant.WA else mz

    if variant is Variant.FC_LIMIT:
        # shared initial anchors so that Kz does not underflow at large lambda
        pooled = PointCloud(np.hstack([X.points] + [Y.points for Y in Ys]))
        w = np.concatenate([mu] + nus)
        z0 = kmeans_init(pooled, cfg.kx, seed=cfg.seed, weights=w).locations
        zx = z0.copy()
        targets = [_Target(Y, nu, z0.copy()) for Y, nu in zip(Ys, nus)]
    else:
        zx = kmeans_init(X, cfg.kx, seed=cfg.seed, weights=mu).locations
        targets = [
            _Target(Y, nu, kmeans_init(Y, cfg.ky, seed=cfg.seed, weights=nu).locations) for Y, nu in zip(Ys, nus)
        ]
    O = np.eye(d) if variant is Variant.TRANSFORM else None

    diagnostics = {"reseeded_anchors": 0, "plan_iterations": [], "plan_converged": [], "solver_tol": solver.tol}

    def plan_step(t: _Target):
        zxt = zx if O is None else O @ zx
        Cx = mahalanobis_cost(X.points, zx, mx)
        Cy = mahalanobis_cost(t.zy, t.Y.points, my)
        if variant is Variant.WA and t.plans is not None:
            Cz, t.inner = wasserstein_anchor_cost(
                t.plans.px, t.plans.py, X.points, t.Y.points, t.plans.pz, cfg.theta, cfg.inner_epsilon
            )
            empty = np.flatnonzero(~np.isfinite(Cz).any(axis=1))
            if empty.size:
                raise UnreachableError(f"source anchor {int(empty[0])} has no admissible target anchor")
        else:
            Cz = mahalanobis_cost(zxt, t.zy, mz)
        t.costs = (Cx, Cz, Cy)
        if balanced:
            shift = _balanced_shifts(Cx, Cz, Cy, ex, ez, ey)
            Kx, Kz, Ky = (gibbs_kernel(C, e) for C, e in zip(shift.costs, (ex, ez, ey)))
            warm = None if solver.cold_start or t.state is None else shift.rebase(t.state, t.shift)
            t.shift = shift
            t.plans, t.state = update_plan(Kx, Kz, Ky, mu, t.nu, solver, warm=warm)
        else:
            Kx, Kz, Ky = gibbs_kernel(Cx, ex), gibbs_kernel(Cz, ez), gibbs_kernel(Cy, ey)
            warm = None if solver.cold_start else t.state
            t.plans, t.relaxed = update_plan_unbalanced(
                Kx, Kz, Ky, mu, t.nu, cfg.tau1, cfg.tau2, ex, solver, warm=warm
            )
            t.state = t.plans.state

    def objective() -> float:
        extra = None
        total = 0.0
        for t in targets:
            if not balanced:
                extra = (mu, t.nu, cfg.tau1, cfg.tau2)
            total += entropic_objective(t.plans, t.costs, (ex, ez, ey), extra)
        return total

    def transport_cost() -> float:
        zxt = zx if O is None else O @ zx
        total = 0.0
        for t in targets:
            Cx = mahalanobis_cost(X.points, zx, mx)
            Cz = t.costs[1] if variant is Variant.WA else mahalanobis_cost(zxt, t.zy, mz)
            Cy = mahalanobis_cost(t.zy, t.Y.points, my)
            total += sum(_dot(C, P) for C, P in zip((Cx, Cz, Cy), (t.plans.px, t.plans.pz, t.plans.py)))
        return total

    def run_plans():
        if jobs > 1 and len(targets) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(plan_step, targets))
        else:
            for t in targets:
                plan_step(t)
        diagnostics["plan_iterations"].append([t.plans.iterations for t in targets])
        diagnostics["plan_converged"].append(all(t.plans.converged for t in targets))

    def refresh_transform():
        nonlocal O
        t = targets[0]
        O = procrustes_update(zx, t.zy, t.plans.pz).matrix
        t.costs = _final_costs(X.points, zx, t, O, mx, mz, my)

    run_plans()
    if variant is Variant.WA:
        # the step above used the Mahalanobis anchor cost to seed the
        # coupling; start from the first Wasserstein-cost plans
        run_plans()
    if O is not None:
        refresh_transform()

    fields = ("zy", "plans", "state", "costs", "inner", "relaxed", "shift")

    def snapshot():
        return zx, [{f: getattr(t, f) for f in fields} for t in targets]

    def restore(snap):
        nonlocal zx
        zx, per = snap
        for t, saved in zip(targets, per):
            for f, v in saved.items():
                setattr(t, f, v)

    def anchor_step():
        nonlocal zx
        if O is None:
            zx, zys = solve_anchor_system(
                X.points,
                [t.Y.points for t in targets],
                [t.plans.px for t in targets],
                [t.plans.pz for t in targets],
                [t.plans.py for t in targets],
                mx,
                mz_anchor,
                my,
            )
        else:
            mxo = mx if mx.is_isotropic else MetricSpec(O @ mx.matrix @ O.T, mx.scale)
            t = targets[0]
            zxo, zys = solve_anchor_system(
                O @ X.points, [t.Y.points], [t.plans.px], [t.plans.pz], [t.plans.py], mxo, mz, my
            )
            zx = O.T @ zxo
        for t, zy in zip(targets, zys):
            t.zy = zy

    def apply(proposal):
        nonlocal zx
        zx = proposal[0]
        for t, zy in zip(targets, proposal[1]):
            t.zy, t.state = zy, None

    # Degenerate anchors are re-seeded.  Where the objective is a descent
    # quantity (balanced Mahalanobis variants) a re-seed is only kept if a
    # short plain alternation from it ends below the plain step.
    guarded = variant in (Variant.L2, Variant.FC_LIMIT)
    trials_left = cfg.kx + cfg.ky

    objective_trace = [objective()]
    cost_trace: List[float] = []
    converged = False
    it = 0
    for it in range(1, cfg.outer_max_iter + 1):
        # (a) anchors
        proposal = None
        if balanced or cfg.unbalanced_anchor_updates:
            anchor_step()
            cost_trace.append(transport_cost())
            proposal = _repairs(zx, X.points, mu, targets, mx, my, ex, ey, guarded and trials_left > 0)
        # (b) kernels and (c) plans
        if proposal is not None and not guarded:
            apply(proposal)
            diagnostics["reseeded_anchors"] += proposal[2]
            run_plans()
        elif proposal is not None and trials_left > 0:
            trials_left -= 1
            before = snapshot()
            run_plans()
            plain_f, plain = objective(), snapshot()
            n_diag = len(diagnostics["plan_iterations"])
            restore(before)
            apply(proposal)
            run_plans()
            for _ in range(LOOKAHEAD):
                anchor_step()
                run_plans()
            if objective() < plain_f:
                diagnostics["reseeded_anchors"] += proposal[2]
            else:
                restore(plain)
                del diagnostics["plan_iterations"][n_diag:], diagnostics["plan_converged"][n_diag:]
        else:
            run_plans()
        # orthogonal transform last, so the returned one is optimal for the returned plans
        if O is not None:
            refresh_transform()
        f = objective()
        prev = objective_trace[-1]
        objective_trace.append(f)
        if abs(prev - f) <= cfg.outer_tol * max(abs(f), 1e-300):
            converged = True
            break

    plans_ok = diagnostics["plan_converged"][-1]
    if not converged:
        logger.warning("outer loop stopped after %d iterations without meeting outer_tol", cfg.outer_max_iter)

    def solution(t: _Target) -> LotSolution:
        diag = dict(diagnostics)
        if t.relaxed is not None:
            diag["relaxed_marginals"] = t.relaxed
        return LotSolution(
            plans=t.plans,
            anchors_x=AnchorSet(zx, t.plans.u_z),
            anchors_y=AnchorSet(t.zy, t.plans.v_z),
            mu=mu,
            nu=t.nu,
            costs=t.costs,
            epsilons=(ex, ez, ey),
            objective_trace=objective_trace,
            cost_trace=cost_trace,
            converged=bool(converged and plans_ok),
            iterations=it,
            transform=StiefelTransform(O) if O is not None else None,
            inner_plans=t.inner if variant is Variant.WA else None,
            diagnostics=diag,
        )

    return zx, [solution(t) for t in targets]


def _final_costs(X, zx, t, O, mx, mz, my):
    # costs after the last transform update
    return (
        mahalanobis_cost(X, zx, mx),
        mahalanobis_cost(O @ zx, t.zy, mz),
        mahalanobis_cost(t.zy, t.Y.points, my),
    )


def _worst_served(P, w, C, coupling) -> np.ndarray:
    """Data indices ordered by decreasing expected transport cost to their anchors."""
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.where(w > 0, np.sum(coupling * C, axis=1) / w, -np.inf)
    return np.argsort(-resid, kind="stable")


def _degenerate(C, masses, total, eps) -> list:
    """Anchors (columns of ``C``) with collapsed mass or duplicating an earlier anchor."""
    k = C.shape[1]
    bad = [m for m in range(k) if masses[m] < COLLAPSE * total / k]
    for b in range(k):
        if b in bad:
            continue
        for a in range(b):
            if a not in bad and np.max(np.abs(C[:, a] - C[:, b])) < DUPLICATE * eps:
                bad.append(b)
                break
    return sorted(bad)


def _repairs(zx, X, mu, targets, mx, my, ex, ey, split_duplicates: bool):
    """Propose new anchors where some have collapsed.

    A source or target anchor whose mass collapsed (or, when
    ``split_duplicates``, whose cost column is indistinguishable from an
    earlier anchor's at the entropic scale) moves to the data point with
    the largest expected transport cost.  Returns ``(zx, [zy...], count)``
    or None when nothing is degenerate.
    """
    count = 0
    new_zx = zx
    Cx = mahalanobis_cost(X, zx, mx)
    u = np.sum([t.plans.u_z for t in targets], axis=0)
    bad = _degenerate(Cx, u, len(targets) * float(mu.sum()), ex if split_duplicates else 0.0)
    if bad:
        coupling = np.sum([t.plans.px for t in targets], axis=0)
        order = _worst_served(X, mu, Cx, coupling)
        new_zx = zx.copy()
        for j, m in enumerate(bad):
            new_zx[:, m] = X[:, order[j % order.size]]
        count += len(bad)
    zys = []
    for t in targets:
        Cy = mahalanobis_cost(t.Y.points, t.zy, my)
        bad = _degenerate(Cy, t.plans.v_z, float(t.nu.sum()), ey if split_duplicates else 0.0)
        zy = t.zy
        if bad:
            order = _worst_served(t.Y.points, t.nu, Cy, t.plans.py.T)
            zy = zy.copy()
            for j, m in enumerate(bad):
                zy[:, m] = t.Y.points[:, order[j % order.size]]
            count += len(bad)
        zys.append(zy)
    if count:
        logger.info("re-seeding %d degenerate anchor(s)", count)
        return new_zx, zys, count
    return None


# ---------------------------------------------------------------------------
# public solvers
# ---------------------------------------------------------------------------


def _check_variant(cfg: LotConfig, allowed):
    if cfg.variant not in allowed:
        raise ValueError(f"variant {cfg.variant.value} is not handled by this solver")


def lot_solve(X, Y, cfg: LotConfig, mu=None, nu=None) -> LotSolution:
    """Latent optimal transport with Mahalanobis costs.

    Anchors start from k-means; each outer iteration relocates the anchors
    in closed form, rebuilds the kernels and re-solves the three plans by
    iterative Bregman projections.  Stops when the relative change of the
    entropic objective drops below ``cfg.outer_tol``.

    Parameters
    ----------
    X, Y : PointCloud
        Source and target points (columns).
    cfg : LotConfig
        ``variant`` must be ``L2`` or ``FC_LIMIT``.
    mu, nu : array-like, optional
        Point weights, uniform by default.

    Returns
    -------
    LotSolution
    """
    _check_variant(cfg, (Variant.L2, Variant.FC_LIMIT))
    _, (sol,) = _run(X, [Y], cfg, mu, [nu] if nu is not None else None)
    return sol


def lot_wa_solve(X, Y, cfg: LotConfig, mu=None, nu=None) -> LotSolution:
    """Latent transport whose anchor-to-anchor cost is a Wasserstein distance.

    The cost between anchors ``m`` and ``n`` is the entropic 2-Wasserstein
    distance between the data conditionals ``Px(.|m)`` and ``Py(.|n)``;
    only pairs coupled above ``cfg.theta`` times their row maximum are
    evaluated, the others are forbidden.  The first plan step uses the
    Mahalanobis anchor cost.  ``inner_plans`` holds the conditional plans.
    """
    _check_variant(cfg, (Variant.WA,))
    _, (sol,) = _run(X, [Y], cfg, mu, [nu] if nu is not None else None)
    return sol


def lot_unbalanced_solve(X, Y, cfg: LotConfig, mu=None, nu=None) -> LotSolution:
    """Latent transport with KL-relaxed outer marginals.

    The relaxed marginals ``(z1, z2)`` are in
    ``solution.diagnostics["relaxed_marginals"]``.  Anchors are relocated
    between plan steps unless ``cfg.unbalanced_anchor_updates`` is off.
    """
    _check_variant(cfg, (Variant.UNBALANCED,))
    _, (sol,) = _run(X, [Y], cfg, mu, [nu] if nu is not None else None)
    return sol


def lot_transform_solve(X, Y, cfg: LotConfig, mu=None, nu=None) -> LotSolution:
    """Latent transport with an orthogonal map applied to the source anchors.

    The anchor-to-anchor cost is ``|O zx_m - zy_n|^2``; ``O`` is refreshed
    by Procrustes after every plan step and returned as ``solution.transform``.
    """
    _check_variant(cfg, (Variant.TRANSFORM,))
    _, (sol,) = _run(X, [Y], cfg, mu, [nu] if nu is not None else None)
    return sol


def hub_barycenter_solve(X, targets: Sequence, cfg: LotConfig, mu=None, nus=None, jobs: int = 1):
    """Shared source anchors minimising the summed latent cost to several targets.

    Plan and target-anchor updates are independent per target and may run
    on ``jobs`` threads; the shared anchors solve the stacked first-order
    conditions.  With a single target this is exactly :func:`lot_solve`.

    Returns
    -------
    hub : AnchorSet
        Shared source anchors, with masses averaged over targets.
    solutions : list of LotSolution
        One per target; their ``objective_trace`` is the summed objective.
    """
    if len(targets) < 1:
        raise ValueError("at least one target is required")
    _check_variant(cfg, (Variant.L2, Variant.FC_LIMIT))
    zx, sols = _run(X, list(targets), cfg, mu, nus, jobs=jobs)
    masses = np.mean([s.plans.u_z for s in sols], axis=0)
    return AnchorSet(zx, masses), sols


def solve(X, Y, cfg: LotConfig, mu=None, nu=None) -> LotSolution:
    """Dispatch on ``cfg.variant``."""
    fn = {
        Variant.L2: lot_solve,
        Variant.FC_LIMIT: lot_solve,
        Variant.WA: lot_wa_solve,
        Variant.UNBALANCED: lot_unbalanced_solve,
        Variant.TRANSFORM: lot_transform_solve,
    }[cfg.variant]
    return fn(X, Y, cfg, mu, nu)
