"""Latent optimal transport: entropic transport factorised through learned anchors."""

from .measures import (
    CsvFormatError,
    DiscreteMeasure,
    GibbsKernel,
    MetricSpec,
    PointCloud,
    build_measure,
    gibbs_kernel,
    mahalanobis_cost,
    read_csv,
    sq_euclidean,
    wasserstein_anchor_cost,
    write_csv,
)
from .sinkhorn import SolverConfig, TransportPlan, kl_divergence, ot_cost, sinkhorn
from .bregman import PlanTriple, ScalingState, UnreachableError, update_plan, update_plan_unbalanced
from .anchors import AnchorSet, StiefelTransform, kmeans_init, procrustes_update, update_anchors
from .lot import (
    LotConfig,
    LotSolution,
    Variant,
    hub_barycenter_solve,
    lot_solve,
    lot_transform_solve,
    lot_unbalanced_solve,
    lot_wa_solve,
)

__version__ = "0.1.0"
