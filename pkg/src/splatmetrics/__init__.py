"""Numerical toolkit for 3D Gaussian splat models: inter-model robustness
via mixture transport distances, depth/density-guided dropout planning,
and distance-aware fidelity losses."""

__version__ = "0.1.0"

from .bures import GaussianComponent, w2_exact, w2_taylor, w2_taylor_sym
from .dafe import (
    FarMask,
    LossBreakdown,
    LossWeights,
    dafe_loss,
    dssim,
    far_mask,
    far_mask_literal,
    total_loss,
)
from .ddrop import (
    DropConfig,
    DropPlan,
    drop_scores,
    layered_probabilities,
    plan_dropout,
    sample_mask,
    schedule_rate,
)
from .geometry import (
    DepthStats,
    camera_depths,
    covariance_from_primitive,
    knn_density,
    min_max_normalize,
)
from .imr import (
    MixtureModel,
    RobustnessReport,
    SamplingConfig,
    abstract_mixture,
    imr_from_clouds,
    imr_from_pairwise,
    imr_score,
    mixture_distance,
)
from .splat_io import (
    CameraDescriptor,
    DepthMap,
    GaussianCloud,
    ImagePlane,
    load_depth_map,
    load_image,
    parse_camera_config,
    parse_splat_ply,
    write_splat_ply,
)
from .transport import TransportPlan, exact_ot, sinkhorn

__all__ = [name for name in dir() if not name.startswith("_")]
