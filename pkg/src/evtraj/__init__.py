"""Dense continuous-time pixel trajectories from event streams.

The pipeline turns a sorted event stream into a multi-view voxel
representation, correlates hand-crafted per-cell features between a
reference view and the later views, and searches per-pixel Bezier control
points that line the correlation taps up along each pixel's curve. A
companion generator renders synthetic sequences (frames, events, dense
trajectory ground truth) for testing, and metrics score trajectory
predictions against that ground truth.
"""

from .bezier import (
    BezierField,
    FlowMap,
    apply_update,
    bernstein_weights,
    bilinear_upsample_weights,
    evaluate_field,
    fit_bezier_to_samples,
    upsample_convex,
)
from .correlation import (
    CorrelationVolumePyramid,
    FeatureMap,
    VolumeMemoryError,
    build_correlation_volume,
    build_pyramid,
    estimate_volume_bytes,
    extract_features,
    lookup,
)
from .estimator import (
    EstimatorConfig,
    ObjectiveReport,
    estimate_flow,
    refine_step,
    trajectory_objective,
)
from .events import (
    EventStream,
    GridMemoryError,
    View,
    ViewSet,
    VoxelGrid,
    build_base_voxel_grid,
    build_views,
    extract_context_grid,
    extract_correlation_views,
    normalize_event_time,
)
from .fileio import (
    colorize_flow,
    read_bezier,
    read_events,
    read_flow,
    write_bezier,
    write_events,
    write_flow,
)
from .metrics import (
    MetricReport,
    angular_error,
    compute_report,
    epe,
    n_pixel_error,
    tepe_tae,
    trajectory_loss,
)
from .multiflow import (
    GeneratorConfig,
    MotionParams,
    PinholeParams,
    SceneSpec,
    SimilarityTrajectory,
    Sprite,
    compose_frame,
    generate_sequence,
    pinhole_trajectory,
    render_gt_trajectories,
    sample_control_points,
    simulate_events,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
