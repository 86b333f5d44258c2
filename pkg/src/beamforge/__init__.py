"""beamforge: beam-structure recovery and density alignment for rotating
LiDAR point clouds.

The package covers the data side of adapting 3D perception across sensors
with different beam counts: recovering per-point beam labels by clustering
zenith angles, generating pseudo low-beam scans whose density matches a
target sensor, planning progressive teacher-student transfer stages, the
ROI-sampled BEV feature mimic loss with analytic gradients, range-image
conversions, and a synthetic scan generator used as the test oracle.
"""

from .beam_model import (
    BeamModel,
    ClusterConfig,
    SensorStats,
    assign_uniform_baseline,
    cluster_beams,
    load_beam_model_centers,
    model_from_labeled_cloud,
    save_beam_model,
    sensor_stats,
)
from .distill import (
    BevBox,
    BevFeatureMap,
    MimicLossResult,
    Roi,
    RoiSet,
    RoiTag,
    generate_rois,
    load_feature_map,
    load_roi_set,
    mimic_loss,
    pool_roi,
    save_feature_map,
    save_roi_set,
    total_loss,
)
from .errors import (
    BadMagicError,
    BeamforgeError,
    DegenerateAxisError,
    EmptyIntersectionError,
    HookFailureError,
    InsufficientPointsError,
    InvalidVfovError,
    MissingBeamLabelsError,
    ModelCloudMismatchError,
    NonFiniteInputError,
    ProfileError,
    ScanFormatError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedLayoutError,
    UpsampleRequestedError,
)
from .geometry import (
    Point3,
    PointCloud,
    SphericalBatch,
    SphericalCoord,
    batch_to_spherical,
    spherical_to_cartesian,
    to_spherical,
)
from .io_formats import (
    ReadReport,
    ScanFileFormat,
    WriteReport,
    detect_format,
    read_scan,
    read_scan_report,
    write_scan,
)
from .pipeline import (
    ProgressiveSchedule,
    Stage,
    StageManifest,
    materialize_stage,
    plan_schedule,
    run_schedule,
)
from .range_image import (
    RangeImage,
    load_range_image,
    project,
    save_range_image,
    take_rows,
    unproject,
    upsample_bilinear,
)
from .resampler import (
    ResamplePlan,
    SensorProfile,
    apply_resample,
    equivalent_beams,
    load_profile,
    plan_for_beam_target,
    plan_resample,
    resolve_profile,
    save_profile,
)
from .simulator import (
    Scene,
    SceneBox,
    SimConfig,
    SimulatedScan,
    load_sim_config,
    save_sim_config,
    simulate_scan,
)

__version__ = "0.1.0"
