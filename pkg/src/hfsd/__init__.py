"""hfsd: real-time LiDAR free-space detection.

Point clouds are projected into a staggered spherical image, per-pixel
surface normals are estimated with six small gradient convolutions, and
drivable ground is extracted from the vertical component of the vehicle-frame
normals plus a statistical height band. Includes KITTI-format I/O, an
evaluation harness, a benchmark, and a deterministic synthetic-scene
generator for property testing.
"""

from .io_kitti import (
    DEFAULT_FREESPACE_LABEL_IDS,
    LabelArray,
    PointClass,
    PointCloud,
    RunConfig,
    export_ply,
    load_config,
    prediction_to_label_words,
    read_labels,
    read_point_cloud,
    read_prediction,
    write_labels,
    write_point_cloud,
    write_prediction,
)
from .projection import (
    ProjectionModel,
    StaggeredImage,
    build_staggered_image,
    cart_to_spherical,
    image_channel,
    project,
)
from .normals import (
    GradientKernel,
    NormalImage,
    convolve_channel,
    estimate_normals,
    gradient_images,
    normals_from_gradients,
    oracle_normals,
    orient_normals,
)
from .freespace import (
    RigidTransform,
    SegmentationResult,
    height_change_feature,
    rotate_normals,
    segment,
    select_verticals,
    statistical_ground_filter,
    to_vehicle_frame,
)
from .synth import Box, GroundTruth, SceneSpec, generate, ramp_normal, write_scene
from .evaluation import (
    ConfusionCounts,
    EvalReport,
    TimingStats,
    aggregate_gt,
    benchmark,
    confusion,
    evaluate_dataset,
    miou,
)

__version__ = "0.1.0"
