"""camperturb: camera extrinsic perturbation toolkit for monocular 3D detection.

Simulates pitch/roll camera disturbances over KITTI-format datasets,
maps them to and from horizon/vanishing-point observations, rectifies
detections between viewports, scores detection sets (AP40, AOS,
center-distance errors), and provides the perceptual-loss kernels used
when features are transferred across viewports.
"""

from .errors import (
    BehindCamera,
    CamPerturbError,
    ChannelMismatch,
    DegenerateBox,
    MalformedImage,
    MalformedLine,
    MalformedTensor,
    MissingKey,
    NoGroundTruth,
    NoMatches,
    NonFiniteValue,
    NonPositiveDepth,
    NotARotation,
    OutOfRange,
    ShapeMismatch,
    SingularHomography,
)
from .geometry import (
    Box3D,
    CameraIntrinsics,
    CameraPoint,
    ExtrinsicPerturbation,
    ImagePoint,
    backproject,
    box_corners,
    ensure_rotation,
    image_homography,
    keypoint_transfer,
    perturbation_matrix,
    perturbation_matrix_literal,
    project,
    rectify_center,
    rectify_center_inverse,
    rot_x,
    rot_z,
    transfer_matrix,
    transform_box,
)
from .horizon import (
    HorizonLine,
    VanishingPoint,
    angular_error,
    extrinsics_from_horizon_vp,
    horizon_vp_from_extrinsics,
)
from .kitti import (
    CalibrationSet,
    DifficultyBin,
    ObjectLabel,
    OdometryPose,
    difficulty_of,
    parse_calib_file,
    parse_label_file,
    parse_odometry_poses,
    write_label_file,
)
from .losses import (
    FeatureTensor,
    content_loss,
    gram,
    loss_gradients,
    style_loss,
    total_loss,
)
from .metrics import (
    DetectionFrame,
    MatchResult,
    NuScenesErrors,
    PRCurve,
    average_orientation_similarity,
    average_precision_40,
    iou_2d,
    iou_3d,
    iou_bev,
    match_frame,
    nuscenes_errors,
)
from .netpbm import RasterImage, read_image, write_image
from .simulate import (
    PerturbationSpec,
    PerturbedFrame,
    SceneFrame,
    SimulationResult,
    perturb_labels,
    sample_perturbation,
    simulate_dataset,
    simulate_frame,
    transform_labels,
    warp_image,
)
from .tensorio import load_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
