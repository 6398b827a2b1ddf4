"""Single-view 3D mouse pose lifting with a Gaussian-mixture pose prior."""

from .camera import CameraModel, load_calibration, project, reprojection_residuals
from .errors import DataError, MouseLiftError, NumericFailure
from .gait import FootTrace, StrideReport, dominant_stride_duration, stride_report
from .keypoints import KeypointFrame
from .metrics import oks, oks_accuracy_table, registered_3d_error
from .optimizer import FitConfig, FitResult, check_gradient, fit_pose, objective
from .prior import GaussianMixture, fit_gmm, load_prior, log_likelihood
from .skeleton import (
    CHAIN_JOINTS,
    KEYPOINT_NAMES,
    Pose3D,
    PoseParams,
    Skeleton,
    default_skeleton,
    forward_kinematics,
    inverse_kinematics,
    load_skeleton,
    normalize_pose,
)
from .triangulation import MultiviewObservation, triangulate_point, triangulate_pose

__version__ = "0.1.0"
