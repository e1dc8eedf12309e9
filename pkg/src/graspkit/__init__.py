"""Semi-supervised grasp prediction toolkit.

Representation learning on unlabelled scenes (vector-quantized autoencoder),
a grasp head trained on the labelled fraction, rectangle-overlap evaluation,
7D pose calibration and a simulated arm executor.
"""

from .calibration import (
    MappingMatrix,
    ObservationSet,
    Pose7,
    apply_mapping,
    fit_mapping,
    pose_from_grasp,
    rpy_to_quaternion,
)
from .data import Scene, SplitSpec, TargetMaps, W_MAX, augment, load_cornell_scene, rasterize_targets, split_by_ratio, synth_dataset
from .errors import (
    ConfigError,
    DegenerateObservationsError,
    ExecutionAborted,
    FormatError,
    FreezeViolation,
    GeometryError,
    GraspkitError,
    MappingDegenerateError,
    NumericError,
    SafetyError,
    TrainingDiverged,
    UnreachablePoseError,
)
from .geometry import (
    GraspMaps,
    GraspPose2D,
    GraspRect,
    angle_diff,
    grasp_from_maps,
    iou,
    normalize_angle,
    rect_from_grasp,
)
from .kinematics import KinematicChain, default_chain, fk, ik, jacobian
from .network import (
    AssembledModel,
    NetworkConfig,
    assemble_rggcnn2,
    build_ggcnn2,
    param_count,
    parse_network_config,
    predict_maps,
)
from .trajectory import GraspObject, TableGeom, plan_trajectory, simulate_execution
from .training import (
    EvalResult,
    TrainConfig,
    evaluate,
    grasp_loss,
    ratio_sweep,
    train_supervised_baseline,
    train_two_phase,
)
from .vqvae import VQVAE, Codebook, VQLossBreakdown, VQOutput, decode, encode, quantize, train_vqvae, vq_loss
from .weights import checksum_arrays, load_archive, save_archive

__version__ = "0.1.0"

__all__ = [
    "AssembledModel",
    "Codebook",
    "ConfigError",
    "DegenerateObservationsError",
    "EvalResult",
    "ExecutionAborted",
    "FormatError",
    "FreezeViolation",
    "GeometryError",
    "GraspMaps",
    "GraspObject",
    "GraspPose2D",
    "GraspRect",
    "GraspkitError",
    "KinematicChain",
    "MappingDegenerateError",
    "MappingMatrix",
    "NetworkConfig",
    "NumericError",
    "ObservationSet",
    "Pose7",
    "SafetyError",
    "Scene",
    "SplitSpec",
    "TableGeom",
    "TargetMaps",
    "TrainConfig",
    "TrainingDiverged",
    "UnreachablePoseError",
    "VQLossBreakdown",
    "VQOutput",
    "VQVAE",
    "W_MAX",
    "angle_diff",
    "apply_mapping",
    "assemble_rggcnn2",
    "augment",
    "build_ggcnn2",
    "checksum_arrays",
    "decode",
    "default_chain",
    "encode",
    "evaluate",
    "fit_mapping",
    "fk",
    "grasp_from_maps",
    "grasp_loss",
    "ik",
    "iou",
    "jacobian",
    "load_archive",
    "load_cornell_scene",
    "normalize_angle",
    "param_count",
    "parse_network_config",
    "plan_trajectory",
    "pose_from_grasp",
    "predict_maps",
    "quantize",
    "rasterize_targets",
    "ratio_sweep",
    "rect_from_grasp",
    "rpy_to_quaternion",
    "save_archive",
    "simulate_execution",
    "split_by_ratio",
    "synth_dataset",
    "train_supervised_baseline",
    "train_two_phase",
    "train_vqvae",
    "vq_loss",
]
