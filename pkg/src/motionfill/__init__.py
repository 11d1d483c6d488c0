"""motionfill: masked sequence modelling for articulated pose data.

Train a bidirectional transformer to map noisy, partially observed pose
sequences to smooth complete ones, then drive it for denoising, gap filling
and short-horizon future prediction.
"""

__version__ = "0.1.0"

from . import config, errors, metrics, pseq, so3, tasks
from .corruption import CorruptionSpec
from .estimator import MotionDenoiser
from .model import ModelConfig, MotionTransformer, count_parameters
from .skeleton import (
    CameraIntrinsics,
    Pose,
    PoseSequence,
    SkeletonDef,
    forward_kinematics,
    load_skeleton,
)
from .synthgen import Corpus, GenSpec, generate_corpus, generate_sequence
from .train import TrainConfig, Trainer, load_checkpoint, save_checkpoint

__all__ = [
    "CameraIntrinsics",
    "Corpus",
    "CorruptionSpec",
    "GenSpec",
    "ModelConfig",
    "MotionDenoiser",
    "MotionTransformer",
    "Pose",
    "PoseSequence",
    "SkeletonDef",
    "TrainConfig",
    "Trainer",
    "__version__",
    "config",
    "count_parameters",
    "errors",
    "forward_kinematics",
    "generate_corpus",
    "generate_sequence",
    "load_checkpoint",
    "load_skeleton",
    "metrics",
    "pseq",
    "save_checkpoint",
    "so3",
    "tasks",
]
