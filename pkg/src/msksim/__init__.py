"""Musculoskeletal motion-to-muscle pipeline: scaling, IK, ID, static optimization,
post-processing and evaluation metrics."""

from .model import (
    BodySegment,
    HillMuscleParams,
    MarkerDef,
    Model,
    ModelError,
    SubjectAnthropometry,
    check_model,
    moment_arms,
    muscle_force,
    muscle_tendon_lengths,
    scale_model,
    validate_model,
)
from .kinematics import KinematicTrajectory, MarkerTrajectory, inverse_kinematics, place_markers
from .dynamics import ExternalWrench, forward_dynamics, inverse_dynamics, mass_matrix
from .staticopt import SoConfig, solve_frame, solve_sequence
from .postprocess import AcceptanceThresholds, SmoothingConfig, accept_sequence, savgol_smooth
from .storage import read_model, read_storage, read_trc, write_storage, write_trc

__version__ = "0.1.0"
