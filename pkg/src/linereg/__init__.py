"""Registration of partially overlapping 3D line reconstructions.

Lines are Pluecker 6-vectors ``[v, m]``; a learned trunk matches them through
entropy-regularised optimal transport and a 2-line minimal solver inside
RANSAC recovers the rigid pose.
"""
from .baselines import IclConfig, icl_register, regression_loss, regression_register
from .bench import evaluate_scene, run_benchmark, run_pipeline, sweep_conditions
from .config import RunConfig
from .errors import *  # noqa: F401,F403
from .features import LineNet, NetConfig
from .matching import MatchList, cost_matrix, matching_loss, sinkhorn, topk
from .plucker import (
    PluckerLine,
    RigidTransform,
    canonicalize,
    canonicalize_lines,
    from_endpoints,
    line_distance,
    motion_matrix,
    rotation_error,
    to_point_direction,
    transform_line,
    transform_lines,
    translation_error,
)
from .pose import RansacConfig, RegistrationResult, ransac_register, refine, two_line_solutions, two_line_solver
from .synth import NoiseConfig, PoseRanges, ScenePair, generate_scene, make_scene_pair, sample_pose

from .training import create_model, train

__version__ = "0.1.0"
