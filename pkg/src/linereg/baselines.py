"""Baselines: Iterative Closest Line and direct pose regression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegenerateDirections
from .features import LineNet, regression_head
from .plucker import RigidTransform, pairwise_line_distance, transform_lines
from .pose import PARALLEL_ANGLE, RegistrationResult, orient_pairs, solve_pose

ABS_TOL = 1e-12


@dataclass(frozen=True)
class IclConfig:
    max_iterations: int = 100
    relative_change_tol: float = 1e-6
    # nearest lines by min(|a - b|, |a + b|) instead of the plain canonical difference
    sign_invariant: bool = True

    def __post_init__(self):
        if self.max_iterations < 1 or self.relative_change_tol <= 0:
            raise ValueError("IclConfig values must be positive")


def _all_parallel(V: np.ndarray) -> bool:
    c = np.linalg.norm(np.cross(V[0], V), axis=1)
    return bool(np.all(c < np.sin(PARALLEL_ANGLE)))


def icl_register(src_lines, dst_lines, cfg: IclConfig = IclConfig()) -> RegistrationResult:
    """Alternate nearest-line assignment (6-dim distance) and closed-form pose.

    Stops after ``max_iterations`` or when the summed nearest-line distance
    changes by less than ``relative_change_tol`` relative to the previous
    iteration.  ``trace`` records that sum per iteration.
    """
    src = np.atleast_2d(np.asarray(src_lines, dtype=float))
    dst = np.atleast_2d(np.asarray(dst_lines, dtype=float))
    if len(src) < 2 or len(dst) < 2:
        raise ValueError("ICL needs at least two lines per set")
    if _all_parallel(src[:, :3]):
        raise DegenerateDirections("all source directions are parallel")

    pose = RigidTransform.identity()
    prev = None
    trace = []
    nn_idx = np.zeros(len(src), dtype=int)
    it = 0
    while it < cfg.max_iterations:
        it += 1
        moved = transform_lines(pose, src)
        D = pairwise_line_distance(moved, dst, cfg.sign_invariant)
        nn_idx = np.argmin(D, axis=1)
        total = float(D[np.arange(len(src)), nn_idx].sum())
        trace.append(total)
        if total < ABS_TOL:
            break
        if prev is not None and abs(prev - total) <= cfg.relative_change_tol * prev:
            break
        prev = total
        try:
            inc = solve_pose(moved, orient_pairs(np.eye(3), moved, dst[nn_idx]))
        except DegenerateDirections:
            break
        pose = inc.compose(pose)
        # re-orthonormalise the accumulated rotation against drift
        U, _, Vt = np.linalg.svd(pose.R)
        pose = RigidTransform(U @ Vt, pose.t)
    pairs = np.column_stack([np.arange(len(src)), nn_idx])
    return RegistrationResult(pose=pose, inlier_pairs=pairs, score_sum=trace[-1], hypothesis_count=it, trace=trace)


def regression_register(src_lines, dst_lines, model: LineNet) -> RigidTransform:
    """Pose regressed directly from pooled trunk features."""
    with torch.no_grad():
        f_s, f_t = model.trunk(src_lines, dst_lines)
        return regression_head(f_s, f_t, model)


def regression_loss_terms(q_gt, t_gt, q, t):
    """``|t_gt - t| + |q_gt - q|`` on tensors (differentiable)."""
    return (t_gt - t).norm() + (q_gt - q).norm()


def regression_loss(pose_gt: RigidTransform, pose: RigidTransform) -> float:
    """Translation gap plus the gap between sign-canonical quaternions."""
    return float(
        np.linalg.norm(pose_gt.t - pose.t) + np.linalg.norm(pose_gt.quaternion() - pose.quaternion())
    )
