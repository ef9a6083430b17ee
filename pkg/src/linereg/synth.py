"""Synthetic partial-to-partial scene pairs with ground truth."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import TooFewLines
from .plucker import (
    PluckerLine,
    RigidTransform,
    lines_from_point_direction,
    lines_to_point_direction,
    transform_lines,
)

MIN_SCENE_LINES = 20


@dataclass(frozen=True)
class NoiseConfig:
    """Clipped Gaussian noise on the footprint point (m) and direction (deg)."""

    footprint_sigma: float = 0.05
    footprint_clip: float = 0.25
    angle_sigma: float = 2.0
    angle_clip: float = 5.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.footprint_clip < self.footprint_sigma or self.angle_clip < self.angle_sigma:
            raise ValueError("clip must be >= sigma")

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PoseRanges:
    rot_range_deg: tuple[float, float] = (0.0, 45.0)
    trans_range_m: tuple[float, float] = (-2.0, 2.0)


@dataclass(eq=False)
class ScenePair:
    """Source/target line arrays (``(M, 6)`` and ``(N, 6)``) with ground truth.

    ``gt_matches`` is an ``(A, 2)`` integer array of (source, target) indices.
    """

    source: np.ndarray
    target: np.ndarray
    gt_pose: RigidTransform
    gt_matches: np.ndarray
    seed: int | None = None
    noise_params: NoiseConfig = field(default_factory=NoiseConfig)
    overlap_ratio: float = 1.0

    def correspondence_matrix(self) -> np.ndarray:
        C = np.zeros((len(self.source), len(self.target)))
        if len(self.gt_matches):
            C[self.gt_matches[:, 0], self.gt_matches[:, 1]] = 1.0
        return C


def sample_pose(rng: np.random.Generator, rot_range_deg=(0.0, 45.0), trans_range_m=(-2.0, 2.0)) -> RigidTransform:
    """Per-axis uniform Euler angles composed X then Y then Z, uniform translation."""
    angles = rng.uniform(rot_range_deg[0], rot_range_deg[1], size=3)
    t = rng.uniform(trans_range_m[0], trans_range_m[1], size=3)
    # extrinsic "xyz": R = Rz @ Ry @ Rx
    R = Rotation.from_euler("xyz", angles, degrees=True).as_matrix()
    return RigidTransform(R, t)


def _clipped_normal(rng, sigma, clip, size):
    return np.clip(rng.normal(0.0, 1.0, size=size) * sigma, -clip, clip)


def _random_axes(rng, n):
    a = rng.normal(size=(n, 3))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def perturb_point_direction(rng, P, V, cfg: NoiseConfig):
    """Noisy footprints and directions; returns ``(P', V', angles_deg)``.

    The draw order is fixed (footprint, then angle, then axis) so that two
    configs sharing a seed differ only by the scale of the noise.
    """
    P = np.atleast_2d(P)
    V = np.atleast_2d(V)
    n = len(P)
    dp = _clipped_normal(rng, cfg.footprint_sigma, cfg.footprint_clip, (n, 3))
    ang = _clipped_normal(rng, cfg.angle_sigma, cfg.angle_clip, n)
    axes = _random_axes(rng, n)
    th = np.radians(ang)[:, None]
    # Rodrigues rotation of each direction about its own axis
    V2 = (
        V * np.cos(th)
        + np.cross(axes, V) * np.sin(th)
        + axes * np.einsum("ij,ij->i", axes, V)[:, None] * (1.0 - np.cos(th))
    )
    return P + dp, V2, ang


def perturb_lines(rng, L, cfg: NoiseConfig) -> np.ndarray:
    """Perturb ``(n, 6)`` lines in point-direction form and return canonical lines."""
    P, V = lines_to_point_direction(L)
    P2, V2, _ = perturb_point_direction(rng, P, V, cfg)
    return lines_from_point_direction(P2, V2)


def perturb_line(rng, line, cfg: NoiseConfig):
    out = perturb_lines(rng, line.vec, cfg)[0]
    return PluckerLine(out[:3], out[3:])


def random_scene_lines(
    rng: np.random.Generator,
    n: int,
    axis_aligned_fraction: float = 0.5,
    extent=(11.0, 10.0, 3.0),
) -> np.ndarray:
    """Room-sized scene: a mixture of axis-aligned and uniformly oriented lines.

    Footprints are drawn uniformly in a box of size ``extent`` centred at the
    origin.
    """
    half = np.asarray(extent, dtype=float) / 2.0
    pts = rng.uniform(-half, half, size=(n, 3))
    aligned = rng.random(n) < axis_aligned_fraction
    dirs = _random_axes(rng, n)
    axis_ids = rng.integers(0, 3, size=n)
    dirs[aligned] = np.eye(3)[axis_ids[aligned]]
    return lines_from_point_direction(pts, dirs)


def make_scene_pair(
    rng: np.random.Generator,
    lines,
    overlap: float = 0.7,
    cfg: NoiseConfig = NoiseConfig(),
    pose_ranges: PoseRanges = PoseRanges(),
    seed: int | None = None,
    pose: RigidTransform | None = None,
) -> ScenePair:
    """Partial-to-partial pair from one line set.

    Source and target are noisy copies (the target moved by the sampled pose)
    from which ``round(overlap * n)`` lines are kept independently, in
    original order.
    """
    lines = np.atleast_2d(np.asarray(lines, dtype=float))
    n = len(lines)
    if n < MIN_SCENE_LINES:
        raise TooFewLines(f"scene has {n} lines, need at least {MIN_SCENE_LINES}")
    if not 0.0 < overlap <= 1.0:
        raise ValueError("overlap must be in (0, 1]")
    if pose is None:
        pose = sample_pose(rng, pose_ranges.rot_range_deg, pose_ranges.trans_range_m)
    src_all = perturb_lines(rng, lines, cfg)
    tgt_all = perturb_lines(rng, transform_lines(pose, lines), cfg)
    k = max(1, int(round(overlap * n)))
    src_idx = np.sort(rng.choice(n, size=k, replace=False))
    tgt_idx = np.sort(rng.choice(n, size=k, replace=False))
    tgt_pos = {orig: j for j, orig in enumerate(tgt_idx)}
    matches = [(i, tgt_pos[orig]) for i, orig in enumerate(src_idx) if orig in tgt_pos]
    return ScenePair(
        source=src_all[src_idx],
        target=tgt_all[tgt_idx],
        gt_pose=pose,
        gt_matches=np.array(matches, dtype=int).reshape(-1, 2),
        seed=seed,
        noise_params=cfg,
        overlap_ratio=overlap,
    )


def scene_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for scene ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng([seed, index])


def generate_scene(
    seed: int,
    index: int,
    num_lines: int = 40,
    overlap: float = 0.7,
    cfg: NoiseConfig = NoiseConfig(),
    pose_ranges: PoseRanges = PoseRanges(),
    axis_aligned_fraction: float = 0.5,
) -> ScenePair:
    """Deterministic scene ``index`` of the run ``seed``.

    Base lines and pose come from one stream and noise/subsets from another,
    so sweeping noise or overlap keeps the underlying scene fixed.
    """
    base = np.random.default_rng([seed, index, 0])
    lines = random_scene_lines(base, num_lines, axis_aligned_fraction)
    pose = sample_pose(base, pose_ranges.rot_range_deg, pose_ranges.trans_range_m)
    return make_scene_pair(
        np.random.default_rng([seed, index, 1]), lines, overlap, cfg, pose_ranges, seed=seed, pose=pose
    )
