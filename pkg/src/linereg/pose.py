"""Pose recovery from line correspondences: 2-line minimal solver, RANSAC, refinement.

Canonical lines are unoriented: a true match may pair ``v`` with ``-R v``.
Solvers that take explicit pairs treat them as oriented; :func:`orient_pairs`
and :func:`two_line_solutions` handle the sign ambiguity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDirections, NoValidHypothesis, RankDeficient
from .plucker import RigidTransform, canonicalize_lines, paired_line_distance, skew, transform_lines

SINGULAR_TOL = 1e-9
#: minimal angle (rad) between two sampled source directions
PARALLEL_ANGLE = 1e-4


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 1000
    inlier_threshold: float = 0.5
    min_inliers: int = 2
    seed: int = 0
    paper_sign_fix: bool = False
    refine_rounds: int = 10
    # score with min(|a - b|, |a + b|) instead of the plain canonical difference
    sign_invariant: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be > 0")


@dataclass(eq=False)
class RegistrationResult:
    pose: RigidTransform
    inlier_pairs: np.ndarray
    score_sum: float
    hypothesis_count: int
    trace: list = field(default_factory=list)


def _as_lines(x) -> np.ndarray:
    if hasattr(x, "vec"):
        return x.vec[None, :]
    return np.atleast_2d(np.asarray(x, dtype=float))


def rotation_from_directions(src_dirs, dst_dirs, paper_sign_fix: bool = False) -> np.ndarray:
    """Rotation closest to ``sum_k dst_k src_k^T`` (orthogonal Procrustes).

    With ``paper_sign_fix`` a reflection is fixed by ``R / det(R)`` instead of
    flipping the last singular direction.
    """
    A = np.atleast_2d(np.asarray(src_dirs, dtype=float))
    B = np.atleast_2d(np.asarray(dst_dirs, dtype=float))
    if len(A) < 2 or len(A) != len(B):
        raise ValueError("need at least two direction pairs of equal count")
    M = B.T @ A
    U, S, Vt = np.linalg.svd(M)
    if S[1] < SINGULAR_TOL and S[2] < SINGULAR_TOL:
        raise DegenerateDirections("all directions are parallel")
    R = U @ Vt
    d = np.linalg.det(R)
    if d < 0:
        if paper_sign_fix:
            R = R / d
        else:
            R = U @ np.diag([1.0, 1.0, d]) @ Vt
    return R


def translation_least_squares(R, src_lines, dst_lines) -> np.ndarray:
    """Least-squares ``t`` from ``[R v]x^T t = m' - R m`` stacked over pairs."""
    src = _as_lines(src_lines)
    dst = _as_lines(dst_lines)
    RV = src[:, :3] @ R.T
    A = np.concatenate([skew(rv).T for rv in RV], axis=0)
    b = (dst[:, 3:6] - src[:, 3:6] @ R.T).reshape(-1)
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    if S[-1] < SINGULAR_TOL:
        raise RankDeficient("translation unobservable along a shared direction")
    return Vt.T @ ((U.T @ b) / S)


def _translation_ls_fast(RV, RM, dst):
    # normal equations of the stacked skew system: sum([w]x^T [w]x) = sum(|w|^2 I - w w^T)
    b = dst[:, 3:6] - RM
    AtA = np.eye(3) * np.einsum("ij,ij->", RV, RV) - RV.T @ RV
    Atb = np.cross(RV, b).sum(axis=0)  # ([w]x^T)^T b = w x b
    return AtA, Atb


def solve_pose(src_lines, dst_lines, paper_sign_fix: bool = False) -> RigidTransform:
    """Rotation from directions then translation, for oriented pairs."""
    src = _as_lines(src_lines)
    dst = _as_lines(dst_lines)
    R = rotation_from_directions(src[:, :3], dst[:, :3], paper_sign_fix)
    t = translation_least_squares(R, src, dst)
    return RigidTransform(R, t)


def two_line_solver(pair_a, pair_b, paper_sign_fix: bool = False) -> RigidTransform:
    """Minimal solver for two oriented correspondences ``(src, dst)``.

    The targets are taken with the orientation given; canonical (unoriented)
    targets are handled by :func:`two_line_solutions`.
    """
    src = np.vstack([_as_lines(pair_a[0]), _as_lines(pair_b[0])])
    dst = np.vstack([_as_lines(pair_a[1]), _as_lines(pair_b[1])])
    c = np.linalg.norm(np.cross(src[0, :3], src[1, :3]))
    if c < np.sin(PARALLEL_ANGLE):
        raise DegenerateDirections("source directions are parallel")
    return solve_pose(src, dst, paper_sign_fix)


def two_line_solutions(pair_a, pair_b, paper_sign_fix: bool = False) -> list[RigidTransform]:
    """Both rigid motions taking two unoriented source lines onto their targets.

    The relative sign of the second target is fixed by preserving the angle
    between the two directions; the remaining global sign leaves two
    solutions related by a half-turn about the common perpendicular.
    """
    sa, da = _as_lines(pair_a[0])[0], _as_lines(pair_a[1])[0]
    sb, db = _as_lines(pair_b[0])[0], _as_lines(pair_b[1])[0]
    if np.linalg.norm(np.cross(sa[:3], sb[:3])) < np.sin(PARALLEL_ANGLE):
        raise DegenerateDirections("source directions are parallel")
    cs = sa[:3] @ sb[:3]
    cd = da[:3] @ db[:3]
    # angle preservation: sign(s_a s_b) must make cd agree with cs
    rel = -1.0 if cs * cd < 0 else 1.0
    out = []
    for s in (1.0, -1.0):
        dst = np.vstack([s * da, s * rel * db])
        out.append(solve_pose(np.vstack([sa, sb]), dst, paper_sign_fix))
    return out


def score(pose: RigidTransform, src, dst, sign_invariant: bool = True) -> float:
    """6-dim distance between ``dst`` and ``src`` moved by ``pose`` (both canonical)."""
    moved = transform_lines(pose, _as_lines(src))
    return float(paired_line_distance(moved, canonicalize_lines(_as_lines(dst)), sign_invariant)[0])


def scores(pose: RigidTransform, src_lines, dst_lines, sign_invariant: bool = True) -> np.ndarray:
    """Row-wise :func:`score` over paired ``(n, 6)`` arrays (dst assumed canonical)."""
    moved = transform_lines(pose, src_lines)
    return paired_line_distance(moved, dst_lines, sign_invariant)


def orient_pairs(R, src_lines, dst_lines) -> np.ndarray:
    """Flip target lines whose direction opposes ``R v`` so pairs become oriented."""
    src = _as_lines(src_lines)
    dst = _as_lines(dst_lines).copy()
    s = np.einsum("ij,ij->i", src[:, :3] @ R.T, dst[:, :3])
    dst[s < 0] *= -1.0
    return dst


def refine(pose0: RigidTransform, src_lines, dst_lines, threshold: float, rounds: int = 10,
           paper_sign_fix: bool = False, sign_invariant: bool = True):
    """Alternating closed-form re-estimation over the inlier set.

    Each round re-solves rotation and translation from all current inliers
    and re-selects inliers at ``threshold``.  A round is accepted only if it
    does not raise the summed score over the inlier set it was fitted on.
    Returns ``(pose, inlier_mask, trace)``; ``trace`` holds
    ``(score_before, score_after)`` per accepted round.
    """
    src = np.asarray(src_lines, dtype=float)
    dst = np.asarray(dst_lines, dtype=float)
    pose = pose0

    def sc(p, a, b):
        return scores(p, a, b, sign_invariant)

    inl = sc(pose, src, dst) < threshold
    trace = []
    for _ in range(rounds):
        if inl.sum() < 2:
            break
        s_in, d_in = src[inl], orient_pairs(pose.R, src[inl], dst[inl])
        try:
            cand = solve_pose(s_in, d_in, paper_sign_fix)
        except (DegenerateDirections, RankDeficient):
            break
        before = sc(pose, src[inl], dst[inl]).sum()
        after = sc(cand, src[inl], dst[inl]).sum()
        if after > before:
            break
        trace.append((float(before), float(after)))
        pose = cand
        new_inl = sc(pose, src, dst) < threshold
        if np.array_equal(new_inl, inl):
            break
        inl = new_inl
    inl = sc(pose, src, dst) < threshold
    # never end worse than the starting pose on the final inlier set
    if sc(pose, src[inl], dst[inl]).sum() > sc(pose0, src[inl], dst[inl]).sum():
        pose = pose0
        inl = sc(pose, src, dst) < threshold
    return pose, inl, trace


def _solve_sample(sa, da, sb, db, paper_sign_fix):
    """Both minimal solutions for a sampled pair, vectorised for speed."""
    cs = sa[:3] @ sb[:3]
    cd = da[:3] @ db[:3]
    rel = -1.0 if cs * cd < 0 else 1.0
    A = np.vstack([sa, sb])
    out = []
    for s in (1.0, -1.0):
        D = np.vstack([s * da, s * rel * db])
        M = D[:, :3].T @ A[:, :3]
        U, S, Vt = np.linalg.svd(M)
        if S[1] < SINGULAR_TOL:
            return []
        R = U @ Vt
        d = np.linalg.det(R)
        if d < 0:
            R = R / d if paper_sign_fix else U @ np.diag([1.0, 1.0, d]) @ Vt
        RV = A[:, :3] @ R.T
        AtA, Atb = _translation_ls_fast(RV, A[:, 3:6] @ R.T, D)
        if np.linalg.eigvalsh(AtA)[0] < SINGULAR_TOL**2:
            return []
        out.append((R, np.linalg.solve(AtA, Atb)))
    return out


def _score_all(R, t, src, dst, sign_invariant=True):
    V = src[:, :3] @ R.T
    M = src[:, 3:6] @ R.T + np.cross(t, V)
    # canonical hemisphere sign of the moved lines
    big = np.abs(V) > 1e-9
    first = np.argmax(big, axis=1)
    lead = V[np.arange(len(V)), first]
    sgn = np.where(lead < 0, -1.0, 1.0)[:, None]
    moved = np.hstack([V * sgn, M * sgn])
    d = np.sqrt(((moved - dst) ** 2).sum(axis=1))
    if sign_invariant:
        d = np.minimum(d, np.sqrt(((moved + dst) ** 2).sum(axis=1)))
    return d


def ransac_register(matches, src_lines, dst_lines, cfg: RansacConfig = RansacConfig()) -> RegistrationResult:
    """RANSAC over a match list ``(K, 2)`` (extra columns such as weights ignored).

    Each sample of two matches yields both minimal solutions.  The best
    hypothesis has the most inliers (ties: lower summed score) and is then
    refined on its inliers.
    """
    matches = np.asarray(getattr(matches, "pairs", matches))
    if matches.ndim != 2 or len(matches) < 2:
        raise NoValidHypothesis("need at least two matches")
    idx = matches[:, :2].astype(int)
    src_all = np.asarray(src_lines, dtype=float)
    dst_all = np.asarray(dst_lines, dtype=float)
    src = src_all[idx[:, 0]]
    dst = dst_all[idx[:, 1]]
    K = len(idx)
    rng = np.random.default_rng(cfg.seed)
    eps = cfg.inlier_threshold

    best = None  # (count, score_sum, R, t)
    hyps = 0
    done = 0
    draws = 0
    cap = 10 * cfg.iterations
    while done < cfg.iterations and draws < cap:
        draws += 1
        a, b = rng.choice(K, size=2, replace=False)
        if np.linalg.norm(np.cross(src[a, :3], src[b, :3])) < np.sin(PARALLEL_ANGLE):
            continue
        sols = _solve_sample(src[a], dst[a], src[b], dst[b], cfg.paper_sign_fix)
        if not sols:
            continue
        done += 1
        for R, t in sols:
            hyps += 1
            sc = _score_all(R, t, src, dst, cfg.sign_invariant)
            inl = sc < eps
            cnt = int(inl.sum())
            tot = float(sc[inl].sum())
            if best is None or cnt > best[0] or (cnt == best[0] and tot < best[1]):
                best = (cnt, tot, R, t)
    if best is None or best[0] < cfg.min_inliers:
        raise NoValidHypothesis("no hypothesis reached min_inliers")

    pose0 = RigidTransform(best[2], best[3])
    pose, inl, trace = refine(pose0, src, dst, eps, cfg.refine_rounds, cfg.paper_sign_fix, cfg.sign_invariant)
    sc = scores(pose, src, dst, cfg.sign_invariant)
    return RegistrationResult(
        pose=pose,
        inlier_pairs=idx[inl],
        score_sum=float(sc[inl].sum()),
        hypothesis_count=hyps,
        trace=trace,
    )
