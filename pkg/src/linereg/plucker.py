"""Plücker line algebra.

A line is stored as a direction ``v`` (unit norm, on the hemisphere whose first
non-negligible component is positive) and a moment ``m = p x v`` for any point
``p`` on the line.  Sets of lines are ``(n, 6)`` arrays with columns
``[vx, vy, vz, mx, my, mz]``.  The 6x6 line motion matrix acts on the stacked
``(m; v)`` ordering.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSegment, NonLineInput, ZeroDirection

#: invariant tolerance for ``|v| = 1``, ``v . m = 0`` and rotation orthonormality
INVARIANT_TOL = 1e-9
#: tolerance on ``v . m`` accepted from callers (after scaling ``v`` to unit norm)
INPUT_TOL = 1e-6
#: directions shorter than this are rejected
ZERO_DIRECTION_TOL = 1e-12
#: components with magnitude below this are skipped by the hemisphere rule
HEMISPHERE_TOL = 1e-9
#: minimum segment length for :func:`from_endpoints`
SEGMENT_TOL = 1e-9
#: deviations below this are treated as rounding and left untouched by canonicalization
ROUNDING_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class PluckerLine:
    """Canonical line.  Build with :func:`canonicalize` or :func:`from_endpoints`."""

    v: np.ndarray
    m: np.ndarray

    @property
    def vec(self) -> np.ndarray:
        """``[v, m]`` as one 6-vector."""
        return np.concatenate([self.v, self.m])

    @property
    def mv(self) -> np.ndarray:
        """``(m; v)`` ordering used by the motion matrix."""
        return np.concatenate([self.m, self.v])

    @classmethod
    def from_vec(cls, x) -> "PluckerLine":
        x = np.asarray(x, dtype=float)
        return canonicalize(x[:3], x[3:6])

    def __eq__(self, other):
        if not isinstance(other, PluckerLine):
            return NotImplemented
        return bool(np.array_equal(self.v, other.v) and np.array_equal(self.m, other.m))

    def __repr__(self):
        return f"PluckerLine(v={self.v.tolist()}, m={self.m.tolist()})"


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation ``R`` followed by translation ``t``: ``x -> R x + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=INVARIANT_TOL, rtol=0):
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > INVARIANT_TOL:
            raise ValueError("det(R) != +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
        return rotation_to_quaternion(self.R)

    @classmethod
    def from_quaternion(cls, q, t) -> "RigidTransform":
        return cls(quaternion_to_rotation(q), t)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t))

    def __repr__(self):
        return f"RigidTransform(R={self.R.tolist()}, t={self.t.tolist()})"


def skew(t) -> np.ndarray:
    """Cross-product matrix ``[t]x`` so that ``skew(t) @ x == t x x``."""
    x, y, z = np.asarray(t, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _hemisphere_sign(V: np.ndarray) -> np.ndarray:
    # sign of the first component with |c| > HEMISPHERE_TOL (lexicographic hemisphere)
    big = np.abs(V) > HEMISPHERE_TOL
    first = np.argmax(big, axis=-1)
    lead = np.take_along_axis(V, first[..., None], axis=-1)[..., 0]
    return np.where(lead < 0, -1.0, 1.0)


def canonicalize_many(V, M) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`canonicalize` over ``(n, 3)`` arrays."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms < ZERO_DIRECTION_TOL):
        raise ZeroDirection(f"direction norm below {ZERO_DIRECTION_TOL}")
    # rows already unit within rounding are left as is, so re-canonicalizing is bit-exact
    scale = np.where(np.abs(norms - 1.0) > ROUNDING_TOL, norms, 1.0)[:, None]
    V = V / scale
    M = M / scale
    dots = np.einsum("ij,ij->i", V, M)
    mnorm = np.maximum(1.0, np.linalg.norm(M, axis=1))
    limit = INPUT_TOL * mnorm
    if np.any(np.abs(dots) > limit):
        bad = int(np.argmax(np.abs(dots) - limit))
        raise NonLineInput(f"v . m = {dots[bad]:.3g} violates orthogonality (row {bad})")
    dots = np.where(np.abs(dots) > ROUNDING_TOL * mnorm, dots, 0.0)
    M = M - dots[:, None] * V
    sign = _hemisphere_sign(V)
    return V * sign[:, None], M * sign[:, None]


def canonicalize(v_raw, m_raw) -> PluckerLine:
    """Unit direction on the canonical hemisphere, moment scaled by the same factor.

    Raises
    ------
    ZeroDirection
        If ``|v_raw| < 1e-12``.
    NonLineInput
        If ``v . m`` is not zero within :data:`INPUT_TOL` after scaling.
    """
    V, M = canonicalize_many(np.reshape(v_raw, (1, 3)), np.reshape(m_raw, (1, 3)))
    return PluckerLine(V[0], M[0])


def canonicalize_lines(L) -> np.ndarray:
    """Canonicalize an ``(n, 6)`` line array."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    V, M = canonicalize_many(L[:, :3], L[:, 3:6])
    return np.hstack([V, M])


def from_point_direction(p, v) -> PluckerLine:
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return canonicalize(v, np.cross(p, v))


def lines_from_point_direction(P, V) -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    return canonicalize_lines(np.hstack([V, np.cross(P, V)]))


def from_endpoints(p, q) -> PluckerLine:
    """Line through ``p`` and ``q``; direction along ``q - p`` before the hemisphere fix."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q - p
    if np.linalg.norm(d) <= SEGMENT_TOL:
        raise DegenerateSegment("segment endpoints coincide")
    d = d / np.linalg.norm(d)
    return canonicalize(d, np.cross(p, d))


def lines_from_endpoints(P, Q) -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    D = Q - P
    n = np.linalg.norm(D, axis=1)
    if np.any(n <= SEGMENT_TOL):
        raise DegenerateSegment("segment endpoints coincide")
    D = D / n[:, None]
    return canonicalize_lines(np.hstack([D, np.cross(P, D)]))


def to_point_direction(line: PluckerLine) -> tuple[np.ndarray, np.ndarray]:
    """Footprint of the perpendicular from the origin, and the direction."""
    return np.cross(line.v, line.m), line.v.copy()


def lines_to_point_direction(L) -> tuple[np.ndarray, np.ndarray]:
    L = np.atleast_2d(np.asarray(L, dtype=float))
    return np.cross(L[:, :3], L[:, 3:6]), L[:, :3].copy()


def motion_matrix(g: RigidTransform) -> np.ndarray:
    """6x6 matrix ``[[R, [t]x R], [0, R]]`` acting on ``(m; v)``."""
    T = np.zeros((6, 6))
    T[:3, :3] = g.R
    T[:3, 3:] = skew(g.t) @ g.R
    T[3:, 3:] = g.R
    return T


def transform_lines(g: RigidTransform, L, canonical: bool = True) -> np.ndarray:
    """Move ``(n, 6)`` lines by ``g``: ``v' = R v``, ``m' = R m + t x R v``.

    With ``canonical=False`` the transported orientation is kept (the result
    may lie on the wrong hemisphere); used when pairing oriented lines.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    V = L[:, :3] @ g.R.T
    M = L[:, 3:6] @ g.R.T + np.cross(g.t, V)
    out = np.hstack([V, M])
    return canonicalize_lines(out) if canonical else out


def transform_line(g: RigidTransform, line: PluckerLine) -> PluckerLine:
    out = transform_lines(g, line.vec)[0]
    return PluckerLine(out[:3], out[3:])


def line_distance(a: PluckerLine, b: PluckerLine, sign_invariant: bool = True) -> float:
    """Euclidean distance between the canonical 6-vectors.

    With ``sign_invariant`` (default) the smaller of ``|a - b|`` and
    ``|a + b|`` is returned.  This equals the plain difference whenever the
    two lines sit on the same side of the hemisphere boundary and removes the
    spurious jump of about ``2 |a|`` when a small perturbation carries one of
    them across it.
    """
    a = canonicalize(a.v, a.m).vec
    b = canonicalize(b.v, b.m).vec
    d = np.linalg.norm(a - b)
    if sign_invariant:
        d = min(d, np.linalg.norm(a + b))
    return float(d)


def pairwise_line_distance(A, B, sign_invariant: bool = True) -> np.ndarray:
    """``(n_a, n_b)`` matrix of :func:`line_distance` between canonical line arrays."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    # explicit differences: the expanded |a|^2 + |b|^2 - 2ab form loses accuracy near zero
    d = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=-1)
    if sign_invariant:
        d = np.minimum(d, np.linalg.norm(A[:, None, :] + B[None, :, :], axis=-1))
    return d


def paired_line_distance(A, B, sign_invariant: bool = True) -> np.ndarray:
    """Row-wise distance between paired canonical ``(n, 6)`` arrays."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d = np.linalg.norm(A - B, axis=1)
    if sign_invariant:
        d = np.minimum(d, np.linalg.norm(A + B, axis=1))
    return d


def rotation_error(R_gt, R) -> float:
    """Angle of ``R_gt^T R`` in degrees, in ``[0, 180]``.

    Same quantity as ``arccos((trace - 1) / 2)`` but computed through
    ``atan2(sin, cos)`` so that errors near zero are not swamped by rounding
    in the trace.
    """
    Q = np.asarray(R_gt, dtype=float).T @ np.asarray(R, dtype=float)
    c = np.clip((np.trace(Q) - 1.0) / 2.0, -1.0, 1.0)
    axis = np.array([Q[2, 1] - Q[1, 2], Q[0, 2] - Q[2, 0], Q[1, 0] - Q[0, 1]])
    s = min(np.linalg.norm(axis) / 2.0, 1.0)
    return float(np.degrees(np.arctan2(s, c)))


def translation_error(t_gt, t) -> float:
    return float(np.linalg.norm(np.asarray(t_gt, dtype=float) - np.asarray(t, dtype=float)))


def axis_angle_to_rotation(axis, angle_rad) -> np.ndarray:
    """Rodrigues' formula."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = skew(axis)
    return np.eye(3) + np.sin(angle_rad) * K + (1.0 - np.cos(angle_rad)) * K @ K


def quaternion_to_rotation(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(R) -> np.ndarray:
    """Scalar-first unit quaternion with non-negative scalar part."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q
