"""Rigid-motion geometry for 3-D point configurations.

Rows are points and rotations act by post-multiplication, so a point ``x``
(a row vector) maps to ``x @ R + t``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi
LOG_HAAR_NORM = math.log(8.0 * math.pi**2)


class DegenerateFitWarning(UserWarning):
    """Matched subset has rank < 2, so the optimal rotation is not unique."""


@dataclass(frozen=True)
class PointSet:
    """An ordered set of labelled points in R^3."""

    points: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point set needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        ids = tuple(str(i) for i in self.ids) if len(self.ids) else tuple(
            str(i) for i in range(pts.shape[0])
        )
        if len(ids) != pts.shape[0]:
            raise ValueError("need exactly one id per point")
        if len(set(ids)) != len(ids):
            raise ValueError("point ids must be unique")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.points.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def with_points(self, points) -> "PointSet":
        return PointSet(points, self.ids)

    def subset(self, rows) -> "PointSet":
        rows = np.asarray(rows, dtype=int)
        return PointSet(self.points[rows], tuple(self.ids[i] for i in rows))


def wrap_angle(theta: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (theta + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class EulerAngles:
    """Euler angles for ``Rz(theta12) @ Ry(theta13) @ Rx(theta23)``.

    Construction normalises the triple so that theta12 and theta23 lie in
    [-pi, pi) and theta13 in [-pi/2, pi/2], using the identity
    ``(a, b, c) ~ (a + pi, pi - b, c + pi)``. The rotation is unchanged.
    """

    theta12: float = 0.0
    theta13: float = 0.0
    theta23: float = 0.0

    def __post_init__(self):
        a, b, c = float(self.theta12), wrap_angle(float(self.theta13)), float(self.theta23)
        if b > HALF_PI:
            a, b, c = a + math.pi, math.pi - b, c + math.pi
        elif b < -HALF_PI:
            a, b, c = a + math.pi, -math.pi - b, c + math.pi
        object.__setattr__(self, "theta12", wrap_angle(a))
        object.__setattr__(self, "theta13", b)
        object.__setattr__(self, "theta23", wrap_angle(c))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta12, self.theta13, self.theta23])


def rot_x(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def rot_y(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


AXIS_ROTATIONS = {"x": rot_x, "y": rot_y, "z": rot_z}


def axis_rotation(axis: str, theta: float) -> np.ndarray:
    return AXIS_ROTATIONS[axis](theta)


def euler_matrix(theta12: float, theta13: float, theta23: float) -> np.ndarray:
    """``Rz(theta12) @ Ry(theta13) @ Rx(theta23)`` written out in closed form."""
    c1, s1 = math.cos(theta12), math.sin(theta12)
    c2, s2 = math.cos(theta13), math.sin(theta13)
    c3, s3 = math.cos(theta23), math.sin(theta23)
    return np.array(
        [
            [c1 * c2, s1 * c3 - c1 * s2 * s3, c1 * s2 * c3 + s1 * s3],
            [-s1 * c2, c1 * c3 + s1 * s2 * s3, c1 * s3 - s1 * s2 * c3],
            [-s2, -c2 * s3, c2 * c3],
        ]
    )


def euler_to_matrix(a: EulerAngles) -> np.ndarray:
    return euler_matrix(a.theta12, a.theta13, a.theta23)


def haar_log_density(a: EulerAngles) -> float:
    """Log density of the Haar probability measure in Euler coordinates."""
    c = math.cos(a.theta13)
    if c <= 0.0 or abs(a.theta13) >= HALF_PI:
        return -math.inf
    return math.log(c) - LOG_HAAR_NORM


@dataclass(frozen=True)
class RigidTransform:
    """``x -> x @ rotation + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-10) or abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise ValueError("rotation must be a proper orthogonal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def then(self, other: "RigidTransform") -> "RigidTransform":
        """Composite transform: apply ``self`` first, then ``other``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.translation @ other.rotation + other.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.translation @ self.rotation.T)


@dataclass(frozen=True)
class ProcrustesFit:
    rotation: np.ndarray
    translation: np.ndarray
    distance: float
    fitted: PointSet
    degenerate: bool = False

    @property
    def transform(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)


def center(ps: PointSet) -> PointSet:
    pts = np.asarray(ps, dtype=np.float64)
    if pts.shape[0] == 0:
        raise ValueError("cannot center an empty point set")
    out = pts - pts.sum(axis=0) / pts.shape[0]
    return ps.with_points(out) if isinstance(ps, PointSet) else PointSet(out)


def apply_transform(ps: PointSet, t: RigidTransform) -> PointSet:
    out = np.asarray(ps, dtype=np.float64) @ t.rotation + t.translation
    return ps.with_points(out) if isinstance(ps, PointSet) else PointSet(out)


def _det3(a: np.ndarray) -> float:
    return (
        a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
        - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
        + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
    )


def procrustes_arrays(A: np.ndarray, B: np.ndarray):
    """Optimal ``(R, t, d2, degenerate)`` with ``A @ R + t ~ B``.

    ``d2`` is the squared residual norm after the fit. No validation, nothing
    allocated beyond what the SVD needs; samplers call this in their inner loop.
    """
    p = A.shape[0]
    a_bar = A.sum(axis=0) / p
    b_bar = B.sum(axis=0) / p
    Ac = A - a_bar
    Bc = B - b_bar
    U, s, Vt = np.linalg.svd(Ac.T @ Bc)
    sign = 1.0 if _det3(U) * _det3(Vt) > 0.0 else -1.0
    if sign < 0.0:
        U = U.copy()
        U[:, 2] = -U[:, 2]
    R = U @ Vt
    d2 = float((Ac * Ac).sum() + (Bc * Bc).sum() - 2.0 * (s[0] + s[1] + sign * s[2]))
    if d2 < 0.0:
        d2 = 0.0
    scale = s[0] if s[0] > 0.0 else 1.0
    degenerate = (s[1] + sign * s[2]) <= 1e-12 * scale
    return R, b_bar - a_bar @ R, d2, degenerate


def procrustes_sq_dist(A: np.ndarray, B: np.ndarray) -> float:
    """Squared size-and-shape distance only (skips forming the rotation)."""
    p = A.shape[0]
    if p < 2:
        return 0.0
    Ac = A - A.sum(axis=0) / p
    Bc = B - B.sum(axis=0) / p
    C = Ac.T @ Bc
    s = np.linalg.svd(C, compute_uv=False)
    if _det3(C) < 0.0:
        s_sum = s[0] + s[1] - s[2]
    else:
        s_sum = s[0] + s[1] + s[2]
    d2 = float((Ac * Ac).sum() + (Bc * Bc).sum() - 2.0 * s_sum)
    return d2 if d2 > 0.0 else 0.0


def partial_procrustes(source: PointSet, target: PointSet) -> ProcrustesFit:
    """Register ``source`` onto ``target`` by rotation and translation only.

    Both sets are centred internally; the returned translation maps the source
    centroid onto the target centroid after rotation. A rank-deficient pair
    (rank < 2) still returns a fit, flagged ``degenerate`` with a warning.
    """
    A = np.asarray(source, dtype=np.float64)
    B = np.asarray(target, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"source and target sizes differ: {A.shape} vs {B.shape}")
    if A.ndim != 2 or A.shape[0] < 1:
        raise ValueError("need at least one matched pair")
    if A.shape[0] == 1:
        R = np.eye(3)
        t = B[0] - A[0]
        d2, degenerate = 0.0, True
    else:
        R, t, d2, degenerate = procrustes_arrays(A, B)
    if degenerate:
        warnings.warn(
            "matched subset is rank deficient; rotation is not unique",
            DegenerateFitWarning,
            stacklevel=2,
        )
    fitted = A @ R + t
    ids = source.ids if isinstance(source, PointSet) else ()
    return ProcrustesFit(R, t, math.sqrt(d2), PointSet(fitted, ids), degenerate)


def matrix_to_euler(R: np.ndarray) -> EulerAngles:
    """Inverse of :func:`euler_to_matrix` (theta13 in [-pi/2, pi/2])."""
    R = np.asarray(R, dtype=np.float64)
    t13 = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    t23 = math.atan2(-R[2, 1], R[2, 2])
    t12 = math.atan2(-R[1, 0], R[0, 0])
    return EulerAngles(t12, t13, t23)
