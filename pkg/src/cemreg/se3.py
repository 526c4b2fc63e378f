"""Point clouds, Euler-angle rotations and rigid motions.

Rotations use the extrinsic X-then-Y-then-Z convention::

    R(e) = Rz(e3) @ Ry(e2) @ Rx(e1)

and a motion ``a = [e, t]`` maps a point ``x`` to ``R(e) x + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cemreg.nn_index import NeighborIndex, build_index

GIMBAL_TOL = 1e-9


def wrap_angle(x: ArrayLike) -> NDArray[np.float64]:
    """Wrap angles (radians) into [-pi, pi]. Values already in range are returned unchanged."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where((x < -np.pi) | (x > np.pi), np.mod(x + np.pi, 2.0 * np.pi) - np.pi, x)
    return out if out.ndim else out[()]


def _readonly(a: NDArray) -> NDArray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Normalization:
    """Record of a centring + isotropic scaling: ``normalized = (p - centroid) / scale``."""

    centroid: NDArray[np.float64]
    scale: float

    def __post_init__(self) -> None:
        c = np.asarray(self.centroid, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(c)):
            raise ValueError("normalization centroid must be finite")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"normalization scale must be positive, got {self.scale}")
        object.__setattr__(self, "centroid", _readonly(c.copy()))
        object.__setattr__(self, "scale", float(self.scale))

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        return (np.asarray(points, dtype=np.float64) - self.centroid) / self.scale

    def invert(self, points: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(points, dtype=np.float64) * self.scale + self.centroid


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered, immutable set of 3D points.

    ``normalization`` is set when ``points`` are already expressed in
    normalized units; ``denormalized()`` recovers the original coordinates.
    """

    points: NDArray[np.float64]
    normalization: Optional[Normalization] = None

    def __post_init__(self) -> None:
        p = np.array(self.points, dtype=np.float64, copy=True)
        if p.ndim == 1 and p.size == 3:
            p = p.reshape(1, 3)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {p.shape}")
        if p.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _readonly(np.ascontiguousarray(p)))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def centroid(self) -> NDArray[np.float64]:
        return self.points.mean(axis=0)

    def radius(self) -> float:
        """Largest distance from the centroid."""
        return float(np.linalg.norm(self.points - self.centroid, axis=1).max())

    def normalized(self, centroid: Optional[ArrayLike] = None, scale: Optional[float] = None) -> PointCloud:
        """Centre on ``centroid`` (default: own centroid) and divide by ``scale``
        (default: own radius, so the result fits the unit sphere)."""
        if self.normalization is not None:
            raise ValueError("cloud is already normalized")
        c = self.centroid if centroid is None else np.asarray(centroid, dtype=np.float64)
        if scale is None:
            scale = float(np.linalg.norm(self.points - c, axis=1).max())
            if scale == 0.0:
                scale = 1.0
        norm = Normalization(c, scale)
        return PointCloud(norm.apply(self.points), norm)

    def denormalized(self) -> PointCloud:
        if self.normalization is None:
            return self
        return PointCloud(self.normalization.invert(self.points))

    def take(self, indices: ArrayLike) -> PointCloud:
        return PointCloud(self.points[np.asarray(indices, dtype=np.int64)], self.normalization)


def _check_finite(e: NDArray) -> None:
    if not np.all(np.isfinite(e)):
        raise ValueError(f"Euler angles must be finite, got {e}")


def euler_to_matrix(e: ArrayLike) -> NDArray[np.float64]:
    """Rotation matrix ``Rz(e3) Ry(e2) Rx(e1)`` for Euler angles in radians."""
    e = np.asarray(e, dtype=np.float64).reshape(3)
    _check_finite(e)
    c1, c2, c3 = np.cos(e)
    s1, s2, s3 = np.sin(e)
    return np.array(
        [
            [c3 * c2, c3 * s2 * s1 - s3 * c1, c3 * s2 * c1 + s3 * s1],
            [s3 * c2, s3 * s2 * s1 + c3 * c1, s3 * s2 * c1 - c3 * s1],
            [-s2, c2 * s1, c2 * c1],
        ]
    )


def euler_to_matrix_batch(e: ArrayLike) -> NDArray[np.float64]:
    """Vectorized :func:`euler_to_matrix` over an ``(n, 3)`` array."""
    e = np.asarray(e, dtype=np.float64).reshape(-1, 3)
    _check_finite(e)
    c = np.cos(e)
    s = np.sin(e)
    c1, c2, c3 = c[:, 0], c[:, 1], c[:, 2]
    s1, s2, s3 = s[:, 0], s[:, 1], s[:, 2]
    out = np.empty((e.shape[0], 3, 3))
    out[:, 0, 0] = c3 * c2
    out[:, 0, 1] = c3 * s2 * s1 - s3 * c1
    out[:, 0, 2] = c3 * s2 * c1 + s3 * s1
    out[:, 1, 0] = s3 * c2
    out[:, 1, 1] = s3 * s2 * s1 + c3 * c1
    out[:, 1, 2] = s3 * s2 * c1 - c3 * s1
    out[:, 2, 0] = -s2
    out[:, 2, 1] = c2 * s1
    out[:, 2, 2] = c2 * c1
    return out


def is_rotation(R: ArrayLike, tol: float = 1e-6) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def matrix_to_euler(R: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`euler_to_matrix`.

    At gimbal lock (``|cos e2| < 1e-9``) the first angle is set to zero and the
    third absorbs the remaining rotation about the collapsed axis.
    """
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R):
        raise ValueError("matrix is not a proper rotation (orthogonal, det=+1)")
    cos_e2 = np.hypot(R[0, 0], R[1, 0])
    e2 = np.arctan2(-R[2, 0], cos_e2)
    if cos_e2 < GIMBAL_TOL:
        e1 = 0.0
        e3 = np.arctan2(-R[0, 1], R[1, 1])
    else:
        e1 = np.arctan2(R[2, 1], R[2, 2])
        e3 = np.arctan2(R[1, 0], R[0, 0])
    return wrap_angle(np.array([e1, e2, e3]))


@dataclass(frozen=True, eq=False)
class RigidMotion:
    """A 6-DoF action ``[e, t]`` with its rotation matrix cached."""

    euler: NDArray[np.float64]
    translation: NDArray[np.float64]
    rotation: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        e = np.asarray(self.euler, dtype=np.float64).reshape(3)
        _check_finite(e)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"translation must be finite, got {t}")
        e = wrap_angle(e)
        object.__setattr__(self, "euler", _readonly(e))
        object.__setattr__(self, "translation", _readonly(t.copy()))
        object.__setattr__(self, "rotation", _readonly(euler_to_matrix(e)))

    @classmethod
    def identity(cls) -> RigidMotion:
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, a: ArrayLike) -> RigidMotion:
        a = np.asarray(a, dtype=np.float64).reshape(6)
        return cls(a[:3], a[3:])

    @classmethod
    def from_matrix(cls, R: ArrayLike, t: ArrayLike) -> RigidMotion:
        return cls(matrix_to_euler(R), t)

    def as_vector(self) -> NDArray[np.float64]:
        return np.concatenate([self.euler, self.translation])

    def as_homogeneous(self) -> NDArray[np.float64]:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def transform(self, points: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def __repr__(self) -> str:
        return f"RigidMotion(euler={np.round(self.euler, 6).tolist()}, translation={np.round(self.translation, 6).tolist()})"


def compose(outer: RigidMotion, inner: RigidMotion) -> RigidMotion:
    """Motion equivalent to applying ``inner`` first, then ``outer``."""
    R = outer.rotation @ inner.rotation
    t = outer.rotation @ inner.translation + outer.translation
    return RigidMotion.from_matrix(R, t)


def inverse(a: RigidMotion) -> RigidMotion:
    R = a.rotation.T
    return RigidMotion.from_matrix(R, -R @ a.translation)


@dataclass(frozen=True, eq=False)
class RegistrationState:
    """A source/target pair; neighbor indices are built on first use and cached."""

    source: PointCloud
    target: PointCloud

    @cached_property
    def source_index(self) -> NeighborIndex:
        return build_index(self.source)

    @cached_property
    def target_index(self) -> NeighborIndex:
        return build_index(self.target)

    @classmethod
    def from_points(cls, source: ArrayLike, target: ArrayLike) -> RegistrationState:
        return cls(PointCloud(source), PointCloud(target))


def apply_motion(s: RegistrationState, a: RigidMotion) -> RegistrationState:
    """State transition: move every source point by ``a``; the target is shared."""
    moved = PointCloud(a.transform(s.source.points), s.source.normalization)
    nxt = RegistrationState(moved, s.target)
    if "target_index" in s.__dict__:
        nxt.__dict__["target_index"] = s.target_index
    return nxt
