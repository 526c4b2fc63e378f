"""Alignment scores and transform errors."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cemreg.nn_index import NeighborIndex, build_index
from cemreg.se3 import PointCloud, RegistrationState, RigidMotion, apply_motion, wrap_angle


def _pts(cloud) -> NDArray[np.float64]:
    p = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("alignment metrics need non-empty (n, 3) point sets")
    return p


def closest_distances(
    transformed_source,
    target,
    source_index: Optional[NeighborIndex] = None,
    target_index: Optional[NeighborIndex] = None,
    upper_bound: float = np.inf,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Closest-point distances source->target and target->source.

    Indices are built on the fly when not supplied. Distances beyond
    ``upper_bound`` come back as ``inf``.
    """
    X = _pts(transformed_source)
    Y = _pts(target)
    if source_index is None:
        source_index = build_index(X)
    if target_index is None:
        target_index = build_index(Y)
    dx, _ = target_index.query(X, upper_bound)
    dy, _ = source_index.query(Y, upper_bound)
    return dx, dy


def inlier_weights(d: ArrayLike, epsilon: float) -> NDArray[np.float64]:
    """``1{d <= eps} * (1 - d / eps)`` elementwise."""
    d = np.asarray(d, dtype=np.float64)
    return np.where(d <= epsilon, 1.0 - d / epsilon, 0.0)


def _check_epsilon(epsilon: float) -> None:
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise ValueError(f"epsilon must be a positive finite number, got {epsilon}")


def d_mc(transformed_source, target, epsilon: float, source_index=None, target_index=None) -> float:
    """Maximum-consensus alignment error in [0, 2]; 0 means every closest pair coincides."""
    _check_epsilon(epsilon)
    dx, dy = closest_distances(transformed_source, target, source_index, target_index, epsilon)
    return 2.0 - inlier_weights(dx, epsilon).mean() - inlier_weights(dy, epsilon).mean()


def reward(s: RegistrationState, a: RigidMotion, epsilon: float) -> float:
    """Reward of executing ``a`` in ``s``: the negated maximum-consensus error of the next state."""
    nxt = apply_motion(s, a)
    return -d_mc(nxt.source, nxt.target, epsilon, nxt.source_index, nxt.target_index)


def chamfer(transformed_source, target, source_index=None, target_index=None) -> float:
    """Sum of the two mean closest-point distances (first power, not squared)."""
    dx, dy = closest_distances(transformed_source, target, source_index, target_index)
    return float(dx.mean() + dy.mean())


def geman_mcclure(x: ArrayLike, mu: float):
    """Scaled Geman-McClure penalty ``mu x^2 / (mu + x^2)``."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    x = np.asarray(x, dtype=np.float64)
    # x^2 overflows for huge x; the limit is mu
    with np.errstate(over="ignore", invalid="ignore"):
        x2 = x * x
        out = mu * x2 / (mu + x2)
    out = np.where(np.isinf(x2), mu, out)
    return float(out) if out.ndim == 0 else out


def robust_alignment_loss(transformed_source, target, mu: float, source_index=None, target_index=None) -> float:
    dx, dy = closest_distances(transformed_source, target, source_index, target_index)
    return float(np.mean(geman_mcclure(dx, mu)) + np.mean(geman_mcclure(dy, mu)))


@dataclass(frozen=True)
class TransformError:
    """RMSE/MAE over the three Euler components (degrees) and three translation components."""

    rmse_rotation_deg: float
    mae_rotation_deg: float
    rmse_translation: float
    mae_translation: float

    def as_dict(self) -> dict:
        return asdict(self)


def component_errors(pred: RigidMotion, truth: RigidMotion) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Signed per-component errors: shortest Euler differences in degrees, translation differences."""
    rot = np.degrees(wrap_angle(pred.euler - truth.euler))
    return rot, pred.translation - truth.translation


def rmse_mae(errors: ArrayLike) -> tuple[float, float]:
    e = np.abs(np.asarray(errors, dtype=np.float64)).ravel()
    return float(np.sqrt(np.mean(e * e))), float(np.mean(e))


def transform_error(pred: RigidMotion, truth: RigidMotion) -> TransformError:
    rot, trans = component_errors(pred, truth)
    rr, rm = rmse_mae(rot)
    tr, tm = rmse_mae(trans)
    return TransformError(rr, rm, tr, tm)


def rotation_angle_deg(pred: RigidMotion, truth: RigidMotion) -> float:
    """Geodesic angle of ``R_pred^T R_truth`` in degrees."""
    c = (np.trace(pred.rotation.T @ truth.rotation) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def alignment_summary(source: PointCloud, target: PointCloud, motion: RigidMotion, epsilon: float, mu: float) -> dict:
    """Final maximum-consensus error, Chamfer distance and robust loss after applying ``motion``."""
    moved = PointCloud(motion.transform(source.points))
    si = build_index(moved)
    ti = build_index(target)
    return {
        "d_mc": d_mc(moved, target, epsilon, si, ti),
        "chamfer": chamfer(moved, target, si, ti),
        "robust_loss": robust_alignment_loss(moved, target, mu, si, ti),
    }
