"""Closed-form rigid fits, soft feature correspondences and point-to-point ICP."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from cemreg._kernels import icp_population, kabsch_core
from cemreg._parallel import map_chunks
from cemreg.nn_index import NeighborIndex
from cemreg.se3 import RegistrationState, RigidMotion

FeatureFn = Callable[[RegistrationState], tuple[NDArray[np.float64], NDArray[np.float64]]]


@dataclass(frozen=True)
class KabschResult:
    motion: RigidMotion
    degenerate: bool
    rms: float


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 10
    mse_tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.mse_tolerance >= 0:
            raise ValueError("mse_tolerance must be >= 0")


@dataclass(frozen=True)
class IcpResult:
    motion: RigidMotion
    final_mse: float
    iterations: int
    degenerate: bool
    mse_history: list[float] = field(default_factory=list)


def kabsch_solve(source: ArrayLike, matched: ArrayLike, weights: Optional[ArrayLike] = None) -> KabschResult:
    """Weighted least-squares rigid motion taking ``source[i]`` onto ``matched[i]``.

    Reflections are corrected so the rotation is proper. Degenerate input
    (fewer than three positive weights, collinear points) still yields a
    best-effort motion, with ``degenerate`` set.
    """
    P = np.ascontiguousarray(np.asarray(source, dtype=np.float64).reshape(-1, 3))
    Q = np.ascontiguousarray(np.asarray(matched, dtype=np.float64).reshape(-1, 3))
    if P.shape != Q.shape:
        raise ValueError(f"source and matched differ in shape: {P.shape} vs {Q.shape}")
    w = np.ones(P.shape[0]) if weights is None else np.ascontiguousarray(np.asarray(weights, dtype=np.float64))
    if w.shape != (P.shape[0],):
        raise ValueError("weights must have one entry per pair")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q)) and np.all(np.isfinite(w))):
        raise ValueError("correspondences and weights must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    R, t, degenerate = kabsch_core(P, Q, w)
    motion = RigidMotion.from_matrix(R, t)
    resid = P @ R.T + t - Q
    wsum = w.sum()
    rms = float(np.sqrt((w * (resid**2).sum(axis=1)).sum() / wsum)) if wsum > 0 else float("nan")
    return KabschResult(motion, bool(degenerate), rms)


def matching_map(features_source: ArrayLike, features_target: ArrayLike) -> NDArray[np.float64]:
    """Row-wise softmax of the feature inner products; rows index source points."""
    FX = np.asarray(features_source, dtype=np.float64)
    FY = np.asarray(features_target, dtype=np.float64)
    if FX.ndim != 2 or FY.ndim != 2 or FX.shape[1] != FY.shape[1] or FX.shape[1] < 1:
        raise ValueError("feature matrices must be (N, P) and (M, P) with P >= 1")
    if not (np.all(np.isfinite(FX)) and np.all(np.isfinite(FY))):
        raise ValueError("features must be finite")
    logits = FX @ FY.T
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits


def soft_correspondence(features_source: ArrayLike, features_target: ArrayLike, target) -> NDArray[np.float64]:
    """Soft "matching" point for every source point: a softmax-weighted average of the target."""
    Y = np.asarray(getattr(target, "points", target), dtype=np.float64)
    M = matching_map(features_source, features_target)
    if M.shape[1] != Y.shape[0]:
        raise ValueError("target features and target points differ in count")
    return M @ Y


def local_covariance_features(points: ArrayLike, k: int = 16) -> NDArray[np.float64]:
    """Coordinates plus the six distinct entries of each point's k-NN covariance."""
    P = np.asarray(points, dtype=np.float64)
    k = min(k, P.shape[0])
    _, nbr = cKDTree(P).query(P, k=k)
    nbr = nbr.reshape(P.shape[0], k)
    local = P[nbr] - P[nbr].mean(axis=1, keepdims=True)
    C = np.einsum("nki,nkj->nij", local, local) / k
    iu = np.triu_indices(3)
    return np.hstack([P, C[:, iu[0], iu[1]]])


def default_features(state: RegistrationState, k: int = 16, sharpness: float = 200.0):
    """Default hand-crafted features for both clouds.

    Columns are standardized jointly over both clouds. The embedding is
    arranged so that the inner product between a source row and a target row
    equals ``-g/2 * |f_x - f_y|^2`` up to a per-source-row constant, which the
    softmax ignores. The gain ``g`` is set so that a point's nearest feature
    neighbor in the target typically sits ``sharpness`` logits below an exact
    feature match.
    """
    fx = local_covariance_features(state.source.points, k)
    fy = local_covariance_features(state.target.points, k)
    both = np.vstack([fx, fy])
    mean = both.mean(axis=0)
    std = both.std(axis=0)
    std[std == 0.0] = 1.0
    fx = (fx - mean) / std
    fy = (fy - mean) / std
    sample = fy[np.linspace(0, fy.shape[0] - 1, min(fy.shape[0], 256)).astype(np.int64)]
    d2 = ((sample[:, None, :] - fy[None, :, :]) ** 2).sum(axis=2)
    d2[d2 == 0.0] = np.inf
    nn = d2.min(axis=1)
    nn = nn[np.isfinite(nn)]
    scale = float(np.median(nn)) if nn.size else 1.0
    gain = 2.0 * sharpness / scale
    FX = np.hstack([np.sqrt(gain) * fx, np.ones((fx.shape[0], 1))])
    FY = np.hstack([np.sqrt(gain) * fy, -0.5 * gain * (fy**2).sum(axis=1, keepdims=True)])
    return FX, FY


def icp_many(
    source_points: ArrayLike,
    target_points: ArrayLike,
    target_index: NeighborIndex,
    init_rotations: ArrayLike,
    init_translations: ArrayLike,
    cfg: IcpConfig,
):
    """ICP from many initial poses of the same source; candidates are independent.

    Returns ``(R, t, mse, iterations, history, degenerate)`` arrays in input order.
    """
    X = np.ascontiguousarray(np.asarray(source_points, dtype=np.float64))
    Y = np.ascontiguousarray(np.asarray(target_points, dtype=np.float64))
    Rs = np.ascontiguousarray(np.asarray(init_rotations, dtype=np.float64).reshape(-1, 3, 3))
    ts = np.ascontiguousarray(np.asarray(init_translations, dtype=np.float64).reshape(-1, 3))
    tgt = target_index.arrays
    parts = map_chunks(
        lambda lo, hi: icp_population(X, Y, Rs[lo:hi], ts[lo:hi], int(cfg.max_iterations), float(cfg.mse_tolerance), tgt),
        Rs.shape[0],
    )
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(6))


def icp(s: RegistrationState, cfg: IcpConfig = IcpConfig()) -> IcpResult:
    """Refine the current source pose against the target with point-to-point ICP.

    The returned motion is relative to the input state.
    """
    if len(s.source) < 3 or len(s.target) < 3:
        raise ValueError("ICP needs at least 3 points in each cloud")
    R, t, mse, iters, hist, degen = icp_many(
        s.source.points, s.target.points, s.target_index, np.eye(3)[None], np.zeros((1, 3)), cfg
    )
    h = hist[0][: iters[0]]
    return IcpResult(
        motion=RigidMotion.from_matrix(R[0], t[0]),
        final_mse=float(mse[0]),
        iterations=int(iters[0]),
        degenerate=bool(degen[0]),
        mse_history=[float(v) for v in h],
    )
