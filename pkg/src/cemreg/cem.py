"""Cross-entropy search over rigid motions.

Each iteration samples a population of 6-vectors ``[e, t]`` from a diagonal
Gaussian, scores every candidate with the maximum-consensus reward (fused
with the reward reached after ICP refinement during the first iterations),
and refits the Gaussian to the candidates weighted by ``sparsemax(beta *
scores)`` or by uniform weights on the top-k.

With ``beta="auto"`` the scale is chosen afresh every iteration as the
smallest one whose sparsemax support is exactly the ``k`` best candidates
(see :func:`support_matched_scale`). A fixed ``beta`` keeps the candidates
within ``1/beta`` of the best score, which early on, when scores spread over
a whole unit, is often a single candidate and collapses the distribution.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cemreg._kernels import dmc_population
from cemreg._parallel import map_chunks
from cemreg.metrics import reward
from cemreg.se3 import (
    RegistrationState,
    RigidMotion,
    apply_motion,
    euler_to_matrix_batch,
    wrap_angle,
)
from cemreg.solver import IcpConfig, icp, icp_many

log = logging.getLogger(__name__)

UpdateMode = Literal["sparsemax", "hard_topk"]
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    """Diagonal Gaussian over ``[e1, e2, e3, t1, t2, t3]`` (radians, model units)."""

    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=np.float64).reshape(6).copy()
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(6).copy()
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("distribution parameters must be finite")
        if np.any(sigma < 0):
            raise ValueError("sigma must be non-negative")
        mu[:3] = wrap_angle(mu[:3])
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    def floored(self, floor: float) -> SamplingDistribution:
        return SamplingDistribution(self.mu, np.maximum(self.sigma, floor))

    def mean_motion(self) -> RigidMotion:
        return RigidMotion.from_vector(self.mu)


@dataclass(frozen=True)
class CemConfig:
    iterations: int = 15
    population: int = 1000
    future_iterations: int = 3
    alpha: float = 0.5
    epsilon: float = 0.1
    elite_count: Optional[int] = None
    update_mode: UpdateMode = "sparsemax"
    beta: Union[float, Literal["auto"]] = "auto"
    sigma_floor: float = 1e-4
    seed: int = 0
    icp: IcpConfig = field(default_factory=IcpConfig)

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if not 0 <= self.future_iterations <= self.iterations:
            raise ValueError("future_iterations must lie in [0, iterations]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 1 <= self.k <= self.population:
            raise ValueError("elite_count must lie in [1, population]")
        if self.update_mode not in ("sparsemax", "hard_topk"):
            raise ValueError(f"unknown update_mode {self.update_mode!r}")
        if self.beta != "auto" and not (isinstance(self.beta, (int, float)) and self.beta > 0):
            raise ValueError("beta must be a positive number or 'auto'")
        if not self.sigma_floor >= 0:
            raise ValueError("sigma_floor must be non-negative")

    @property
    def k(self) -> int:
        if self.elite_count is not None:
            return int(self.elite_count)
        return max(1, self.population // 10)


@dataclass(frozen=True)
class ScoredCandidate:
    action: RigidMotion
    current_reward: float
    future_reward: Optional[float]
    fused_score: float
    weight: float = 0.0


@dataclass
class IterationRecord:
    iteration: int
    used_future: bool
    best_score: float
    mean_score: float
    best_current_reward: float
    beta: Optional[float]
    support_size: int
    mu: list[float]
    sigma: list[float]


@dataclass
class CemTrace:
    beta: Union[float, str]
    update_mode: str
    records: list[IterationRecord] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def best_scores(self) -> list[float]:
        return [r.best_score for r in self.records]


class CemError(RuntimeError):
    """A search iteration failed; ``trace`` holds the iterations completed so far."""

    def __init__(self, message: str, trace: CemTrace):
        super().__init__(message)
        self.trace = trace


def sample_candidates(dist: SamplingDistribution, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    """Draw ``n`` candidates ``mu + noise * sigma`` as rows of an ``(n, 6)`` array.

    Noise is standard normal, drawn in row order; Euler components are wrapped.
    """
    noise = rng.standard_normal((int(n), 6))
    a = dist.mu + noise * dist.sigma
    a[:, :3] = wrap_angle(a[:, :3])
    return a


def sparsemax(q: ArrayLike) -> NDArray[np.float64]:
    """Euclidean projection of ``q`` onto the probability simplex."""
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.size < 1:
        raise ValueError("sparsemax needs at least one entry")
    if not np.all(np.isfinite(q)):
        raise ValueError("sparsemax input must be finite")
    # shifting by the max changes nothing in exact arithmetic but keeps the
    # cumulative sums small when q has been multiplied by a large scale
    q = q - q.max()
    z = np.sort(q)[::-1]
    cumsum = np.cumsum(z)
    ks = np.arange(1, q.size + 1)
    k = ks[1.0 + ks * z > cumsum][-1]
    tau = (cumsum[k - 1] - 1.0) / k
    return np.maximum(q - tau, 0.0)


def sparsemax_jacobian(q: ArrayLike) -> NDArray[np.float64]:
    """Jacobian of :func:`sparsemax` at ``q``: ``diag(s) - s s^T / |S|`` on the support ``S``."""
    p = sparsemax(q)
    s = (p > 0).astype(np.float64)
    return np.diag(s) - np.outer(s, s) / s.sum()


def support_matched_scale(scores: ArrayLike, k: int) -> float:
    """Smallest ``beta`` for which ``sparsemax(beta * scores)`` keeps exactly the ``k`` best scores.

    With sorted scores ``s_1 >= s_2 >= ...`` this is ``1 / sum_{j<=k} (s_j - s_{k+1})``.
    The resulting weights are ``beta * (s_j - s_{k+1})`` for the top ``k``, so
    they fall linearly to zero at the first excluded score. Ties at the
    boundary make an exact-``k`` support impossible; they are kept together.
    When every candidate is kept (``k >= n``) or the top scores are all
    equal, 1.0 is returned.
    """
    z = np.sort(np.asarray(scores, dtype=np.float64).ravel())[::-1]
    if not 1 <= k:
        raise ValueError("k must be positive")
    if k >= z.size:
        return 1.0
    gap = float(np.sum(z[:k] - z[k]))
    return 1.0 / gap if gap > 0.0 else 1.0


def _deviations(actions: NDArray[np.float64], center: NDArray[np.float64]) -> NDArray[np.float64]:
    # Euler parts are taken as the representative within pi of the centre
    d = actions - center
    d[:, :3] = wrap_angle(d[:, :3])
    return d


def _finish(center, mean_dev, var, floor) -> SamplingDistribution:
    mu = center + mean_dev
    return SamplingDistribution(mu, np.maximum(np.sqrt(var), floor))


def weighted_update(
    actions: ArrayLike, weights: ArrayLike, prev_mu: ArrayLike, sigma_floor: float = 0.0
) -> SamplingDistribution:
    """Refit the Gaussian as the ``weights``-weighted mean and variance of ``actions``."""
    A = np.asarray(actions, dtype=np.float64).reshape(-1, 6)
    p = np.asarray(weights, dtype=np.float64).ravel()
    if p.shape[0] != A.shape[0]:
        raise ValueError("one weight per candidate required")
    if not np.all(np.isfinite(p)) or np.any(p < -SIMPLEX_TOL) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError("weights must lie on the probability simplex")
    center = np.asarray(prev_mu, dtype=np.float64).reshape(6)
    d = _deviations(A, center)
    mean_dev = p @ d
    var = p @ (d - mean_dev) ** 2
    return _finish(center, mean_dev, var, sigma_floor)


def top_k_indices(scores: ArrayLike, k: int) -> NDArray[np.int64]:
    """Indices of the ``k`` highest scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:k]


def hard_topk_update(
    actions: ArrayLike, scores: ArrayLike, k: int, prev_mu: ArrayLike, sigma_floor: float = 0.0
) -> SamplingDistribution:
    """Refit the Gaussian to the mean and (biased) variance of the ``k`` best candidates."""
    A = np.asarray(actions, dtype=np.float64).reshape(-1, 6)
    if not 1 <= k <= A.shape[0]:
        raise ValueError("k must lie in [1, population size]")
    center = np.asarray(prev_mu, dtype=np.float64).reshape(6)
    d = _deviations(A[top_k_indices(scores, k)], center)
    mean_dev = d.sum(axis=0) / k
    var = ((d - mean_dev) ** 2).sum(axis=0) / k
    return _finish(center, mean_dev, var, sigma_floor)


def topk_weights(scores: ArrayLike, k: int) -> NDArray[np.float64]:
    scores = np.asarray(scores, dtype=np.float64)
    p = np.zeros(scores.size)
    p[top_k_indices(scores, k)] = 1.0 / k
    return p


def fused_score(s: RegistrationState, a: RigidMotion, cfg: CemConfig, use_future: bool) -> ScoredCandidate:
    """Score one candidate: its reward, optionally fused with the reward after ICP from the next state."""
    current = reward(s, a, cfg.epsilon)
    if not use_future:
        return ScoredCandidate(a, current, None, current)
    nxt = apply_motion(s, a)
    refined = icp(nxt, cfg.icp)
    future = reward(nxt, refined.motion, cfg.epsilon)
    return ScoredCandidate(a, current, future, cfg.alpha * current + (1.0 - cfg.alpha) * future)


def population_dmc(s: RegistrationState, rotations: NDArray, translations: NDArray, epsilon: float) -> NDArray[np.float64]:
    """Maximum-consensus error of the source moved by each pose, in candidate order."""
    X = s.source.points
    Y = s.target.points
    src = s.source_index.arrays
    tgt = s.target_index.arrays
    Rs = np.ascontiguousarray(rotations)
    ts = np.ascontiguousarray(translations)
    parts = map_chunks(lambda lo, hi: dmc_population(X, Y, Rs[lo:hi], ts[lo:hi], float(epsilon), src, tgt), Rs.shape[0])
    return np.concatenate(parts)


def score_population(s: RegistrationState, actions: ArrayLike, cfg: CemConfig, use_future: bool):
    """Current rewards, future rewards (or None) and fused scores for rows of ``actions``."""
    A = np.asarray(actions, dtype=np.float64).reshape(-1, 6)
    Rs = euler_to_matrix_batch(A[:, :3])
    ts = np.ascontiguousarray(A[:, 3:])
    current = -population_dmc(s, Rs, ts, cfg.epsilon)
    if not use_future:
        return current, None, current
    R_icp, t_icp, *_ = icp_many(s.source.points, s.target.points, s.target_index, Rs, ts, cfg.icp)
    future = -population_dmc(s, R_icp, t_icp, cfg.epsilon)
    return current, future, cfg.alpha * current + (1.0 - cfg.alpha) * future


def cem_register(
    s: RegistrationState, prior: SamplingDistribution, cfg: CemConfig = CemConfig()
) -> tuple[RigidMotion, CemTrace]:
    """Search for the motion aligning ``s.source`` to ``s.target``.

    Returns the mean of the final sampling distribution as a motion, and the
    per-iteration trace. Failures raise :class:`CemError` carrying the partial
    trace.
    """
    rng = np.random.default_rng(cfg.seed)
    trace = CemTrace(beta=cfg.beta, update_mode=cfg.update_mode)
    beta = None
    dist = prior
    for it in range(cfg.iterations):
        try:
            actions = sample_candidates(dist, cfg.population, rng)
            use_future = it < cfg.future_iterations
            current, _, scores = score_population(s, actions, cfg, use_future)
            if cfg.update_mode == "sparsemax":
                beta = support_matched_scale(scores, cfg.k) if cfg.beta == "auto" else float(cfg.beta)
                weights = sparsemax(beta * scores)
                support = int(np.count_nonzero(weights))
                dist = weighted_update(actions, weights, dist.mu, cfg.sigma_floor)
            else:
                support = cfg.k
                dist = hard_topk_update(actions, scores, cfg.k, dist.mu, cfg.sigma_floor)
        except Exception as exc:
            raise CemError(f"iteration {it} failed: {exc}", trace) from exc
        trace.records.append(
            IterationRecord(
                iteration=it,
                used_future=use_future,
                best_score=float(scores.max()),
                mean_score=float(scores.mean()),
                best_current_reward=float(current.max()),
                beta=beta,
                support_size=support,
                mu=dist.mu.tolist(),
                sigma=dist.sigma.tolist(),
            )
        )
        log.debug("iter %d best %.6f support %d sigma %s", it, scores.max(), support, np.round(dist.sigma, 5))
    return dist.mean_motion(), trace
