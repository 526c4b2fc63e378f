"""Initial sampling distributions for the search."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike

from cemreg.cem import SamplingDistribution
from cemreg.se3 import RegistrationState
from cemreg.solver import FeatureFn, default_features, kabsch_solve, soft_correspondence

log = logging.getLogger(__name__)

DEFAULT_SIGMA_FLOOR = 1e-4


@dataclass(frozen=True)
class PriorResult:
    distribution: SamplingDistribution
    kind: str
    fallback: bool = False
    residual_rms: Optional[float] = None


def fixed_prior(mu0: ArrayLike, sigma0: ArrayLike, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> SamplingDistribution:
    """A fixed Gaussian ``N(mu0, sigma0^2)`` with ``sigma0`` raised to ``sigma_floor``."""
    sigma0 = np.asarray(sigma0, dtype=np.float64).reshape(6)
    if np.any(sigma0 < 0):
        raise ValueError("sigma0 must be non-negative")
    return SamplingDistribution(mu0, np.maximum(sigma0, sigma_floor))


def standard_prior(sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> SamplingDistribution:
    """The uninformed ``N(0, I)`` prior."""
    return fixed_prior(np.zeros(6), np.ones(6), sigma_floor)


def correspondence_prior(
    s: RegistrationState,
    feature_fn: FeatureFn = default_features,
    sigma_scale: Sequence[float] = (1.5, 1.5),
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> PriorResult:
    """Mean from a rigid fit to soft feature correspondences; spread from the fit residual.

    Every source point is matched to a softmax-weighted average of the target
    points; the rigid fit to those pairs gives the mean. The rotational
    spread is ``sigma_scale[0] * rms / radius`` (radians) and the
    translational spread ``sigma_scale[1] * rms``, where ``rms`` is the fit
    residual and ``radius`` the source radius. A degenerate fit falls back to
    ``N(0, I)``.
    """
    if len(s.source) < 3 or len(s.target) < 3:
        return _fallback("fewer than 3 points", sigma_floor)
    FX, FY = feature_fn(s)
    matched = soft_correspondence(FX, FY, s.target)
    fit = kabsch_solve(s.source.points, matched)
    if fit.degenerate or not np.isfinite(fit.rms):
        return _fallback("degenerate correspondence fit", sigma_floor)
    r = s.source.radius() or 1.0
    rot = sigma_scale[0] * fit.rms / r
    trans = sigma_scale[1] * fit.rms
    sigma = np.array([rot, rot, rot, trans, trans, trans])
    return PriorResult(fixed_prior(fit.motion.as_vector(), sigma, sigma_floor), "correspondence_svd", False, fit.rms)


def _fallback(reason: str, sigma_floor: float) -> PriorResult:
    log.warning("correspondence prior unavailable (%s); using N(0, I)", reason)
    return PriorResult(standard_prior(sigma_floor), "fixed_gaussian", True)
