"""End-to-end registration driven by a :class:`RunConfig`.

With ``normalize`` on, both clouds are shifted by the source centroid and
divided by the source radius before the search, so ``epsilon`` and the
prior are in units of the source size; the motion found is mapped back to
input units. Using one shared similarity for both clouds keeps the relative
pose (and the translation the search must find) intact up to scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from cemreg import __version__
from cemreg.cem import CemTrace, cem_register
from cemreg.io import MotionRecord, RegistrationReport, RunConfig
from cemreg.metrics import alignment_summary, rotation_angle_deg, transform_error
from cemreg.priors import PriorResult, correspondence_prior, fixed_prior
from cemreg.se3 import Normalization, PointCloud, RegistrationState, RigidMotion, apply_motion, compose
from cemreg.solver import IcpConfig, default_features, icp


@dataclass
class Solution:
    motion: RigidMotion
    prior: Optional[PriorResult] = None
    trace: Optional[CemTrace] = None
    timings: dict = field(default_factory=dict)


def shared_normalization(source: PointCloud) -> Normalization:
    return Normalization(source.centroid, source.radius() or 1.0)


def to_input_units(m: RigidMotion, norm: Normalization) -> RigidMotion:
    """Map a motion between normalized clouds back to the original coordinates."""
    c = norm.centroid
    return RigidMotion(m.euler, c - m.rotation @ c + norm.scale * m.translation)


def build_prior(s: RegistrationState, cfg: RunConfig) -> PriorResult:
    p = cfg.prior
    if p.kind == "fixed_gaussian":
        return PriorResult(fixed_prior(p.mu0, p.sigma0, cfg.cem.sigma_floor), "fixed_gaussian")
    feats = partial(default_features, k=p.neighbors, sharpness=p.sharpness)
    return correspondence_prior(s, feats, p.sigma_scale, cfg.cem.sigma_floor)


def solve(s: RegistrationState, cfg: RunConfig) -> Solution:
    """Prior, search and optional ICP polish on a state already in working units."""
    t0 = time.perf_counter()
    prior = build_prior(s, cfg)
    t1 = time.perf_counter()
    motion, trace = cem_register(s, prior.distribution, cfg.cem_config())
    t2 = time.perf_counter()
    if cfg.final_icp:
        motion = compose(icp(apply_motion(s, motion), cfg.icp_config()).motion, motion)
    t3 = time.perf_counter()
    timings = {"prior_s": t1 - t0, "search_s": t2 - t1, "final_icp_s": t3 - t2}
    return Solution(motion, prior, trace, timings)


def _working_state(source: PointCloud, target: PointCloud, cfg: RunConfig):
    if not cfg.normalize:
        return RegistrationState(source, target), None
    norm = shared_normalization(source)
    return RegistrationState(PointCloud(norm.apply(source.points)), PointCloud(norm.apply(target.points))), norm


def registration_solver(cfg: RunConfig):
    """A ``state -> motion`` callable for the benchmark harness."""

    def run(s: RegistrationState) -> RigidMotion:
        work, norm = _working_state(s.source, s.target, cfg)
        m = solve(work, cfg).motion
        return m if norm is None else to_input_units(m, norm)

    return run


def _scales(cfg: RunConfig, norm: Optional[Normalization]) -> tuple[float, float]:
    # epsilon is a distance, the Geman-McClure mu a squared distance
    s = 1.0 if norm is None else norm.scale
    return cfg.cem.epsilon * s, cfg.robust_mu * s * s


def _truth_block(motion: RigidMotion, truth: Optional[RigidMotion]) -> Optional[dict]:
    if truth is None:
        return None
    out = transform_error(motion, truth).as_dict()
    out["geodesic_rotation_deg"] = rotation_angle_deg(motion, truth)
    out["truth"] = MotionRecord.of(truth).model_dump()
    return out


def register_pair(
    source: PointCloud,
    target: PointCloud,
    cfg: RunConfig,
    truth: Optional[RigidMotion] = None,
    inputs: Optional[dict] = None,
) -> RegistrationReport:
    """Register ``source`` onto ``target`` and describe the outcome."""
    start = time.perf_counter()
    work, norm = _working_state(source, target, cfg)
    sol = solve(work, cfg)
    motion = sol.motion if norm is None else to_input_units(sol.motion, norm)
    eps, mu = _scales(cfg, norm)
    align = alignment_summary(source, target, motion, eps, mu)
    timings = dict(sol.timings, total_s=time.perf_counter() - start)
    prior = sol.prior
    return RegistrationReport(
        kind="register",
        version=__version__,
        inputs=dict(inputs or {}, source_points=len(source), target_points=len(target)),
        motion=MotionRecord.of(motion),
        alignment=dict(align, epsilon=eps, robust_mu=mu),
        normalization=None if norm is None else {"centroid": norm.centroid.tolist(), "scale": norm.scale},
        prior={
            "kind": prior.kind,
            "fallback": prior.fallback,
            "residual_rms": prior.residual_rms,
            "mu": prior.distribution.mu.tolist(),
            "sigma": prior.distribution.sigma.tolist(),
        },
        trace=sol.trace.as_dict(),
        truth_error=_truth_block(motion, truth),
        timings=timings,
        config=cfg.echo(),
        seeds={"cem": cfg.cem.seed},
    )


def icp_pair(
    source: PointCloud,
    target: PointCloud,
    cfg: RunConfig,
    icp_cfg: IcpConfig,
    truth: Optional[RigidMotion] = None,
    inputs: Optional[dict] = None,
) -> RegistrationReport:
    """Plain point-to-point ICP from the identity, reported like a registration."""
    start = time.perf_counter()
    work, norm = _working_state(source, target, cfg)
    res = icp(work, icp_cfg)
    motion = res.motion if norm is None else to_input_units(res.motion, norm)
    eps, mu = _scales(cfg, norm)
    align = alignment_summary(source, target, motion, eps, mu)
    return RegistrationReport(
        kind="icp",
        version=__version__,
        inputs=dict(inputs or {}, source_points=len(source), target_points=len(target)),
        motion=MotionRecord.of(motion),
        alignment=dict(align, epsilon=eps, robust_mu=mu),
        normalization=None if norm is None else {"centroid": norm.centroid.tolist(), "scale": norm.scale},
        trace={
            "iterations": res.iterations,
            "final_mse": res.final_mse,
            "degenerate": res.degenerate,
            "mse_history": res.mse_history,
            "max_iterations": icp_cfg.max_iterations,
        },
        truth_error=_truth_block(motion, truth),
        timings={"total_s": time.perf_counter() - start},
        config=cfg.echo(),
        seeds={},
    )
