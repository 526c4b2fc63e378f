"""Synthetic registration cases and benchmark aggregation.

A case draws a base cloud, a ground-truth motion with Euler components and
translation components sampled uniformly per component, moves the base
cloud by it to get the target, optionally keeps a farthest-point subset of
each cloud (independent random start points), and optionally jitters both
with clipped Gaussian noise.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from cemreg.cem import CemConfig, cem_register
from cemreg.metrics import component_errors, rmse_mae, rotation_angle_deg, transform_error
from cemreg.priors import correspondence_prior, standard_prior
from cemreg.se3 import PointCloud, RegistrationState, RigidMotion
from cemreg.solver import IcpConfig, icp


@dataclass(frozen=True)
class CaseSpec:
    num_points: int = 1024
    rotation_range_deg: tuple[float, float] = (0.0, 45.0)
    translation_range: tuple[float, float] = (-0.5, 0.5)
    keep_fraction: float = 0.75
    noise_sigma: float = 0.01
    noise_clip: float = 0.05
    seed: int = 0
    shape: str = "random_blob"

    def __post_init__(self) -> None:
        if self.num_points < 3:
            raise ValueError("num_points must be >= 3")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")
        if self.noise_sigma < 0 or self.noise_clip < 0:
            raise ValueError("noise parameters must be non-negative")
        for name in ("rotation_range_deg", "translation_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be [lo, hi] with lo <= hi")

    @classmethod
    def clean(cls, **kw) -> CaseSpec:
        """Full overlap, no noise."""
        return cls(keep_fraction=1.0, noise_sigma=0.0, **kw)


@dataclass(frozen=True)
class Case:
    source: PointCloud
    target: PointCloud
    truth: RigidMotion

    def __iter__(self):
        return iter((self.source, self.target, self.truth))


def random_blob(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    """Union of 3-6 anisotropic Gaussian clusters, centred and scaled to unit radius."""
    k = int(rng.integers(3, 7))
    centers = rng.uniform(-1.0, 1.0, size=(k, 3))
    shares = rng.dirichlet(np.full(k, 2.0))
    counts = np.maximum(1, np.floor(shares * n).astype(int))
    counts[np.argmax(counts)] += n - counts.sum()
    parts = []
    for c, m in zip(centers, counts):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        scales = rng.uniform(0.05, 0.35, size=3)
        parts.append(c + (rng.normal(size=(m, 3)) * scales) @ q.T)
    pts = np.vstack(parts)
    pts -= pts.mean(axis=0)
    return pts / np.linalg.norm(pts, axis=1).max()


def fps_indices(points: ArrayLike, m: int, rng: np.random.Generator) -> NDArray[np.int64]:
    """Greedy farthest-point selection of ``m`` indices from a random start point."""
    P = np.asarray(getattr(points, "points", points), dtype=np.float64)
    n = P.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"cannot select {m} of {n} points")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = rng.integers(n)
    mind = ((P - P[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, m):
        chosen[i] = int(np.argmax(mind))
        mind = np.minimum(mind, ((P - P[chosen[i]]) ** 2).sum(axis=1))
    return chosen


def fps(cloud: PointCloud, m: int, seed) -> PointCloud:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return cloud.take(fps_indices(cloud, m, rng))


def clipped_noise(rng: np.random.Generator, shape, sigma: float, clip: float) -> NDArray[np.float64]:
    return np.clip(rng.normal(0.0, sigma, size=shape), -clip, clip)


def base_cloud(spec: CaseSpec, rng: np.random.Generator) -> NDArray[np.float64]:
    if spec.shape == "random_blob":
        return random_blob(spec.num_points, rng)
    from cemreg.io import load_cloud

    pts = load_cloud(spec.shape).points
    pts = pts - pts.mean(axis=0)
    pts = pts / (np.linalg.norm(pts, axis=1).max() or 1.0)
    if pts.shape[0] > spec.num_points:
        pts = pts[np.sort(fps_indices(pts, spec.num_points, rng))]
    return pts


def generate_case(spec: CaseSpec) -> Case:
    """Deterministic synthetic pair for ``spec``; ``truth`` maps the source onto the target."""
    rng = np.random.default_rng(spec.seed)
    base = base_cloud(spec, rng)
    lo, hi = np.radians(spec.rotation_range_deg)
    euler = rng.uniform(lo, hi, size=3)
    trans = rng.uniform(*spec.translation_range, size=3)
    truth = RigidMotion(euler, trans)
    src = base
    tgt = truth.transform(base)
    if spec.keep_fraction < 1.0:
        m = max(3, int(round(spec.keep_fraction * base.shape[0])))
        src = src[fps_indices(src, m, rng)]
        tgt = tgt[fps_indices(tgt, m, rng)]
    if spec.noise_sigma > 0:
        src = src + clipped_noise(rng, src.shape, spec.noise_sigma, spec.noise_clip)
        tgt = tgt + clipped_noise(rng, tgt.shape, spec.noise_sigma, spec.noise_clip)
    return Case(PointCloud(src), PointCloud(tgt), truth)


def case_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


@dataclass
class CaseRecord:
    index: int
    seed: int
    truth: list[float]
    predicted: Optional[list[float]] = None
    rotation_errors_deg: Optional[list[float]] = None
    translation_errors: Optional[list[float]] = None
    rmse_rotation_deg: Optional[float] = None
    mae_rotation_deg: Optional[float] = None
    rmse_translation: Optional[float] = None
    mae_translation: Optional[float] = None
    geodesic_rotation_deg: Optional[float] = None
    runtime_s: float = 0.0
    error: Optional[str] = None


@dataclass
class BenchReport:
    cases: list[CaseRecord]
    aggregate: dict
    config: dict
    seeds: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


def aggregate_records(records: Sequence[CaseRecord]) -> dict:
    """Pooled RMSE/MAE over every component of every successful case, plus per-case summaries."""
    ok = [r for r in records if r.error is None]
    out: dict = {"cases": len(records), "failed": len(records) - len(ok)}
    if not ok:
        return out
    rot = np.array([r.rotation_errors_deg for r in ok])
    trans = np.array([r.translation_errors for r in ok])
    out["rmse_rotation_deg"], out["mae_rotation_deg"] = rmse_mae(rot)
    out["rmse_translation"], out["mae_translation"] = rmse_mae(trans)
    out["mean_case_rmse_rotation_deg"] = float(np.mean([r.rmse_rotation_deg for r in ok]))
    out["mean_case_rmse_translation"] = float(np.mean([r.rmse_translation for r in ok]))
    out["median_case_mae_rotation_deg"] = float(np.median([r.mae_rotation_deg for r in ok]))
    out["median_geodesic_rotation_deg"] = float(np.median([r.geodesic_rotation_deg for r in ok]))
    return out


Solver = Callable[[RegistrationState], RigidMotion]


def cem_solver(cfg: CemConfig, prior: str = "fixed_gaussian", final_icp: bool = False) -> Solver:
    """A solver running the search from the named prior, optionally polishing with ICP."""

    def solve(s: RegistrationState) -> RigidMotion:
        if prior == "correspondence_svd":
            dist = correspondence_prior(s, sigma_floor=cfg.sigma_floor).distribution
        elif prior == "fixed_gaussian":
            dist = standard_prior(cfg.sigma_floor)
        else:
            raise ValueError(f"unknown prior {prior!r}")
        motion, _ = cem_register(s, dist, cfg)
        if final_icp:
            from cemreg.se3 import apply_motion, compose

            motion = compose(icp(apply_motion(s, motion), cfg.icp).motion, motion)
        return motion

    return solve


def icp_solver(cfg: IcpConfig = IcpConfig(max_iterations=50, mse_tolerance=1e-12)) -> Solver:
    return lambda s: icp(s, cfg).motion


def run_case(index: int, spec: CaseSpec, solver: Solver) -> CaseRecord:
    case = generate_case(spec)
    rec = CaseRecord(index=index, seed=spec.seed, truth=case.truth.as_vector().tolist())
    start = time.perf_counter()
    try:
        pred = solver(RegistrationState(case.source, case.target))
    except Exception as exc:  # recorded per case; the run continues
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.runtime_s = time.perf_counter() - start
        return rec
    rec.runtime_s = time.perf_counter() - start
    rot, trans = component_errors(pred, case.truth)
    err = transform_error(pred, case.truth)
    rec.predicted = pred.as_vector().tolist()
    rec.rotation_errors_deg = rot.tolist()
    rec.translation_errors = trans.tolist()
    rec.rmse_rotation_deg = err.rmse_rotation_deg
    rec.mae_rotation_deg = err.mae_rotation_deg
    rec.rmse_translation = err.rmse_translation
    rec.mae_translation = err.mae_translation
    rec.geodesic_rotation_deg = rotation_angle_deg(pred, case.truth)
    return rec


def run_benchmark(specs: Sequence[CaseSpec], solver: Solver, config: Optional[dict] = None) -> BenchReport:
    """Run every case in order and aggregate; failing cases are recorded, not raised."""
    if not specs:
        raise ValueError("run_benchmark needs at least one case")
    records = [run_case(i, spec, solver) for i, spec in enumerate(specs)]
    return BenchReport(records, aggregate_records(records), config or {}, [s.seed for s in specs])


def write_case(case: Case, directory: Path, stem: str) -> tuple[Path, Path]:
    """Write a case as two ASCII PLY files; the target carries the ground truth in a header comment."""
    from cemreg.io import save_ply

    directory.mkdir(parents=True, exist_ok=True)
    src = directory / f"{stem}_source.ply"
    tgt = directory / f"{stem}_target.ply"
    save_ply(case.source, src)
    save_ply(case.target, tgt, truth=case.truth)
    return src, tgt
