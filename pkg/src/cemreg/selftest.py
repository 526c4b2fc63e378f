"""Seeded invariant checks runnable from the command line.

Each suite returns ``(passed, total)``. The oracles here are deliberately
naive: brute-force support enumeration for sparsemax, central differences
for its Jacobian, and known motions for the rigid fit.
"""

from __future__ import annotations

from itertools import combinations
from typing import Callable

import numpy as np

from cemreg.cem import sparsemax, sparsemax_jacobian
from cemreg.metrics import chamfer, closest_distances, d_mc
from cemreg.se3 import PointCloud, RigidMotion
from cemreg.solver import kabsch_solve


def sparsemax_bruteforce(z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the simplex by trying every support set.

    A support ``S`` is valid when ``tau = (sum_S z - 1) / |S|`` leaves every
    member strictly above it and every outsider at or below it.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    for size in range(1, n + 1):
        for S in combinations(range(n), size):
            idx = list(S)
            tau = (z[idx].sum() - 1.0) / size
            inside = z[idx] > tau
            outside = np.delete(z, idx) <= tau
            if inside.all() and outside.all():
                p = np.zeros(n)
                p[idx] = z[idx] - tau
                return p
    raise AssertionError("no valid support found")


def lemma1_suite(cases: int = 100, seed: int = 0, tol: float = 1e-9) -> tuple[int, int]:
    """With epsilon just above the largest closest-point distance, D^mc equals Chamfer / epsilon."""
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(cases):
        X = PointCloud(rng.normal(size=(int(rng.integers(64, 513)), 3)))
        Y = PointCloud(rng.normal(size=(int(rng.integers(64, 513)), 3)) + rng.normal(scale=0.3, size=3))
        dx, dy = closest_distances(X, Y)
        eps = 1.01 * max(dx.max(), dy.max())
        a = d_mc(X, Y, eps)
        b = chamfer(X, Y) / eps
        ok += bool(abs(a - b) <= tol * max(abs(b), 1e-300))
    return ok, cases


def sparsemax_suite(cases: int = 500, seed: int = 1) -> tuple[int, int]:
    """Closed form vs support enumeration (1e-10), simplex (1e-12), shift invariance (1e-12)."""
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(cases):
        n = int(rng.integers(2, 9))
        z = rng.normal(scale=rng.choice([0.1, 1.0, 5.0]), size=n)
        p = sparsemax(z)
        good = np.max(np.abs(p - sparsemax_bruteforce(z))) <= 1e-10
        good &= abs(p.sum() - 1.0) <= 1e-12 and p.min() >= -1e-12
        good &= np.max(np.abs(sparsemax(z + rng.normal(scale=10.0)) - p)) <= 1e-12
        ok += bool(good)
    return ok, cases


def _support_stable(z: np.ndarray, margin: float) -> bool:
    # no coordinate within ``margin`` of the threshold, so small steps keep the support
    p = sparsemax(z)
    S = p > 0
    tau = (z[S].sum() - 1.0) / S.sum()
    return np.min(np.abs(z - tau)) > margin


def jacobian_suite(cases: int = 100, seed: int = 2, h: float = 1e-6, tol: float = 1e-5) -> tuple[int, int]:
    """Closed-form Jacobian vs central differences at support-stable points."""
    rng = np.random.default_rng(seed)
    ok = 0
    done = 0
    while done < cases:
        z = rng.normal(size=int(rng.integers(2, 9)))
        if not _support_stable(z, 1e-3):
            continue
        J = sparsemax_jacobian(z)
        fd = np.empty_like(J)
        for j in range(z.size):
            e = np.zeros(z.size)
            e[j] = h
            fd[:, j] = (sparsemax(z + e) - sparsemax(z - e)) / (2 * h)
        ok += bool(np.max(np.abs(J - fd)) <= tol)
        done += 1
    return ok, cases


def kabsch_suite(cases: int = 20, seed: int = 3, tol: float = 1e-9) -> tuple[int, int]:
    """Noiseless correspondences recover the generating motion."""
    rng = np.random.default_rng(seed)
    ok = 0
    for _ in range(cases):
        truth = RigidMotion(rng.uniform(-np.pi, np.pi, 3) * [1, 0.45, 1], rng.normal(size=3))
        P = rng.normal(size=(int(rng.integers(10, 200)), 3))
        fit = kabsch_solve(P, truth.transform(P))
        err = max(np.max(np.abs(fit.motion.rotation - truth.rotation)), np.max(np.abs(fit.motion.translation - truth.translation)))
        ok += bool(not fit.degenerate and err <= tol)
    return ok, cases


SUITES: dict[str, Callable[[], tuple[int, int]]] = {
    "lemma1": lemma1_suite,
    "sparsemax": sparsemax_suite,
    "jacobian": jacobian_suite,
    "kabsch": kabsch_suite,
}
