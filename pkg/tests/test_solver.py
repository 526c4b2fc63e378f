import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cemreg.bench import CaseSpec, generate_case
from cemreg.se3 import RegistrationState, RigidMotion
from cemreg.solver import (
    IcpConfig,
    default_features,
    icp,
    icp_many,
    kabsch_solve,
    local_covariance_features,
    matching_map,
    soft_correspondence,
)

seeds = st.integers(0, 2**32 - 1)


def random_motion(r, max_angle=np.pi):
    return RigidMotion(r.uniform(-max_angle, max_angle, 3) * [1, 0.45, 1], r.normal(size=3))


@given(seeds)
def test_kabsch_recovers_noiseless_motion(seed):
    r = np.random.default_rng(seed)
    truth = random_motion(r)
    P = r.normal(size=(int(r.integers(3, 200)), 3))
    fit = kabsch_solve(P, truth.transform(P))
    assert not fit.degenerate
    assert np.max(np.abs(fit.motion.rotation - truth.rotation)) < 1e-9
    assert np.max(np.abs(fit.motion.translation - truth.translation)) < 1e-9


def test_kabsch_identity_pairs(rng):
    P = rng.normal(size=(20, 3))
    fit = kabsch_solve(P, P)
    assert np.max(np.abs(fit.motion.rotation - np.eye(3))) < 1e-12
    assert np.max(np.abs(fit.motion.translation)) < 1e-12


def test_kabsch_mirrored_plane_gives_proper_rotation(rng):
    P = np.c_[rng.normal(size=(30, 2)), np.zeros(30)]
    Q = P * [1.0, -1.0, 1.0]  # mirror image across the xz plane
    R = kabsch_solve(P, Q).motion.rotation
    assert abs(np.linalg.det(R) - 1.0) < 1e-9
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9


def test_kabsch_flags_degenerate_input():
    line = np.outer(np.arange(5.0), [1.0, 0.0, 0.0])
    assert kabsch_solve(line, line + 1.0).degenerate
    assert kabsch_solve(np.eye(3)[:2], np.eye(3)[:2]).degenerate
    with pytest.raises(ValueError):
        kabsch_solve(np.eye(3), np.eye(3), [1.0, -1.0, 1.0])


@given(seeds)
def test_kabsch_output_is_a_rotation(seed):
    r = np.random.default_rng(seed)
    P, Q = r.normal(size=(8, 3)), r.normal(size=(8, 3))
    R = kabsch_solve(P, Q, r.uniform(0.1, 1.0, 8)).motion.rotation
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


@given(seeds)
def test_kabsch_beats_perturbed_motions(seed):
    r = np.random.default_rng(seed)
    P = r.normal(size=(10, 3))
    Q = random_motion(r).transform(P) + r.normal(scale=0.1, size=(10, 3))
    w = r.uniform(0.2, 1.0, 10)
    fit = kabsch_solve(P, Q, w).motion
    cost = lambda m: float((w * ((m.transform(P) - Q) ** 2).sum(axis=1)).sum())
    best = cost(fit)
    for _ in range(1000):
        trial = RigidMotion(fit.euler + r.normal(scale=0.05, size=3), fit.translation + r.normal(scale=0.05, size=3))
        assert best <= cost(trial) + 1e-12


def test_matching_map_saturates_on_identical_features():
    F = np.eye(4) * 60.0  # identical rows give a 3600 logit margin
    Y = np.arange(12.0).reshape(4, 3)
    assert np.max(np.abs(soft_correspondence(F, F, Y) - Y)) < 1e-6


def test_matching_map_uniform_and_shift_invariant(rng):
    Y = rng.normal(size=(7, 3))
    flat = soft_correspondence(np.ones((5, 2)), np.ones((7, 2)), Y)
    assert np.allclose(flat, Y.mean(axis=0), atol=1e-12)
    FX, FY = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    # an extra constant column adds the same value to every logit in a row
    FX2 = np.c_[FX, rng.normal(size=5)]
    FY2 = np.c_[FY, np.ones(7)]
    assert np.max(np.abs(soft_correspondence(FX, FY, Y) - soft_correspondence(FX2, FY2, Y))) < 1e-12


@given(seeds)
def test_matching_rows_sum_to_one_inside_target_box(seed):
    r = np.random.default_rng(seed)
    FX, FY = r.normal(size=(9, 4)) * 3, r.normal(size=(11, 4)) * 3
    Y = r.normal(size=(11, 3))
    M = matching_map(FX, FY)
    assert np.max(np.abs(M.sum(axis=1) - 1.0)) < 1e-12
    Yh = M @ Y
    assert np.all(Yh >= Y.min(axis=0) - 1e-12) and np.all(Yh <= Y.max(axis=0) + 1e-12)


def test_local_features_shape(rng):
    F = local_covariance_features(rng.normal(size=(40, 3)), k=16)
    assert F.shape == (40, 9)


def test_icp_on_aligned_clouds(rng):
    P = rng.normal(size=(300, 3))
    res = icp(RegistrationState.from_points(P, P), IcpConfig(10, 1e-9))
    assert np.max(np.abs(res.motion.rotation - np.eye(3))) < 1e-9
    assert np.max(np.abs(res.motion.translation)) < 1e-9
    assert res.final_mse <= 1e-18


def test_icp_recovers_small_offset():
    case = generate_case(CaseSpec.clean(seed=4))
    offset = RigidMotion(np.radians([5.0, 0.0, 0.0]), [0.05, 0.0, 0.0])
    src = offset.transform(case.target.points)
    res = icp(RegistrationState.from_points(src, case.target.points), IcpConfig(30, 1e-12))
    # the refinement must undo the offset
    err = res.motion.rotation @ offset.rotation
    angle = np.degrees(np.arccos(np.clip((np.trace(err) - 1) / 2, -1, 1)))
    t_err = res.motion.rotation @ offset.translation + res.motion.translation
    assert angle < 0.1
    assert np.max(np.abs(t_err)) < 1e-3


@given(seeds)
def test_icp_mse_never_increases(seed):
    r = np.random.default_rng(seed)
    P = r.normal(size=(int(r.integers(20, 200)), 3))
    Y = random_motion(r, 0.6).transform(P) + r.normal(scale=0.02, size=P.shape)
    res = icp(RegistrationState.from_points(P, Y), IcpConfig(25, 0.0))
    h = np.array(res.mse_history)
    assert np.all(np.diff(h) <= 1e-12)


def test_icp_batch_matches_sequential_and_threads(rng, monkeypatch):
    P = rng.normal(size=(150, 3))
    s = RegistrationState.from_points(P, RigidMotion([0.3, 0.1, -0.2], [0.1, 0, 0]).transform(P))
    Rs = np.stack([random_motion(rng, 0.5).rotation for _ in range(70)])
    ts = rng.normal(scale=0.2, size=(70, 3))
    cfg = IcpConfig(10, 1e-9)
    monkeypatch.setenv("CEMREG_THREADS", "1")
    batch = icp_many(P, s.target.points, s.target_index, Rs, ts, cfg)
    monkeypatch.setenv("CEMREG_THREADS", "4")
    threaded = icp_many(P, s.target.points, s.target_index, Rs, ts, cfg)
    for a, b in zip(batch, threaded):
        assert np.array_equal(a, b, equal_nan=True) if a.dtype.kind == "f" else np.array_equal(a, b)
    for c in (0, 33, 69):
        one = icp_many(P, s.target.points, s.target_index, Rs[c : c + 1], ts[c : c + 1], cfg)
        assert np.array_equal(one[0][0], batch[0][c]) and np.array_equal(one[1][0], batch[1][c])


def test_icp_config_validation():
    with pytest.raises(ValueError):
        IcpConfig(0)
    with pytest.raises(ValueError):
        IcpConfig(5, -1.0)


def test_default_features_identical_clouds_match_themselves(rng):
    P = rng.normal(size=(200, 3))
    s = RegistrationState.from_points(P, P)
    FX, FY = default_features(s)
    Yh = soft_correspondence(FX, FY, P)
    assert np.median(np.linalg.norm(Yh - P, axis=1)) < 1e-6
