import numpy as np
import pytest

from cemreg.bench import (
    CaseRecord,
    CaseSpec,
    aggregate_records,
    case_seeds,
    cem_solver,
    fps_indices,
    generate_case,
    run_benchmark,
    run_case,
)
from cemreg.cem import CemConfig
from cemreg.metrics import reward
from cemreg.se3 import RegistrationState, RigidMotion


def test_fps_selects_everything_or_the_start(rng):
    P = rng.normal(size=(25, 3))
    assert sorted(fps_indices(P, 25, np.random.default_rng(1))) == list(range(25))
    one = fps_indices(P, 1, np.random.default_rng(1))
    assert one.tolist() == [np.random.default_rng(1).integers(25)]


def test_fps_square_corners():
    P = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [1.0, 1, 0]])

    class StartAtOrigin:
        def integers(self, n):
            return 0

    assert fps_indices(P, 2, StartAtOrigin()).tolist() == [0, 3]


def test_spec_defaults():
    s = CaseSpec()
    assert (s.rotation_range_deg, s.translation_range) == ((0.0, 45.0), (-0.5, 0.5))
    assert (s.keep_fraction, s.noise_sigma, s.noise_clip) == (0.75, 0.01, 0.05)
    with pytest.raises(ValueError):
        CaseSpec(keep_fraction=0.0)
    with pytest.raises(ValueError):
        CaseSpec(rotation_range_deg=(10.0, 0.0))


def test_clean_case_truth_scores_zero():
    c = generate_case(CaseSpec.clean(seed=5))
    s = RegistrationState(c.source, c.target)
    for eps in (1e-6, 0.1, 3.0):
        assert reward(s, c.truth, eps) == 0.0


def test_truth_ranges():
    for seed in range(30):
        t = generate_case(CaseSpec(seed=seed, num_points=64)).truth
        assert np.all((np.degrees(t.euler) >= 0.0) & (np.degrees(t.euler) <= 45.0))
        assert np.all(np.abs(t.translation) <= 0.5)


def test_noise_is_clipped():
    spec = CaseSpec(seed=2, num_points=400, keep_fraction=1.0, noise_sigma=0.05, noise_clip=0.05)
    noisy = generate_case(spec)
    clean = generate_case(CaseSpec(seed=2, num_points=400, keep_fraction=1.0, noise_sigma=0.0))
    off = noisy.source.points - clean.source.points
    assert np.max(np.abs(off)) <= 0.05 + 1e-12 and np.max(np.abs(off)) > 0.04


def test_partial_cases_keep_the_fraction():
    c = generate_case(CaseSpec(seed=1, noise_sigma=0.0))
    assert len(c.source) == len(c.target) == 768


def test_generation_is_deterministic():
    a = generate_case(CaseSpec(seed=9))
    b = generate_case(CaseSpec(seed=9))
    assert np.array_equal(a.source.points, b.source.points) and np.array_equal(a.target.points, b.target.points)
    assert case_seeds(7, 5) == case_seeds(7, 5) and len(set(case_seeds(7, 50))) == 50


def test_identity_case_has_zero_error():
    spec = CaseSpec.clean(seed=0, num_points=128, rotation_range_deg=(0.0, 0.0), translation_range=(0.0, 0.0))
    rec = run_case(0, spec, lambda s: RigidMotion.identity())
    assert rec.error is None and rec.mae_rotation_deg == 0.0 and rec.mae_translation == 0.0


def test_failing_case_is_recorded():
    def broken(s):
        raise RuntimeError("nope")

    report = run_benchmark([CaseSpec.clean(seed=0, num_points=64)], broken)
    assert report.cases[0].error == "RuntimeError: nope"
    assert report.aggregate == {"cases": 1, "failed": 1}


def test_aggregate_hand_values():
    recs = [
        CaseRecord(0, 0, [0] * 6, [0] * 6, [1.0, 0, 0], [0.1, 0, 0], 1 / np.sqrt(3), 1 / 3, 0.1 / np.sqrt(3), 0.1 / 3, 1.0),
        CaseRecord(1, 1, [0] * 6, [0] * 6, [0, -2.0, 0], [0, 0, 0], 2 / np.sqrt(3), 2 / 3, 0.0, 0.0, 2.0),
    ]
    agg = aggregate_records(recs)
    assert agg["mae_rotation_deg"] == pytest.approx(0.5)
    assert agg["rmse_rotation_deg"] == pytest.approx(np.sqrt(5 / 6))
    assert agg["median_case_mae_rotation_deg"] == pytest.approx(0.5)
    assert agg["rmse_rotation_deg"] >= agg["mae_rotation_deg"]


def test_small_benchmark_is_repeatable():
    specs = [CaseSpec.clean(seed=s, num_points=128) for s in case_seeds(3, 2)]
    solver = cem_solver(CemConfig(iterations=3, population=50, future_iterations=1))
    a = run_benchmark(specs, solver).as_dict()
    b = run_benchmark(specs, solver).as_dict()
    for d in (a, b):
        for c in d["cases"]:
            c.pop("runtime_s")
    assert a == b
