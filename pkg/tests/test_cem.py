import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cemreg.bench import CaseSpec, generate_case
from cemreg.cem import (
    CemConfig,
    CemError,
    SamplingDistribution,
    cem_register,
    fused_score,
    hard_topk_update,
    sample_candidates,
    sparsemax,
    sparsemax_jacobian,
    support_matched_scale,
    topk_weights,
    weighted_update,
)
from cemreg.metrics import transform_error
from cemreg.priors import standard_prior
from cemreg.se3 import RegistrationState, RigidMotion, wrap_angle
from cemreg.selftest import sparsemax_bruteforce

seeds = st.integers(0, 2**32 - 1)


@pytest.fixture(scope="module")
def small_case():
    c = generate_case(CaseSpec.clean(num_points=256, seed=3))
    return RegistrationState(c.source, c.target), c.truth


# --- sampling


def test_zero_sigma_samples_are_the_mean():
    mu = np.array([0.1, -0.2, 0.3, 1.0, 2.0, 3.0])
    A = sample_candidates(SamplingDistribution(mu, np.zeros(6)), 5, np.random.default_rng(0))
    assert np.array_equal(A, np.tile(mu, (5, 1)))


def test_samples_wrap_across_the_seam():
    mu = np.array([np.pi - 0.1, 0, 0, 0, 0, 0])
    dist = SamplingDistribution(mu, np.array([1.0, 0, 0, 0, 0, 0]))

    class Fixed:
        def standard_normal(self, shape):
            z = np.zeros(shape)
            z[:, 0] = 0.3
            return z

    a = sample_candidates(dist, 1, Fixed())
    assert a[0, 0] == pytest.approx(-np.pi + 0.2, abs=1e-12)


def test_same_seed_same_samples():
    d = standard_prior()
    a = sample_candidates(d, 50, np.random.default_rng(9))
    b = sample_candidates(d, 50, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_distribution_validation():
    with pytest.raises(ValueError):
        SamplingDistribution(np.zeros(6), -np.ones(6))
    with pytest.raises(ValueError):
        SamplingDistribution(np.full(6, np.nan), np.ones(6))
    d = SamplingDistribution([4.0, 0, 0, 0, 0, 0], np.ones(6))
    assert abs(d.mu[0]) <= np.pi


# --- sparsemax


@pytest.mark.parametrize(
    "q, p",
    [([0.5, 0.5], [0.5, 0.5]), ([2.0, 0.0], [1.0, 0.0]), ([0.6, 0.4], [0.6, 0.4])],
)
def test_sparsemax_examples(q, p):
    assert np.allclose(sparsemax(q), p, atol=1e-15)


def test_jacobian_examples():
    assert np.array_equal(sparsemax_jacobian([2.0, 0.0]), np.zeros((2, 2)))
    assert np.allclose(sparsemax_jacobian([0.6, 0.4]), [[0.5, -0.5], [-0.5, 0.5]])


vectors = st.integers(2, 8).flatmap(lambda n: st.lists(st.floats(-5, 5), min_size=n, max_size=n)).map(np.array)


@given(vectors, st.floats(-1e3, 1e3))
def test_sparsemax_matches_enumeration_and_is_shift_invariant(z, c):
    p = sparsemax(z)
    assert np.max(np.abs(p - sparsemax_bruteforce(z))) <= 1e-10
    assert abs(p.sum() - 1.0) <= 1e-12 and p.min() >= 0.0
    assert np.max(np.abs(sparsemax(z + c) - p)) <= 1e-12


@given(vectors)
def test_jacobian_rows_sum_to_zero_on_support(z):
    J = sparsemax_jacobian(z)
    S = sparsemax(z) > 0
    assert np.max(np.abs(J[S].sum(axis=1))) < 1e-12


@given(vectors)
def test_jacobian_matches_central_differences(z):
    p = sparsemax(z)
    S = p > 0
    tau = (z[S].sum() - 1.0) / S.sum()
    if np.min(np.abs(z - tau)) <= 1e-3:
        return  # support not stable under the finite-difference step
    h = 1e-6
    fd = np.column_stack([(sparsemax(z + h * e) - sparsemax(z - h * e)) / (2 * h) for e in np.eye(z.size)])
    assert np.max(np.abs(sparsemax_jacobian(z) - fd)) <= 1e-5


def test_sparsemax_survives_huge_scales(rng):
    s = -rng.uniform(0, 2, 1000)
    p = sparsemax(1e14 * s)
    assert abs(p.sum() - 1.0) < 1e-12


@given(seeds, st.integers(1, 60))
def test_support_matched_scale_keeps_exactly_k(seed, k):
    scores = -np.random.default_rng(seed).uniform(0, 2, 80)
    beta = support_matched_scale(scores, k)
    support = np.flatnonzero(sparsemax(beta * scores) > 1e-12)
    assert set(support) <= set(np.argsort(-scores)[: k + 1])
    assert k - 1 <= support.size <= k


def test_support_matched_scale_edge_cases():
    assert support_matched_scale([1.0, 1.0, 1.0], 1) == 1.0
    assert support_matched_scale([0.0, -1.0], 5) == 1.0
    assert support_matched_scale([0.0, -1.0, -3.0], 2) == pytest.approx(1.0 / (3.0 + 2.0))


# --- updates


def test_topk_with_one_elite():
    A = np.random.default_rng(0).normal(size=(10, 6))
    scores = np.arange(10.0)
    d = hard_topk_update(A, scores, 1, np.zeros(6), 1e-4)
    assert np.allclose(d.mu, A[9], atol=1e-15)
    assert np.array_equal(d.sigma, np.full(6, 1e-4))


def test_topk_with_two_elites():
    u = np.array([0.1, 0.2, -0.3, 1.0, 0.0, 2.0])
    v = np.array([0.3, -0.2, 0.1, 0.0, 1.0, 2.5])
    A = np.vstack([u, np.full(6, 0.5), v])
    d = hard_topk_update(A, [1.0, -5.0, 0.5], 2, np.zeros(6))
    mu = (u + v) / 2
    assert np.allclose(d.mu, mu, atol=1e-15)
    assert np.allclose(d.sigma**2, ((u - mu) ** 2 + (v - mu) ** 2) / 2, atol=1e-15)


def test_topk_ties_go_to_lower_index():
    A = np.arange(24.0).reshape(4, 6) / 10
    d = hard_topk_update(A, [1.0, 2.0, 2.0, 2.0], 2, np.zeros(6))
    assert np.allclose(d.mu, (A[1] + A[2]) / 2)


@given(seeds, st.sampled_from(["one", "tenth", "all"]))
def test_topk_equals_weighted_with_indicator_weights(seed, which):
    r = np.random.default_rng(seed)
    n = int(r.integers(10, 300))
    k = {"one": 1, "tenth": max(1, n // 10), "all": n}[which]
    A = r.normal(size=(n, 6)) * [3, 1, 3, 1, 1, 1]
    A[:, :3] = wrap_angle(A[:, :3])
    scores = -r.uniform(0, 2, n)
    prev = r.normal(size=6)
    a = hard_topk_update(A, scores, k, prev)
    b = weighted_update(A, topk_weights(scores, k), prev)
    assert np.max(np.abs(a.mu - b.mu)) <= 1e-12
    assert np.max(np.abs(a.sigma - b.sigma)) <= 1e-12


def test_one_hot_and_uniform_weights(rng):
    A = rng.normal(size=(6, 6)) * 0.3
    w = np.zeros(6)
    w[4] = 1.0
    d = weighted_update(A, w, np.zeros(6), 1e-4)
    assert np.allclose(d.mu, A[4], atol=1e-15) and np.array_equal(d.sigma, np.full(6, 1e-4))
    u = weighted_update(A, np.full(6, 1 / 6), np.zeros(6))
    assert np.allclose(u.mu, A.mean(axis=0), atol=1e-15)


def test_sparsemax_weights_reproduce_topk(rng):
    A = rng.normal(size=(50, 6)) * 0.3
    k = 5
    scores = np.full(50, -100.0)
    scores[[3, 9, 17, 28, 40]] = 0.0
    w = sparsemax(scores)
    a = weighted_update(A, w, np.zeros(6))
    b = hard_topk_update(A, scores, k, np.zeros(6))
    assert np.max(np.abs(a.mu - b.mu)) <= 1e-12 and np.max(np.abs(a.sigma - b.sigma)) <= 1e-12


def test_update_averages_across_the_seam():
    A = np.zeros((2, 6))
    A[:, 0] = [np.pi - 0.05, -np.pi + 0.05]
    d = weighted_update(A, [0.5, 0.5], np.array([np.pi, 0, 0, 0, 0, 0]))
    assert abs(abs(d.mu[0]) - np.pi) < 1e-12
    assert d.sigma[0] == pytest.approx(0.05, abs=1e-12)


def test_weights_off_simplex_rejected():
    with pytest.raises(ValueError):
        weighted_update(np.zeros((2, 6)), [0.7, 0.7], np.zeros(6))


# --- scoring


def test_fused_score_weights(small_case):
    s, truth = small_case
    a = RigidMotion(truth.euler + 0.05, truth.translation + 0.02)
    cur = fused_score(s, a, CemConfig(alpha=1.0), True)
    assert cur.fused_score == cur.current_reward
    fut = fused_score(s, a, CemConfig(alpha=0.0), True)
    assert fut.fused_score == fut.future_reward
    assert fut.future_reward > fut.current_reward
    plain = fused_score(s, a, CemConfig(), False)
    assert plain.future_reward is None and plain.fused_score == plain.current_reward


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_ground_truth_scores_zero(small_case, alpha):
    s, truth = small_case
    sc = fused_score(s, truth, CemConfig(alpha=alpha), True)
    assert sc.current_reward == 0.0 and sc.future_reward == 0.0 and sc.fused_score == 0.0


# --- search


def test_config_validation():
    for bad in (
        dict(iterations=0),
        dict(population=0),
        dict(future_iterations=16),
        dict(alpha=1.5),
        dict(epsilon=0.0),
        dict(elite_count=1001),
        dict(update_mode="greedy"),
        dict(beta=-1.0),
        dict(beta="big"),
        dict(sigma_floor=-1.0),
    ):
        with pytest.raises(ValueError):
            CemConfig(**bad)
    assert CemConfig().k == 100
    c = CemConfig()
    assert (c.iterations, c.population, c.epsilon, c.future_iterations, c.alpha) == (15, 1000, 0.1, 3, 0.5)


def test_prior_at_truth_with_zero_spread(small_case):
    s, truth = small_case
    prior = SamplingDistribution(truth.as_vector(), np.zeros(6))
    cfg = CemConfig(iterations=3, population=20, future_iterations=1, sigma_floor=0.0)
    m, trace = cem_register(s, prior, cfg)
    assert np.array_equal(m.as_vector(), truth.as_vector())
    # the compiled transform rounds differently from the one that built the target
    assert all(abs(r.best_current_reward) <= 1e-12 and abs(r.best_score) <= 1e-12 for r in trace.records)


@pytest.mark.parametrize("mode", ["sparsemax", "hard_topk"])
def test_search_is_deterministic_and_thread_independent(small_case, mode, monkeypatch):
    s, _ = small_case
    cfg = CemConfig(iterations=4, population=100, future_iterations=2, update_mode=mode, seed=11)
    monkeypatch.setenv("CEMREG_THREADS", "1")
    m1, t1 = cem_register(s, standard_prior(), cfg)
    m2, t2 = cem_register(s, standard_prior(), cfg)
    monkeypatch.setenv("CEMREG_THREADS", "3")
    m3, t3 = cem_register(s, standard_prior(), cfg)
    assert np.array_equal(m1.as_vector(), m2.as_vector()) and np.array_equal(m1.as_vector(), m3.as_vector())
    assert t1.as_dict() == t2.as_dict() == t3.as_dict()


def test_sigma_floor_and_trace(small_case):
    s, _ = small_case
    cfg = CemConfig(iterations=6, population=100, future_iterations=1, sigma_floor=0.01)
    _, trace = cem_register(s, standard_prior(), cfg)
    assert len(trace.records) == 6
    for r in trace.records:
        assert min(r.sigma) >= 0.01
        assert all(abs(x) <= np.pi for x in r.mu[:3])
        assert r.beta > 0 and 1 <= r.support_size <= cfg.population
    assert [r.used_future for r in trace.records] == [True] + [False] * 5


def test_fixed_beta_is_recorded(small_case):
    s, _ = small_case
    _, trace = cem_register(s, standard_prior(), CemConfig(iterations=2, population=50, future_iterations=0, beta=200.0))
    assert trace.beta == 200.0 and all(r.beta == 200.0 for r in trace.records)


def test_failure_carries_partial_trace(small_case, monkeypatch):
    s, _ = small_case
    import cemreg.cem as cem

    calls = {"n": 0}
    real = cem.score_population

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 3:
            raise RuntimeError("boom")
        return real(*a, **k)

    monkeypatch.setattr(cem, "score_population", flaky)
    with pytest.raises(CemError) as info:
        cem_register(s, standard_prior(), CemConfig(iterations=5, population=30, future_iterations=0))
    assert len(info.value.trace.records) == 2


@pytest.mark.parametrize("future", [0, 3])
def test_median_best_score_improves(small_case, future):
    # the score definition changes at iteration ``future`` (fused -> current
    # only), so monotonicity is asserted within each scoring regime
    s, _ = small_case
    traces = []
    for seed in range(20):
        cfg = CemConfig(iterations=10, population=200, future_iterations=future, seed=seed)
        traces.append(cem_register(s, standard_prior(), cfg)[1].best_scores)
    med = np.median(traces, axis=0)
    for part in (med[:future], med[future:]):
        assert np.all(np.diff(part) >= 0.0)


def test_thirty_degree_case_converges():
    spec = CaseSpec.clean(seed=0, rotation_range_deg=(30.0, 30.0), translation_range=(0.0, 0.0))
    c = generate_case(spec)
    m, _ = cem_register(RegistrationState(c.source, c.target), standard_prior(), CemConfig())
    assert transform_error(m, c.truth).mae_rotation_deg <= 1.0
