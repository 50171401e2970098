import numpy as np
import pytest
from scipy import stats

from seqweak import analytic, kernels, montecarlo
from seqweak.errors import ContractViolation, EstimatorUnavailable
from seqweak.montecarlo import (
    MomentEstimate,
    SequencePlan,
    SubsetStatistics,
    TrajectoryRecord,
    estimate_product,
    run_postselected,
    run_sequence,
    run_strong_spin_sequence,
    sample_measurement,
    simulate,
    single_outcome_ks,
    spin_statistics,
    stream_statistics,
)
from seqweak.qcore import (
    DOWN,
    UP,
    MeasurementSpec,
    Observable,
    PostSelection,
    QuantumState,
    kraus_update,
    outcome_density,
    sigma_x,
    sigma_y,
    sigma_z,
)
from seqweak.rng import BLOCK_SIZE

from .helpers import random_direction, random_hermitian, random_state, random_vector

up = QuantumState.from_vector(UP)
X, Y, Z = sigma_x(), sigma_y(), sigma_z()


# --- reference sampler ------------------------------------------------------


def test_sample_measurement_eigenstate():
    rng = np.random.default_rng(0)
    spec = MeasurementSpec(Z, 1.0)
    draws = [sample_measurement(up, spec, rng) for _ in range(4000)]
    out = np.array([d[0] for d in draws])
    assert abs(out.mean() - 1) < 5 / np.sqrt(4000)
    assert stats.kstest(out - 1, "norm").pvalue > 1e-3
    assert np.allclose(draws[0][1].rho, up.rho)


def test_sample_measurement_identity_leaves_state():
    rng = np.random.default_rng(1)
    s = random_state(3, rng)
    out, post = sample_measurement(s, MeasurementSpec(Observable(np.eye(3)), 1.0), rng)
    assert np.allclose(post.rho, s.rho)


def test_reference_sampler_ks_bimodal():
    rng = np.random.default_rng(2)
    mixed = QuantumState.maximally_mixed(2)
    spec = MeasurementSpec(Z, 0.2)
    out = np.array([sample_measurement(mixed, spec, rng)[0] for _ in range(20000)])
    d = stats.kstest(out, montecarlo.outcome_cdf(mixed, spec)).statistic
    assert d < stats.kstwo.ppf(0.99, len(out))


def test_run_sequence_eigenstate():
    rng = np.random.default_rng(3)
    specs = [MeasurementSpec(Z, 1.0)] * 2
    recs = [run_sequence(up, specs, rng, trajectory_index=k) for k in range(3000)]
    assert recs[5].trajectory_index == 5
    assert all(len(r.outcomes) == 2 and r.accepted is None for r in recs)
    est = estimate_product(recs, (1, 2))
    assert abs(est.z_score(1.0)) < 5


def test_run_sequence_postselection_flag():
    rng = np.random.default_rng(4)
    rec = run_sequence(up, [MeasurementSpec(Z, 1.0)], rng, PostSelection.onto(UP))
    assert rec.accepted is True


def test_strong_same_axis():
    rng = np.random.default_rng(5)
    for _ in range(50):
        assert run_strong_spin_sequence(up, [(0, 0, 1), (0, 0, 1)], rng) == [1, 1]


def test_strong_orthogonal_axes():
    rng = np.random.default_rng(6)
    s = random_state(2, rng)
    prods = [np.prod(run_strong_spin_sequence(s, [(1, 0, 0), (0, 0, 1)], rng)) for _ in range(4000)]
    assert abs(np.mean(prods)) < 5 / np.sqrt(4000)


# --- batch sampler ----------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_batch_single_outcome_ks(seed):
    rng = np.random.default_rng(100 + seed)
    d = int(rng.integers(2, 4))
    s = random_state(d, rng)
    spec = MeasurementSpec(Observable(random_hermitian(d, rng)), float(rng.uniform(0.2, 3)))
    assert single_outcome_ks(s, spec, 100_000, seed).passed


def test_outcome_cdf_matches_closed_form():
    rng = np.random.default_rng(7)
    s = random_state(3, rng)
    obs = Observable(random_hermitian(3, rng))
    spec = MeasurementSpec(obs, 0.5)
    pops = np.real(np.diag(obs.to_eigenbasis(s.rho)))
    x = np.linspace(-4, 4, 50)
    exact = stats.norm.cdf((x[:, None] - obs.eigenvalues) / 0.5) @ pops
    assert np.max(np.abs(montecarlo.outcome_cdf(s, spec)(x) - exact)) < 1e-6


def test_batch_matches_reference_two_step_law():
    # joint law of (A1, A2) from the batch kernel versus the reference chain
    s = random_state(2, np.random.default_rng(8))
    specs = [MeasurementSpec(X, 0.7), MeasurementSpec(Z, 0.7)]
    batch = simulate(s, specs, 20000, seed=9).outcomes
    rng = np.random.default_rng(10)
    ref = np.array([run_sequence(s, specs, rng).outcomes for _ in range(20000)])
    for col in range(2):
        assert stats.ks_2samp(batch[:, col], ref[:, col]).pvalue > 1e-3
    assert stats.ks_2samp(batch[:, 0] * batch[:, 1], ref[:, 0] * ref[:, 1]).pvalue > 1e-3


def test_final_state_weight_is_chain_density():
    rng = np.random.default_rng(11)
    s = QuantumState.from_vector(random_vector(3, rng))
    obs = [Observable(random_hermitian(3, rng)) for _ in range(3)]
    specs = [MeasurementSpec(o, 0.9) for o in obs]
    batch = simulate(s, specs, 20, seed=12)
    for rec in batch.records():
        state, w = s, 1.0
        for spec, a in zip(specs, rec.outcomes):
            k = kraus_update(state, spec, a)
            w *= k.weight
            state = k.normalized()
        assert rec.final_state_weight == pytest.approx(w, rel=1e-9)
        assert rec.final_state_weight > 0


def test_first_step_density_weight():
    spec = MeasurementSpec(Y, 1.3)
    batch = simulate(QuantumState.from_vector(UP), [spec], 5, seed=3)
    for rec in batch.records():
        assert rec.final_state_weight == pytest.approx(outcome_density(up, spec, rec.outcomes[0]), rel=1e-9)


# --- reproducibility --------------------------------------------------------


def test_replay_is_bit_identical():
    s = random_state(3, np.random.default_rng(14))
    obs = [Observable(random_hermitian(3, np.random.default_rng(k))) for k in range(3)]
    specs = [MeasurementSpec(o, 1.0) for o in obs]
    post = PostSelection.onto(random_vector(3, np.random.default_rng(15)))
    batch = simulate(s, specs, BLOCK_SIZE + 50, seed=77, postsel=post)
    for idx in (0, 17, BLOCK_SIZE - 1, BLOCK_SIZE, BLOCK_SIZE + 49):
        rec = montecarlo.replay_trajectory(s, specs, 77, idx, post)
        assert rec == batch[idx]


def test_trajectory_independent_of_run_length():
    specs = [MeasurementSpec(X, 2.0)] * 2
    a = simulate(up, specs, 100, seed=5).outcomes
    b = simulate(up, specs, 100_000, seed=5).outcomes
    assert np.array_equal(a, b[:100])


@pytest.mark.parametrize("threads", [2, 3])
def test_thread_count_does_not_change_results(threads):
    specs = [MeasurementSpec(X, 2.0)] * 2
    post = PostSelection.onto(UP)
    one = stream_statistics(up, specs, 3 * BLOCK_SIZE + 11, 21, post, threads=1)
    many = stream_statistics(up, specs, 3 * BLOCK_SIZE + 11, 21, post, threads=threads)
    for pool in ("accepted", "discarded"):
        e1, e2 = getattr(one, pool).estimate((1, 2)), getattr(many, pool).estimate((1, 2))
        assert e1 == e2
    b1 = simulate(up, specs, 2 * BLOCK_SIZE, 4, threads=1)
    b2 = simulate(up, specs, 2 * BLOCK_SIZE, 4, threads=threads)
    assert np.array_equal(b1.outcomes, b2.outcomes)


def test_seed_must_be_64_bit():
    with pytest.raises(ContractViolation):
        simulate(up, [MeasurementSpec(X, 1.0)], 10, seed=-1)
    with pytest.raises(ContractViolation):
        simulate(up, [MeasurementSpec(X, 1.0)], 10, seed=2**64)


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("case", ["spin", "mixed3", "strong", "post"])
def test_numba_and_numpy_kernels_agree(case):
    rng = np.random.default_rng(30)
    if case == "spin":
        plan = SequencePlan.build(up, [X, Y, X], [2.0] * 3)
    elif case == "mixed3":
        obs = [Observable(random_hermitian(3, rng)) for _ in range(3)]
        plan = SequencePlan.build(random_state(3, rng), obs, [0.8, 1.5, 3.0])
    elif case == "strong":
        plan = montecarlo.spin_plan(random_state(2, rng), [random_direction(rng) for _ in range(4)], 0.0)
    else:
        obs = [Observable(random_hermitian(3, rng)) for _ in range(2)]
        post = PostSelection(np.diag([0.2, 0.7, 1.0]))
        plan = SequencePlan.build(random_state(3, rng, rank=2), obs, [1.0, 1.0], post)
    a = montecarlo._simulate_plan(plan, 5000, 8, kernel=kernels.chain_numpy)
    b = montecarlo._simulate_plan(plan, 5000, 8, kernel=kernels.chain_numba)
    assert np.allclose(a.outcomes, b.outcomes, rtol=0, atol=1e-12)
    assert np.allclose(a.log_weight, b.log_weight, rtol=0, atol=1e-9)
    assert np.allclose(a.accept_prob, b.accept_prob, rtol=0, atol=1e-12)


# --- estimators -------------------------------------------------------------


def test_estimate_product_constant_records():
    recs = [TrajectoryRecord((1.0, 1.0), None, k, 1.0) for k in range(100)]
    est = estimate_product(recs, (1, 2))
    assert est.mean == 1 and est.std_error == 0 and est.sample_count == 100


def test_estimate_product_needs_two_records():
    with pytest.raises(EstimatorUnavailable):
        estimate_product([TrajectoryRecord((1.0,), None, 0, 1.0)], (1,))


def test_moment_estimate_invariants():
    with pytest.raises(EstimatorUnavailable):
        MomentEstimate(0.0, 0.0, 1)
    with pytest.raises(ContractViolation):
        MomentEstimate(0.0, -1.0, 10)


def test_streaming_matches_direct_estimates():
    rng = np.random.default_rng(31)
    data = rng.normal(size=(10_000, 3))
    stats_ = SubsetStatistics(3)
    for chunk in np.array_split(data, 7):
        part = SubsetStatistics.from_outcomes(chunk)
        stats_.merge(part)
    for sub in stats_.subsets:
        direct = estimate_product(data, sub)
        s = stats_.estimate(sub)
        assert s.mean == pytest.approx(direct.mean, abs=1e-12)
        assert s.std_error == pytest.approx(direct.std_error, rel=1e-9)


def test_linear_estimate_uses_covariance():
    rng = np.random.default_rng(32)
    data = rng.normal(size=(5000, 2))
    data[:, 1] = data[:, 0] + 0.1 * data[:, 1]
    s = SubsetStatistics.from_outcomes(data)
    diff = s.linear_estimate({(1,): 1.0, (2,): -1.0})
    direct = estimate_product((data[:, 0] - data[:, 1])[:, None], (1,))
    assert diff.mean == pytest.approx(direct.mean, abs=1e-12)
    assert diff.std_error == pytest.approx(direct.std_error, rel=1e-9)


def test_double_sigma_x_estimate():
    res = stream_statistics(up, [MeasurementSpec(X, 2.0)] * 2, 200_000, seed=33).accepted
    full = res.estimate((1, 2))
    assert abs(full.z_score(1.0)) < 5
    # E[A1^2 A2^2] = (1 + a^2)^2 for sigma_x outcomes
    assert full.std_error == pytest.approx(np.sqrt((25 - 1) / 200_000), rel=0.05)
    assert abs(res.estimate((1,)).z_score(0.0)) < 5


def test_three_step_sequence_on_mixed_state():
    mixed = QuantumState.maximally_mixed(2)
    specs = [MeasurementSpec(o, 2.0) for o in (X, Y, Z)]
    res = stream_statistics(mixed, specs, 200_000, seed=34).accepted
    assert abs(res.estimate((1, 2, 3)).z_score(analytic.product_moment([X, Y, Z], mixed))) < 5


# --- post-selection ---------------------------------------------------------


def test_identity_postselection_accepts_everything():
    specs = [MeasurementSpec(X, 2.0)] * 2
    res = run_postselected(up, specs, PostSelection.identity(2), 10_000, 35)
    assert res.acceptance_rate == 1.0 and res.discarded.count == 0
    plain = stream_statistics(up, specs, 10_000, 35).accepted
    assert res.accepted.estimate((1, 2)) == plain.estimate((1, 2))
    assert not res.discarded.available
    with pytest.raises(EstimatorUnavailable):
        res.discarded.estimate((1, 2))


def test_reselection_pools_match_finite_a_oracle():
    a = 4.0
    specs = [MeasurementSpec(X, a)] * 2
    post = PostSelection.onto(UP)
    res = run_postselected(up, specs, post, 1_000_000, 36)
    exact_acc = analytic.finite_a_product_moment(specs, up, post)
    exact_dis = analytic.finite_a_product_moment(specs, up, post.complement())
    rate = analytic.finite_a_acceptance(specs, up, post)
    assert abs(res.accepted.estimate((1, 2)).z_score(exact_acc)) < 5
    assert abs(res.discarded.estimate((1, 2)).z_score(exact_dis)) < 5
    assert abs(res.acceptance_rate - rate) < 5 * np.sqrt(rate * (1 - rate) / 1_000_000)
    assert abs(res.accepted.estimate((1, 2)).mean - 0.5) < 0.05


def test_general_effect_acceptance_rate():
    rng = np.random.default_rng(37)
    s = random_state(3, rng)
    obs = [Observable(random_hermitian(3, rng)) for _ in range(2)]
    specs = [MeasurementSpec(o, 1.0) for o in obs]
    effect = PostSelection(np.diag([0.1, 0.5, 0.9]))
    res = run_postselected(s, specs, effect, 200_000, 38)
    p = analytic.finite_a_acceptance(specs, s, effect)
    assert abs(res.acceptance_rate - p) < 5 * np.sqrt(p * (1 - p) / 200_000)
    assert res.mean_accept_prob == pytest.approx(p, abs=5 * 0.5 / np.sqrt(200_000))
    exact = analytic.finite_a_product_moment(specs, s, effect)
    assert abs(res.accepted.estimate((1, 2)).z_score(exact)) < 5


# --- spin -------------------------------------------------------------------


def test_weak_strong_xyyx():
    dirs = [(1, 0, 0), (0, 1, 0), (0, 1, 0), (1, 0, 0)]
    s = QuantumState.from_vector(random_vector(2, np.random.default_rng(39)))
    weak = spin_statistics(s, dirs, 200_000, 40, precision=2.0).estimate((1, 2, 3, 4))
    strong = spin_statistics(s, dirs, 200_000, 41).estimate((1, 2, 3, 4))
    assert abs(weak.z_score(0.0)) < 5 and abs(strong.z_score(0.0)) < 5
    assert abs(montecarlo.combined_z(weak, strong)) < 5


def test_batch_strong_matches_reference_strong():
    rng = np.random.default_rng(42)
    dirs = [random_direction(rng) for _ in range(3)]
    s = random_state(2, rng)
    batch = spin_statistics(s, dirs, 50_000, 43).estimate((1, 2, 3))
    ref = np.array([np.prod(run_strong_spin_sequence(s, dirs, rng)) for _ in range(20_000)])
    expected = analytic.spin_closed_form(dirs, s)
    assert abs(batch.z_score(expected)) < 5
    assert abs(ref.mean() - expected) < 5 * ref.std() / np.sqrt(len(ref))


def test_strong_outcomes_are_signs():
    rng = np.random.default_rng(44)
    plan = montecarlo.spin_plan(up, [random_direction(rng) for _ in range(3)], 0.0)
    out = montecarlo._simulate_plan(plan, 1000, 45).outcomes
    # eigenvalues come from eigh, so signs are exact only to roundoff
    assert np.max(np.abs(np.abs(out) - 1.0)) < 1e-14
