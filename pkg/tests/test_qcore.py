import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from seqweak.errors import ContractViolation, OutcomeUnderflow
from seqweak.qcore import (
    DOWN,
    UP,
    MeasurementSpec,
    Observable,
    PostSelection,
    QuantumState,
    center_superop,
    decoherence_superop,
    delta_superop,
    gaussian,
    kraus_update,
    outcome_density,
    pauli_along,
    sigma_x,
    sigma_y,
    sigma_z,
)

from .helpers import random_direction, random_hermitian, random_operator, random_state


def proj(v):
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


# --- types ------------------------------------------------------------------


def test_state_rejects_non_hermitian():
    with pytest.raises(ContractViolation):
        QuantumState(np.array([[0.5, 0.1], [0.2, 0.5]]))


def test_state_rejects_bad_trace():
    with pytest.raises(ContractViolation):
        QuantumState(np.eye(2))


def test_state_rejects_negative_eigenvalue():
    with pytest.raises(ContractViolation):
        QuantumState(np.diag([1.2, -0.2]))


def test_state_is_immutable():
    s = QuantumState.from_vector([1, 0])
    with pytest.raises(ValueError):
        s.rho[0, 0] = 0


def test_pure_vector_roundtrip():
    psi = np.array([0.6, 0.8j])
    s = QuantumState.from_vector(psi)
    assert s.is_pure()
    out = s.pure_vector()
    assert abs(abs(np.vdot(out, psi)) - 1) < 1e-12


def test_observable_rejects_non_hermitian():
    with pytest.raises(ContractViolation):
        Observable(np.array([[0, 1], [0, 0]]))


def test_observable_spectral_reconstruction():
    rng = np.random.default_rng(0)
    m = random_hermitian(5, rng)
    o = Observable(m)
    v, w = o.eigenvectors, o.eigenvalues
    assert np.max(np.abs((v * w) @ v.conj().T - m)) < 1e-10


def test_degenerate_clusters():
    o = Observable(np.diag([1.0, 1.0 + 1e-12, -2.0]))
    clusters = o.clusters
    assert len(clusters) == 2
    total = sum(p for _, p in clusters)
    assert np.allclose(total, np.eye(3))


def test_precision_must_be_positive():
    for a in (0.0, -1.0, np.inf, np.nan):
        with pytest.raises(ContractViolation):
            MeasurementSpec(sigma_x(), a)


def test_weak_regime_flag():
    assert MeasurementSpec(sigma_x(), 10.0).is_weak
    assert not MeasurementSpec(sigma_x(), 2.0).is_weak


def test_postselection_bounds():
    PostSelection(np.diag([0.0, 1.0]))
    with pytest.raises(ContractViolation):
        PostSelection(np.diag([1.5, 0.0]))
    with pytest.raises(ContractViolation):
        PostSelection(np.diag([-0.1, 0.5]))


def test_postselection_complement():
    p = PostSelection.onto(UP)
    assert np.allclose(p.complement().effect, proj(DOWN))


# --- superoperators ---------------------------------------------------------


def test_center_sigma_x_on_up():
    out = center_superop(sigma_x(), proj(UP))
    assert np.allclose(out, 0.5 * sigma_x().matrix)


def test_center_identity_and_eigenoperator():
    rng = np.random.default_rng(1)
    o = random_operator(3, rng)
    assert np.allclose(center_superop(Observable(np.eye(3)), o), o)
    assert np.allclose(center_superop(sigma_z(), proj(UP)), proj(UP))


def test_delta_examples():
    assert np.allclose(delta_superop(sigma_z(), proj(UP)), 0)
    assert np.allclose(delta_superop(sigma_x(), sigma_y().matrix), 2j * sigma_z().matrix)
    rng = np.random.default_rng(2)
    a = Observable(random_hermitian(4, rng))
    assert np.allclose(delta_superop(a, np.eye(4)), 0)


def test_superop_dimension_mismatch():
    with pytest.raises(ContractViolation):
        center_superop(sigma_x(), np.eye(3))
    with pytest.raises(ContractViolation):
        delta_superop(sigma_x(), np.eye(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_center_and_delta_commute(seed, d):
    rng = np.random.default_rng(seed)
    a = Observable(random_hermitian(d, rng))
    o = random_operator(d, rng)
    lhs = center_superop(a, delta_superop(a, o))
    rhs = delta_superop(a, center_superop(a, o))
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.max(np.abs(lhs)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pauli_projector_identity(seed):
    rng = np.random.default_rng(seed)
    e = random_direction(rng)
    s = pauli_along(e)
    o = random_operator(2, rng)
    plus = 0.5 * (np.eye(2) + s.matrix)
    minus = 0.5 * (np.eye(2) - s.matrix)
    lhs = plus @ o @ plus - minus @ o @ minus
    assert np.max(np.abs(lhs - center_superop(s, o))) < 1e-12


def test_decoherence_series_oracle():
    # compare the spectral form with a truncated power series of -A_delta^2/8a^2
    rng = np.random.default_rng(3)
    a = Observable(random_hermitian(3, rng))
    o = random_operator(3, rng)
    prec = 3.0
    term, total = o.copy(), o.copy()
    for k in range(1, 40):
        term = -delta_superop(a, delta_superop(a, term)) / (8 * prec**2 * k)
        total = total + term
    assert np.allclose(decoherence_superop(a, o, prec), total, atol=1e-12)


# --- channel ----------------------------------------------------------------


def test_kraus_eigenstate_example():
    w = kraus_update(QuantumState.from_vector(UP), MeasurementSpec(sigma_z(), 1.0), 0.0)
    assert w.weight == pytest.approx(0.24197072451914337, abs=1e-12)
    assert np.allclose(w.normalized().rho, proj(UP))


def test_kraus_identity_observable():
    rng = np.random.default_rng(4)
    s = random_state(3, rng)
    w = kraus_update(s, MeasurementSpec(Observable(np.eye(3)), 0.7), 1.0)
    assert w.weight == pytest.approx(gaussian(0.0, 0.7), rel=1e-12)
    assert np.allclose(w.normalized().rho, s.rho)


def test_kraus_sharp_collapse():
    w = kraus_update(QuantumState.maximally_mixed(2), MeasurementSpec(sigma_z(), 0.1), 1.0)
    assert np.max(np.abs(w.normalized().rho - proj(UP))) < 1e-8


def test_kraus_underflow():
    with pytest.raises(OutcomeUnderflow):
        kraus_update(QuantumState.from_vector(UP), MeasurementSpec(sigma_z(), 0.01), 50.0)


def test_outcome_density_examples():
    spec = MeasurementSpec(sigma_z(), 1.0)
    assert outcome_density(QuantumState.maximally_mixed(2), spec, 0.0) == pytest.approx(0.24197072451914337)
    for a in (0.3, 1.0, 5.0):
        val = outcome_density(QuantumState.from_vector(UP), MeasurementSpec(sigma_z(), a), 1.0)
        assert val == pytest.approx((2 * np.pi * a * a) ** -0.5, rel=1e-12)


def test_outcome_density_normalized():
    rng = np.random.default_rng(5)
    s = random_state(3, rng)
    spec = MeasurementSpec(Observable(random_hermitian(3, rng)), 2.0)
    total, _ = integrate.quad(lambda x: outcome_density(s, spec, x), -40, 40, limit=200)
    assert abs(total - 1) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(0.2, 5))
def test_channel_consistency(seed, outcome, a):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    s = random_state(d, rng)
    spec = MeasurementSpec(Observable(random_hermitian(d, rng)), a)
    w = kraus_update(s, spec, outcome)
    assert abs(w.weight - outcome_density(s, spec, outcome)) < 1e-12


def test_non_selective_map_trace_preserving():
    rng = np.random.default_rng(6)
    s = random_state(3, rng)
    obs = Observable(random_hermitian(3, rng))
    spec = MeasurementSpec(obs, 0.8)
    lo, hi = obs.eigenvalues.min() - 8 * 0.8, obs.eigenvalues.max() + 8 * 0.8
    grid = np.linspace(lo, hi, 4001)
    mats = np.array([kraus_update(s, spec, x).matrix for x in grid])
    avg = integrate.trapezoid(mats, grid, axis=0)
    assert abs(np.trace(avg).real - 1) < 1e-6
    # and equals the decohered state
    assert np.max(np.abs(avg - decoherence_superop(obs, s.rho, 0.8))) < 1e-6


def test_pauli_along_examples():
    assert np.allclose(pauli_along((0, 0, 1)).matrix, sigma_z().matrix)
    assert np.allclose(pauli_along((1, 0, 0)).matrix, sigma_x().matrix)
    o = pauli_along((2**-0.5, 0, 2**-0.5))
    assert np.allclose(o.matrix, (sigma_x().matrix + sigma_z().matrix) / np.sqrt(2))
    assert np.allclose(o.eigenvalues, [-1, 1])


def test_pauli_along_requires_unit_vector():
    with pytest.raises(ContractViolation):
        pauli_along((1, 1, 0))
