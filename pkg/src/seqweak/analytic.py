"""Closed-form correlations of sequential weak measurements.

Everything here is exact linear algebra on density matrices. Product moments
are built by applying the half-anticommutator superoperators A_c of the
measured observables to rho in measurement order and tracing; finite
precision adds the decoherence factor exp(-A_delta^2 / 8a^2) per step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractViolation, DegeneratePostselection, UndefinedWeakValue
from .qcore import (
    CLUSTER_GAP,
    MeasurementSpec,
    Observable,
    PostSelection,
    QuantumState,
    center_superop,
    decoherence_superop,
    pauli_along,
)

ACCEPTANCE_FLOOR = 1e-12
OVERLAP_FLOOR = 1e-12
MAX_PARTITION_LENGTH = 20
MAX_QUASI_PATHS = 10**7


def _check_sequence(obs: Sequence[Observable], dim: int | None = None) -> int:
    if len(obs) == 0:
        raise ContractViolation("observable sequence is empty")
    d = obs[0].dim if dim is None else dim
    for o in obs:
        if o.dim != d:
            raise ContractViolation(f"dimension mismatch: {o.dim} != {d}")
    return d


def _effect_matrix(postsel, dim: int) -> np.ndarray:
    if postsel is None:
        return np.eye(dim, dtype=complex)
    e = postsel.effect if isinstance(postsel, PostSelection) else np.asarray(postsel, dtype=complex)
    if e.shape != (dim, dim):
        raise ContractViolation("post-selection effect has the wrong dimension")
    return e


def symmetrized_operator(obs: Sequence[Observable], state: QuantumState) -> np.ndarray:
    """A_n,c ... A_1,c rho: the operator whose trace is the product moment."""
    _check_sequence(obs, state.dim)
    x = np.array(state.rho)
    for o in obs:
        x = center_superop(o, x)
    return x


def product_moment(obs: Sequence[Observable], state: QuantumState) -> float:
    """Weak-limit mean of the outcome product A_1 A_2 ... A_n."""
    return float(np.real(np.trace(symmetrized_operator(obs, state))))


def nested_anticommutator(obs: Sequence[Observable], tail=None) -> np.ndarray:
    """{A_1, {A_2, ... {A_n, tail} ...}} with ``tail`` defaulting to identity."""
    d = _check_sequence(obs)
    x = np.eye(d, dtype=complex) if tail is None else np.asarray(tail, dtype=complex)
    for o in reversed(obs):
        x = o.matrix @ x + x @ o.matrix
    return x


def subset_product_moment(obs: Sequence[Observable], subset: Sequence[int], state: QuantumState) -> float:
    """Product moment of the outcomes at the 1-based positions ``subset``.

    Outcomes at the remaining positions are marginalised; their
    measurements leave no trace on the weak-limit moment.
    """
    idx = list(subset)
    if not idx:
        raise ContractViolation("subset is empty")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ContractViolation(f"subset {idx} is not strictly increasing")
    if idx[0] < 1 or idx[-1] > len(obs):
        raise ContractViolation(f"subset {idx} out of range 1..{len(obs)}")
    return product_moment([obs[k - 1] for k in idx], state)


def finite_a_product_moment(
    specs: Sequence[MeasurementSpec],
    state: QuantumState,
    postsel: PostSelection | None = None,
    subset: Sequence[int] | None = None,
) -> float:
    """Exact mean of A_1...A_n at finite precisions, optionally post-selected.

    With ``subset`` (1-based positions) only those outcomes enter the
    product; every measurement still decoheres the state.

    Raises
    ------
    DegeneratePostselection
        If the acceptance probability is below 1e-12.
    """
    if len(specs) == 0:
        raise ContractViolation("measurement sequence is empty")
    _check_sequence([s.observable for s in specs], state.dim)
    effect = _effect_matrix(postsel, state.dim)
    picked = set(range(1, len(specs) + 1) if subset is None else subset)
    x = np.array(state.rho)
    y = np.array(state.rho)
    for k, s in enumerate(specs, start=1):
        if k in picked:
            x = center_superop(s.observable, x)
        x = decoherence_superop(s.observable, x, s.precision)
        y = decoherence_superop(s.observable, y, s.precision)
    acceptance = float(np.real(np.trace(effect @ y)))
    if acceptance < ACCEPTANCE_FLOOR:
        raise DegeneratePostselection(f"acceptance probability {acceptance:.3g}")
    return float(np.real(np.trace(effect @ x))) / acceptance


def finite_a_acceptance(
    specs: Sequence[MeasurementSpec], state: QuantumState, postsel: PostSelection
) -> float:
    """Exact probability that a finite-precision run passes ``postsel``."""
    y = np.array(state.rho)
    for s in specs:
        y = decoherence_superop(s.observable, y, s.precision)
    return float(np.real(np.trace(_effect_matrix(postsel, state.dim) @ y)))


def product_moment_postselected(
    obs: Sequence[Observable], state: QuantumState, postsel: PostSelection
) -> float:
    """<{A_1,{A_2,...{A_n,Pi}...}}> / (2^n <Pi>) in the weak limit."""
    effect = _effect_matrix(postsel, state.dim)
    acceptance = state.expect(effect)
    if acceptance < ACCEPTANCE_FLOOR:
        raise DegeneratePostselection(f"<Pi> = {acceptance:.3g}")
    x = symmetrized_operator(obs, state)
    return float(np.real(np.trace(effect @ x))) / acceptance


@dataclass(frozen=True)
class SequentialWeakValue:
    """Complex weak value <f|A_n...A_1|i>/<f|i>."""

    value: complex

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ContractViolation("weak value is not finite")

    @property
    def real(self) -> float:
        return float(np.real(self.value))

    @property
    def imag(self) -> float:
        return float(np.imag(self.value))


def _as_vector(s) -> np.ndarray:
    if isinstance(s, QuantumState):
        return s.pure_vector()
    v = np.asarray(s, dtype=complex).ravel()
    return v / np.linalg.norm(v)


def _weak_value(mats: Sequence[np.ndarray], psi_i: np.ndarray, psi_f: np.ndarray, overlap: complex) -> complex:
    v = psi_i
    for m in mats:
        v = m @ v
    return complex(np.vdot(psi_f, v) / overlap)


def sequential_weak_value(obs: Sequence[Observable], initial, final) -> SequentialWeakValue:
    """(A_1,...,A_n)_w for pure pre-selection ``initial`` and post-selection ``final``.

    The operators act in measurement order, so A_1 is applied first to |i>.
    An empty sequence has weak value 1.
    """
    psi_i, psi_f = _as_vector(initial), _as_vector(final)
    if psi_i.shape != psi_f.shape:
        raise ContractViolation("initial and final states differ in dimension")
    if obs:
        _check_sequence(obs, psi_i.size)
    overlap = np.vdot(psi_f, psi_i)
    if abs(overlap) <= OVERLAP_FLOOR:
        raise UndefinedWeakValue(f"|<f|i>| = {abs(overlap):.3g}")
    return SequentialWeakValue(_weak_value([o.matrix for o in obs], psi_i, psi_f, overlap))


def partition_sum_moment(obs: Sequence[Observable], initial, final) -> float:
    """Post-selected product moment from the sum over ordered bipartitions.

    2^-n sum_{I u J} (A_I)_w (A_J)_w^*, where both index sets keep their
    order and the empty set (weak value 1) is included.
    """
    n = len(obs)
    if n > MAX_PARTITION_LENGTH:
        raise ContractViolation(f"sequence length {n} exceeds {MAX_PARTITION_LENGTH}")
    psi_i, psi_f = _as_vector(initial), _as_vector(final)
    _check_sequence(obs, psi_i.size)
    overlap = np.vdot(psi_f, psi_i)
    if abs(overlap) <= OVERLAP_FLOOR:
        raise UndefinedWeakValue(f"|<f|i>| = {abs(overlap):.3g}")
    mats = [o.matrix for o in obs]
    # weak value of every ordered subset, keyed by bitmask
    wv = np.empty(1 << n, dtype=complex)
    for mask in range(1 << n):
        wv[mask] = _weak_value([mats[k] for k in range(n) if mask >> k & 1], psi_i, psi_f, overlap)
    full = (1 << n) - 1
    total = sum(wv[mask] * np.conj(wv[full ^ mask]) for mask in range(1 << n))
    return float(np.real(total)) / 2**n


class QuasiDistribution:
    """Finite signed measure on outcome tuples.

    Parameters
    ----------
    support : (m, n) array
        Outcome tuples.
    weights : (m,) array
        Real weights, possibly negative, summing to one.
    """

    def __init__(self, support, weights):
        self.support = np.asarray(support, dtype=float).reshape(len(weights), -1)
        self.weights = np.asarray(weights, dtype=float)
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ContractViolation(f"quasi-distribution weights sum to {self.weights.sum()!r}")
        keys = {tuple(np.round(row, 9)) for row in self.support}
        if len(keys) != len(self.support):
            raise ContractViolation("quasi-distribution support points are not distinct")

    def __len__(self):
        return len(self.weights)

    @property
    def length(self) -> int:
        return self.support.shape[1]

    def moment(self, subset: Sequence[int]) -> float:
        """Sum of weight times the product of coordinates at 1-based ``subset``."""
        cols = [k - 1 for k in subset]
        return float(self.weights @ np.prod(self.support[:, cols], axis=1))

    def min_weight(self) -> float:
        return float(self.weights.min())

    def as_dict(self) -> dict[tuple[float, ...], float]:
        return {tuple(float(v) for v in row): float(w) for row, w in zip(self.support, self.weights)}


def _half_sum_groups(obs: Observable) -> list[tuple[float, np.ndarray]]:
    """Eigenvalues of A_c and boolean masks over eigen-operators |i><j|."""
    w = obs.eigenvalues
    mu = 0.5 * (w[:, None] + w[None, :])
    flat = np.sort(mu.ravel())
    groups = []
    start = 0
    for k in range(1, flat.size + 1):
        if k == flat.size or flat[k] - flat[k - 1] > CLUSTER_GAP:
            lo, hi = flat[start], flat[k - 1]
            groups.append((0.5 * (lo + hi), (mu >= lo - 1e-15) & (mu <= hi + 1e-15)))
            start = k
    return groups


def quasi_distribution(obs: Sequence[Observable], state: QuantumState) -> QuasiDistribution:
    """The zero-precision quasi-distribution of the outcome sequence.

    Each A_c is resolved into its spectral projectors (eigen-operators
    |i><j| of A grouped by the half-sum (a_i + a_j)/2); the operator rho is
    pushed through the projectors step by step and the final traces are the
    weights of the resulting outcome tuples.
    """
    d = _check_sequence(obs, state.dim)
    if (d * d) ** len(obs) > MAX_QUASI_PATHS:
        raise ContractViolation(f"{(d * d) ** len(obs)} paths exceed the enumeration bound")
    branches: list[tuple[tuple[float, ...], np.ndarray]] = [((), np.array(state.rho))]
    for o in obs:
        groups = _half_sum_groups(o)
        nxt = []
        for values, x in branches:
            x_e = o.to_eigenbasis(x)
            for mu, mask in groups:
                part = np.where(mask, x_e, 0.0)
                if np.max(np.abs(part)) < 1e-15:
                    continue
                nxt.append((values + (mu,), o.from_eigenbasis(part)))
        branches = nxt
    support = np.array([v for v, _ in branches], dtype=float).reshape(len(branches), len(obs))
    weights = np.array([np.real(np.trace(x)) for _, x in branches])
    return QuasiDistribution(support, weights)


def interchangeability_check(obs: Sequence[Observable], tol: float = 1e-10, block: int | None = None) -> bool:
    """Sufficient test that the measurement order is irrelevant.

    True iff every pairwise commutator is a multiple of the identity
    (restricted to the leading ``block`` x ``block`` sub-matrix when given,
    for truncated canonical operators). Failing the test does not prove
    the order matters.
    """
    d = _check_sequence(obs)
    m = d if block is None else block
    for a, b in itertools.combinations(obs, 2):
        c = (a.matrix @ b.matrix - b.matrix @ a.matrix)[:m, :m]
        residual = c - np.trace(c) / m * np.eye(m)
        if np.max(np.abs(residual)) > tol:
            return False
    return True


def fully_symmetrized_moment(obs: Sequence[Observable], state: QuantumState) -> float:
    """<S A_1 ... A_n>: average of the operator product over all n! orderings."""
    d = _check_sequence(obs, state.dim)
    total = np.zeros((d, d), dtype=complex)
    count = 0
    for perm in itertools.permutations(obs):
        p = np.eye(d, dtype=complex)
        for o in perm:
            p = p @ o.matrix
        total += p
        count += 1
    return state.expect(total / count)


def _unit(e) -> np.ndarray:
    e = np.asarray(e, dtype=float).ravel()
    if e.shape != (3,) or abs(np.linalg.norm(e) - 1.0) > 1e-10:
        raise ContractViolation(f"direction {np.asarray(e).tolist()} is not a unit 3-vector")
    return e


def spin_closed_form(directions, state: QuantumState) -> float:
    """Spin-1/2 correlation of n polarisation measurements along ``directions``.

    Even n gives (e1.e2)(e3.e4)...; odd n gives <sigma_1>(e2.e3)(e4.e5)...
    """
    es = [_unit(e) for e in directions]
    if not es:
        raise ContractViolation("no directions given")
    if state.dim != 2:
        raise ContractViolation("spin closed form needs a 2-dimensional state")
    n = len(es)
    if n % 2:
        value = state.expect(pauli_along(es[0]))
        rest = es[1:]
    else:
        value = 1.0
        rest = es
    for e1, e2 in zip(rest[::2], rest[1::2]):
        value *= float(e1 @ e2)
    return value


class DiscardStatistics(NamedTuple):
    rate: float
    conditional_mean: float


def discard_statistics(
    spec_count: int,
    precision: float,
    initial,
    discard_effect: PostSelection,
    observable: Observable | None = None,
) -> DiscardStatistics:
    """Exact discard rate and conditional outcome-product mean.

    ``observable`` (sigma_x by default) is measured ``spec_count`` times at
    precision ``precision`` on the pure state ``initial``; the discarded
    sub-ensemble is selected by ``discard_effect``. The decoherence factor
    accumulates as exp(-n A_delta^2 / 8a^2).
    """
    if spec_count not in (1, 2):
        raise ContractViolation("spec_count must be 1 or 2")
    if observable is None:
        observable = pauli_along((1.0, 0.0, 0.0))
    state = initial if isinstance(initial, QuantumState) else QuantumState.from_vector(initial)
    if state.dim != observable.dim or discard_effect.dim != state.dim:
        raise ContractViolation("dimension mismatch")
    effect = discard_effect.effect
    x = np.array(state.rho)
    for _ in range(spec_count):
        x = center_superop(observable, x)
    w = observable.eigenvalues
    factor = np.exp(-spec_count * (w[:, None] - w[None, :]) ** 2 / (8.0 * precision**2))
    num = observable.from_eigenbasis(factor * observable.to_eigenbasis(x))
    den = observable.from_eigenbasis(factor * observable.to_eigenbasis(state.rho))
    rate = float(np.real(np.trace(effect @ den)))
    if rate < 1e-300:
        raise DegeneratePostselection("discard rate vanishes")
    return DiscardStatistics(rate, float(np.real(np.trace(effect @ num))) / rate)


def discard_asymptotics(spec_count: int, precision: float, spread: float = 1.0) -> DiscardStatistics:
    """Leading-order discard rate and conditional mean for re-selection.

    Two-level observable with eigenvalues +-1, quantum spread ``spread``:
    rate ~ n (Delta A)^2 / (4 a^2). The conditional mean is 0 for n = 1;
    for n = 2 it is fixed by rate x mean -> (Delta A)^2 / 2, i.e. a^2
    when Delta A = 1.
    """
    rate = spec_count * spread**2 / (4.0 * precision**2)
    if spec_count == 1:
        return DiscardStatistics(rate, 0.0)
    return DiscardStatistics(rate, 0.5 * spread**2 / rate)


def reselection_gap(obs: Observable, initial) -> float:
    """Unconditioned minus re-selected double-measurement moment of ``obs``."""
    state = initial if isinstance(initial, QuantumState) else QuantumState.from_vector(initial)
    psi = state.pure_vector()
    return product_moment([obs, obs], state) - product_moment_postselected(
        [obs, obs], state, PostSelection.onto(psi)
    )


def quantum_variance(obs: Observable, state: QuantumState) -> float:
    m = state.expect(obs)
    return state.expect(obs.matrix @ obs.matrix) - m * m


__all__ = [
    "DiscardStatistics",
    "QuasiDistribution",
    "SequentialWeakValue",
    "discard_asymptotics",
    "discard_statistics",
    "finite_a_acceptance",
    "finite_a_product_moment",
    "fully_symmetrized_moment",
    "interchangeability_check",
    "nested_anticommutator",
    "partition_sum_moment",
    "product_moment",
    "product_moment_postselected",
    "quantum_variance",
    "quasi_distribution",
    "reselection_gap",
    "sequential_weak_value",
    "spin_closed_form",
    "subset_product_moment",
    "symmetrized_operator",
]
