"""Finite-dimensional states, observables and the unsharp measurement channel.

The Gaussian response of precision ``a`` is normalised as

    G_a(x) = (2 pi a^2)^(-1/2) exp(-x^2 / (2 a^2))

Densities depend on that constant; moments do not.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ContractViolation, OutcomeUnderflow

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
SPECTRAL_TOL = 1e-10
CLUSTER_GAP = 1e-9
UNDERFLOW_FLOOR = 1e-300


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.flags.writeable = False
    return a


def _check_square(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ContractViolation(f"{name} must be a non-empty square matrix, got shape {m.shape}")


def hermitian_defect(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (M + M^dagger)/2."""
    return 0.5 * (m + m.conj().T)


def gaussian(x, a: float):
    """Normalised Gaussian G_a(x) of standard width ``a``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x / a) ** 2) / (np.sqrt(2.0 * np.pi) * a)


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Normalised density matrix on a ``dim``-dimensional Hilbert space."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        _check_square(rho, "rho")
        if hermitian_defect(rho) > HERMITIAN_TOL:
            raise ContractViolation(f"rho is not Hermitian (defect {hermitian_defect(rho):.3g})")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ContractViolation(f"trace(rho) = {tr!r}, expected 1")
        if np.linalg.eigvalsh(symmetrize(rho)).min() < -PSD_TOL:
            raise ContractViolation("rho is not positive semidefinite")
        object.__setattr__(self, "rho", _frozen(rho))

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @classmethod
    def from_vector(cls, psi) -> "QuantumState":
        """Pure state |psi><psi|; ``psi`` is normalised here."""
        psi = np.asarray(psi, dtype=complex).ravel()
        norm = np.linalg.norm(psi)
        if norm == 0:
            raise ContractViolation("zero state vector")
        psi = psi / norm
        return cls(symmetrize(np.outer(psi, psi.conj())))

    @classmethod
    def from_matrix(cls, m, normalize: bool = False) -> "QuantumState":
        m = np.asarray(m, dtype=complex)
        if normalize:
            m = m / np.trace(m).real
        return cls(symmetrize(m))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "QuantumState":
        return cls(np.eye(dim, dtype=complex) / dim)

    def expect(self, op) -> float:
        """<op>_rho for a Hermitian ``op`` (Observable or matrix)."""
        m = op.matrix if isinstance(op, Observable) else np.asarray(op)
        return float(np.real(np.trace(self.rho @ m)))

    def is_pure(self, tol: float = 1e-10) -> bool:
        return abs(np.real(np.trace(self.rho @ self.rho)) - 1.0) < tol

    def pure_vector(self, tol: float = 1e-10) -> np.ndarray:
        """State vector of a pure state (global phase fixed by largest entry)."""
        w, v = np.linalg.eigh(self.rho)
        if abs(w[-1] - 1.0) > tol:
            raise ContractViolation("state is not pure")
        psi = v[:, -1]
        k = np.argmax(np.abs(psi))
        return psi * (abs(psi[k]) / psi[k])


@dataclass(frozen=True, eq=False)
class WeightedState:
    """Unnormalised post-measurement operator and its trace."""

    matrix: np.ndarray
    weight: float

    def normalized(self) -> QuantumState:
        return QuantumState(symmetrize(self.matrix / self.weight))


class Observable:
    """Hermitian matrix with its eigendecomposition computed once.

    Parameters
    ----------
    matrix : array_like
        Square Hermitian matrix.
    name : str, optional
        Label used in reports.
    """

    def __init__(self, matrix, name: str | None = None):
        m = np.asarray(matrix, dtype=complex)
        _check_square(m, "observable")
        if hermitian_defect(m) > HERMITIAN_TOL:
            raise ContractViolation(f"observable is not Hermitian (defect {hermitian_defect(m):.3g})")
        m = symmetrize(m)
        w, v = np.linalg.eigh(m)
        if np.max(np.abs((v * w) @ v.conj().T - m)) > SPECTRAL_TOL:
            raise ContractViolation("eigendecomposition failed to reconstruct the observable")
        self._matrix = _frozen(m)
        self._eigvals = np.array(w, dtype=float)
        self._eigvals.flags.writeable = False
        self._eigvecs = _frozen(v)
        self.name = name

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eigvals

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eigvecs

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self._eigvals)))

    @cached_property
    def clusters(self) -> list[tuple[float, np.ndarray]]:
        """Distinct eigenvalues with their spectral projectors.

        Eigenvalues closer than ``CLUSTER_GAP`` are grouped into one cluster.
        """
        out = []
        w, v = self._eigvals, self._eigvecs
        start = 0
        for k in range(1, len(w) + 1):
            if k == len(w) or w[k] - w[k - 1] > CLUSTER_GAP:
                cols = v[:, start:k]
                out.append((float(np.mean(w[start:k])), cols @ cols.conj().T))
                start = k
        return out

    def to_eigenbasis(self, m: np.ndarray) -> np.ndarray:
        return self._eigvecs.conj().T @ m @ self._eigvecs

    def from_eigenbasis(self, m: np.ndarray) -> np.ndarray:
        return self._eigvecs @ m @ self._eigvecs.conj().T

    def __matmul__(self, other):
        return self._matrix @ (other.matrix if isinstance(other, Observable) else other)

    def __repr__(self):
        label = self.name or "Observable"
        return f"{label}(dim={self.dim}, eigenvalues={np.round(self._eigvals, 6).tolist()})"


@dataclass(frozen=True)
class MeasurementSpec:
    """Observable measured with Gaussian precision ``precision``."""

    observable: Observable
    precision: float

    def __post_init__(self):
        if not np.isfinite(self.precision) or self.precision <= 0:
            raise ContractViolation(f"precision must be positive, got {self.precision!r}")

    @property
    def is_weak(self) -> bool:
        """True when the precision is at least ten spectral radii."""
        return self.precision >= 10.0 * self.observable.spectral_radius


@dataclass(frozen=True, eq=False)
class PostSelection:
    """Effect operator 0 <= Pi <= 1 of a final selective measurement."""

    effect: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.effect, dtype=complex)
        _check_square(e, "effect")
        if hermitian_defect(e) > HERMITIAN_TOL:
            raise ContractViolation("post-selection effect is not Hermitian")
        w = np.linalg.eigvalsh(symmetrize(e))
        if w.min() < -1e-12 or w.max() > 1 + 1e-12:
            raise ContractViolation(f"effect eigenvalues {w.min():.3g}..{w.max():.3g} outside [0, 1]")
        object.__setattr__(self, "effect", _frozen(symmetrize(e)))

    @property
    def dim(self) -> int:
        return self.effect.shape[0]

    @classmethod
    def onto(cls, psi) -> "PostSelection":
        """Projector |f><f| onto a (normalised) pure state."""
        return cls(QuantumState.from_vector(psi).rho)

    @classmethod
    def identity(cls, dim: int) -> "PostSelection":
        return cls(np.eye(dim, dtype=complex))

    def complement(self) -> "PostSelection":
        return PostSelection(np.eye(self.dim) - self.effect)


def _check_dims(obs: Observable, operand: np.ndarray) -> np.ndarray:
    operand = np.asarray(operand, dtype=complex)
    if operand.shape != (obs.dim, obs.dim):
        raise ContractViolation(
            f"operand shape {operand.shape} does not match observable dimension {obs.dim}"
        )
    return operand


def center_superop(obs: Observable, operand) -> np.ndarray:
    """Half anticommutator (A O + O A)/2."""
    o = _check_dims(obs, operand)
    a = obs.matrix
    return 0.5 * (a @ o + o @ a)


def delta_superop(obs: Observable, operand) -> np.ndarray:
    """Commutator A O - O A."""
    o = _check_dims(obs, operand)
    a = obs.matrix
    return a @ o - o @ a


def decoherence_superop(obs: Observable, operand, precision: float) -> np.ndarray:
    """exp(-A_delta^2 / (8 a^2)) applied to ``operand``.

    Acts on the eigen-operator |i><j| as multiplication by
    exp(-(a_i - a_j)^2 / (8 a^2)).
    """
    o = _check_dims(obs, operand)
    w = obs.eigenvalues
    factor = np.exp(-((w[:, None] - w[None, :]) ** 2) / (8.0 * precision**2))
    return obs.from_eigenbasis(factor * obs.to_eigenbasis(o))


def kraus_update(state: QuantumState, spec: MeasurementSpec, outcome: float) -> WeightedState:
    """Unnormalised post-measurement state sqrt(G) rho sqrt(G) and its trace.

    Raises
    ------
    OutcomeUnderflow
        If the trace (the outcome density) is below 1e-300.
    """
    obs = spec.observable
    if state.dim != obs.dim:
        raise ContractViolation("state and observable dimensions differ")
    k = np.sqrt(gaussian(outcome - obs.eigenvalues, spec.precision))
    rho_e = obs.to_eigenbasis(state.rho)
    post = symmetrize(obs.from_eigenbasis(k[:, None] * rho_e * k[None, :]))
    weight = float(np.real(np.trace(post)))
    if not weight >= UNDERFLOW_FLOOR:
        raise OutcomeUnderflow(f"Kraus weight {weight:.3g} at outcome {outcome!r}")
    return WeightedState(post, weight)


def outcome_density(state: QuantumState, spec: MeasurementSpec, outcome):
    """p_a(A) = sum_i <i|rho|i> G_a(A - a_i) in the observable's eigenbasis.

    ``outcome`` may be a scalar or an array.
    """
    obs = spec.observable
    if state.dim != obs.dim:
        raise ContractViolation("state and observable dimensions differ")
    pops = np.real(np.diag(obs.to_eigenbasis(state.rho)))
    x = np.asarray(outcome, dtype=float)
    dens = gaussian(x[..., None] - obs.eigenvalues, spec.precision) @ pops
    return float(dens) if dens.ndim == 0 else dens


PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
UP = np.array([1, 0], dtype=complex)
DOWN = np.array([0, 1], dtype=complex)


def pauli_along(direction) -> Observable:
    """Polarisation e . sigma along the unit vector ``direction``."""
    e = np.asarray(direction, dtype=float).ravel()
    if e.shape != (3,):
        raise ContractViolation("direction must be a 3-vector")
    if abs(np.linalg.norm(e) - 1.0) > 1e-10:
        raise ContractViolation(f"direction {e.tolist()} is not a unit vector")
    return Observable(e[0] * PAULI_X + e[1] * PAULI_Y + e[2] * PAULI_Z, name="sigma")


def sigma_x() -> Observable:
    return Observable(PAULI_X, name="sigma_x")


def sigma_y() -> Observable:
    return Observable(PAULI_Y, name="sigma_y")


def sigma_z() -> Observable:
    return Observable(PAULI_Z, name="sigma_z")


def spin_up() -> QuantumState:
    return QuantumState.from_vector(UP)


def spin_down() -> QuantumState:
    return QuantumState.from_vector(DOWN)
