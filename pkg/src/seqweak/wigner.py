"""Canonical variables in a truncated Fock space, Wigner functions and moments.

Units: hbar = 1, [q, p] = i, q = (a + a^dag)/sqrt(2), p = (a - a^dag)/(i sqrt(2)).
The vacuum Wigner function is exp(-q^2 - p^2)/pi.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln

from .analytic import finite_a_product_moment
from .errors import ContractViolation, EstimatorUnavailable, TruncationError
from .montecarlo import MomentEstimate, SubsetStatistics
from .qcore import MeasurementSpec, Observable, QuantumState, symmetrize

DEFAULT_DIM = 32
EDGE_OCCUPATION = 1e-6
EDGE_DECAY = 1e-10


def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


@dataclass(frozen=True, eq=False)
class CanonicalPair:
    """Truncated position and momentum operators."""

    dim: int
    q_op: Observable
    p_op: Observable

    def linear(self, u: float, v: float) -> Observable:
        """u q + v p."""
        return Observable(u * self.q_op.matrix + v * self.p_op.matrix, name=f"{u:g}q+{v:g}p")

    def commutator_defect(self) -> float:
        """Max deviation of [q, p] from i on the leading (D-1) block."""
        q, p = self.q_op.matrix, self.p_op.matrix
        c = (q @ p - p @ q)[: self.dim - 1, : self.dim - 1]
        return float(np.max(np.abs(c - 1j * np.eye(self.dim - 1))))


def canonical_pair(dim: int = DEFAULT_DIM) -> CanonicalPair:
    """Fock-basis q and p truncated to ``dim`` levels."""
    if dim < 2:
        raise ContractViolation(f"truncation dimension {dim} is too small")
    a = annihilation(dim)
    q = (a + a.conj().T) / np.sqrt(2.0)
    p = (a - a.conj().T) / (1j * np.sqrt(2.0))
    return CanonicalPair(dim, Observable(q, name="q"), Observable(p, name="p"))


# --- states ----------------------------------------------------------------


def fock_state(dim: int, n: int) -> QuantumState:
    psi = np.zeros(dim, dtype=complex)
    psi[n] = 1.0
    return QuantumState.from_vector(psi)


def vacuum(dim: int = DEFAULT_DIM) -> QuantumState:
    return fock_state(dim, 0)


def displaced_vacuum(dim: int, alpha: complex) -> QuantumState:
    """exp(alpha a^dag - alpha^* a)|0>, exponentiated numerically.

    The displacement is built in a space twice as large and cut back so the
    truncation edge does not leak into the low levels.
    """
    big = 2 * dim
    a = annihilation(big)
    psi = expm(alpha * a.conj().T - np.conj(alpha) * a)[:, 0][:dim]
    return QuantumState.from_vector(psi)


def squeezed_vacuum(dim: int, r: float) -> QuantumState:
    """exp(r (a^2 - a^dag^2)/2)|0>; r > 0 squeezes q."""
    big = 2 * dim
    a = annihilation(big)
    psi = expm(0.5 * r * (a @ a - a.conj().T @ a.conj().T))[:, 0][:dim]
    return QuantumState.from_vector(psi)


def thermal_state(dim: int, mean_photons: float) -> QuantumState:
    n = np.arange(dim)
    w = (mean_photons / (1.0 + mean_photons)) ** n
    return QuantumState(np.diag(w / w.sum()).astype(complex))


def check_edge(state: QuantumState, fraction: float = 0.25, tol: float = EDGE_OCCUPATION) -> float:
    """Occupation of the top ``fraction`` of Fock levels; raises above ``tol``."""
    d = state.dim
    start = d - int(np.ceil(fraction * d))
    occ = float(np.sum(np.real(np.diag(state.rho))[start:]))
    if occ >= tol:
        raise TruncationError(f"occupation {occ:.3g} of levels >= {start} exceeds {tol:g}")
    return occ


# --- Weyl-ordered moments --------------------------------------------------


def weyl_operator(pair: CanonicalPair, q_power: int, p_power: int) -> np.ndarray:
    """Average of all distinct orderings of q^q_power p^p_power."""
    word = "q" * q_power + "p" * p_power
    mats = {"q": pair.q_op.matrix, "p": pair.p_op.matrix}
    d = pair.dim
    if not word:
        return np.eye(d, dtype=complex)
    orders = set(itertools.permutations(word))
    total = np.zeros((d, d), dtype=complex)
    for order in orders:
        m = np.eye(d, dtype=complex)
        for c in order:
            m = m @ mats[c]
        total += m
    return total / len(orders)


def weyl_moment(state: QuantumState, pair: CanonicalPair, q_power: int, p_power: int) -> float:
    """<W(q^m p^n)>: expectation of the fully symmetrised product.

    Raises
    ------
    TruncationError
        If the state occupies the top quarter of the Fock space.
    """
    if q_power < 0 or p_power < 0:
        raise ContractViolation("powers must be non-negative")
    if state.dim != pair.dim:
        raise ContractViolation("state and canonical pair dimensions differ")
    check_edge(state)
    return state.expect(symmetrize(weyl_operator(pair, q_power, p_power)))


# --- Wigner function -------------------------------------------------------


@dataclass(frozen=True)
class PhaseSpaceGrid:
    extent: float
    points: int = 201

    @classmethod
    def default(cls, dim: int) -> "PhaseSpaceGrid":
        return cls(max(8.0, minimum_extent(dim)), 201)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.points)


def minimum_extent(dim: int) -> float:
    return 4.0 + np.sqrt(dim)


@dataclass(frozen=True, eq=False)
class WignerTable:
    q_grid: np.ndarray
    p_grid: np.ndarray
    values: np.ndarray  # values[i, j] = W(q_grid[i], p_grid[j])

    @property
    def dq(self) -> float:
        return float(self.q_grid[1] - self.q_grid[0])

    @property
    def dp(self) -> float:
        return float(self.p_grid[1] - self.p_grid[0])

    def integral(self, weights: np.ndarray | None = None) -> float:
        f = self.values if weights is None else self.values * weights
        return float(trapezoid(trapezoid(f, self.p_grid, axis=1), self.q_grid))

    def normalization(self) -> float:
        return self.integral()

    def to_csv(self, path) -> None:
        """Write columns q, p, w (one row per grid point)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "p", "w"])
            for i, q in enumerate(self.q_grid):
                for j, p in enumerate(self.p_grid):
                    w.writerow([repr(float(q)), repr(float(p)), repr(float(self.values[i, j]))])

    @classmethod
    def from_csv(cls, path) -> "WignerTable":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1)
        q = np.unique(data[:, 0])
        p = np.unique(data[:, 1])
        return cls(q, p, data[:, 2].reshape(len(q), len(p)))


def _wigner_values(rho: np.ndarray, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Fock-basis Laguerre expansion of W(q, p) on the outer grid.

    W = sum_n rho_nn W_nn + 2 Re sum_{m>n} rho_mn W_mn with
    W_mn = (-1)^n/pi sqrt(n!/m!) (sqrt2 (q - ip))^(m-n) L_n^(m-n)(2r^2) e^(-r^2).
    """
    qq, pp = np.meshgrid(q, p, indexing="ij")
    r2 = qq**2 + pp**2
    z = np.sqrt(2.0) * (qq - 1j * pp)
    gauss = np.exp(-r2)
    d = rho.shape[0]
    w = np.zeros(qq.shape, dtype=complex)
    for n in range(d):
        for m in range(n, d):
            c = rho[m, n] if m == n else 2.0 * rho[m, n]
            if c == 0:
                continue
            k = m - n
            pref = (-1) ** n * np.exp(0.5 * (gammaln(n + 1) - gammaln(m + 1))) / np.pi
            term = pref * z**k * eval_genlaguerre(n, k, 2.0 * r2) * gauss
            w += c * term
    return w.real


def wigner_table(state: QuantumState, pair: CanonicalPair | None = None, grid: PhaseSpaceGrid | None = None) -> WignerTable:
    """W(q, p) of ``state`` on a square grid.

    Raises
    ------
    ContractViolation
        If the grid extent is below 4 + sqrt(D).
    """
    d = state.dim
    if pair is not None and pair.dim != d:
        raise ContractViolation("state and canonical pair dimensions differ")
    grid = grid or PhaseSpaceGrid.default(d)
    if grid.extent < minimum_extent(d) - 1e-12:
        raise ContractViolation(f"grid extent {grid.extent} below {minimum_extent(d):.3f}")
    axis = grid.axis()
    return WignerTable(axis, axis.copy(), _wigner_values(np.asarray(state.rho), axis, axis))


def wigner_moment(table: WignerTable, q_power: int, p_power: int) -> float:
    """Quadrature of W q^m p^n over the table.

    Raises
    ------
    ContractViolation
        If the integrand does not decay below 1e-10 on the grid boundary.
    """
    qq, pp = np.meshgrid(table.q_grid, table.p_grid, indexing="ij")
    f = qq**q_power * pp**p_power
    integrand = table.values * f
    edge = max(
        np.abs(integrand[0]).max(),
        np.abs(integrand[-1]).max(),
        np.abs(integrand[:, 0]).max(),
        np.abs(integrand[:, -1]).max(),
    )
    if edge > EDGE_DECAY:
        raise ContractViolation(f"integrand reaches {edge:.3g} at the grid edge")
    return table.integral(f)


# --- tomography ------------------------------------------------------------


@dataclass
class TomographyTable:
    """Wigner moments estimated from sequential-measurement statistics."""

    moments: dict[str, MomentEstimate]
    cross: dict[str, MomentEstimate]

    def __getitem__(self, key: str) -> MomentEstimate:
        return self.moments[key]


def _positions(order: str, letter: str) -> list[int]:
    return [k + 1 for k, c in enumerate(order) if c == letter]


def _recipes(mixed_order: str):
    """Estimator recipes: name -> (family, {subset: coefficient})."""
    if sorted(mixed_order) != sorted("qqpp"):
        raise ContractViolation(f"mixed order {mixed_order!r} must hold two q and two p")
    qi, pi = _positions(mixed_order, "q"), _positions(mixed_order, "p")
    moments = {
        "q": ("qq", {(1,): 0.5, (2,): 0.5}),
        "p": ("pp", {(1,): 0.5, (2,): 0.5}),
        "q2": ("qq", {(1, 2): 1.0}),
        "p2": ("pp", {(1, 2): 1.0}),
        "qp": ("mixed", {tuple(sorted((i, j))): 0.25 for i in qi for j in pi}),
        "q2p": ("mixed", {tuple(sorted(qi + [j])): 0.5 for j in pi}),
        "qp2": ("mixed", {tuple(sorted(pi + [i])): 0.5 for i in qi}),
        "q2p2": ("mixed", {(1, 2, 3, 4): 1.0}),
    }
    cross = {
        f"q{a}_p{b}": ("mixed", {tuple(sorted((i, j))): 1.0})
        for a, i in enumerate(qi, 1)
        for b, j in enumerate(pi, 1)
    }
    return moments, cross


def tomography_second_moments(
    qq: SubsetStatistics,
    pp: SubsetStatistics,
    mixed: SubsetStatistics,
    mixed_order: str = "qpqp",
) -> TomographyTable:
    """Second (and a few higher) Wigner moments from three record families.

    Parameters
    ----------
    qq, pp : SubsetStatistics
        Two successive measurements of q (resp. p).
    mixed : SubsetStatistics
        Four measurements, two of each variable, in the order ``mixed_order``.

    Returns
    -------
    TomographyTable
        ``moments`` holds q, p, q2, p2, qp, q2p, qp2, q2p2; ``cross`` the four
        individual estimators q1_p1 ... q2_p2 whose average gives ``qp``.
    """
    families = {"qq": qq, "pp": pp, "mixed": mixed}
    for name, n in (("qq", 2), ("pp", 2), ("mixed", 4)):
        fam = families[name]
        if fam is None:
            raise ContractViolation(f"missing record family {name}")
        if fam.steps != n:
            raise ContractViolation(f"record family {name} has {fam.steps} steps, expected {n}")
    moments, cross = _recipes(mixed_order)
    for name, fam in families.items():
        if not fam.available:
            raise EstimatorUnavailable(f"record family {name} is empty")

    def run(recipes):
        return {k: families[f].linear_estimate(c) for k, (f, c) in recipes.items()}

    return TomographyTable(run(moments), run(cross))


def tomography_finite_a(
    state: QuantumState, pair: CanonicalPair, precision: float, mixed_order: str = "qpqp"
) -> dict[str, float]:
    """Exact finite-precision means of every tomography estimator.

    At finite ``precision`` each q measurement diffuses p by 1/(4a^2) (and
    vice versa), so estimators spanning an intermediate measurement are
    biased by O(a^-2) relative to the Weyl moments.
    """
    ops = {"q": pair.q_op, "p": pair.p_op}
    words = {"qq": "qq", "pp": "pp", "mixed": mixed_order}
    moments, cross = _recipes(mixed_order)
    out = {}
    for name, (fam, coefs) in {**moments, **cross}.items():
        specs = [MeasurementSpec(ops[c], precision) for c in words[fam]]
        out[name] = sum(w * finite_a_product_moment(specs, state, subset=s) for s, w in coefs.items())
    return out


MOMENT_POWERS = {
    "q": (1, 0),
    "p": (0, 1),
    "q2": (2, 0),
    "p2": (0, 2),
    "qp": (1, 1),
    "q2p": (2, 1),
    "qp2": (1, 2),
    "q2p2": (2, 2),
}
