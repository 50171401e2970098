"""Monte Carlo sampling of finite-precision sequential measurements.

Two paths exist:

* a reference path (``sample_measurement``, ``run_sequence``,
  ``run_strong_spin_sequence``) that threads a full density matrix through
  :func:`seqweak.qcore.kraus_update` one trajectory at a time;
* a batch path (``simulate``, ``stream_statistics``, ``run_postselected``)
  that pushes blocks of trajectories through :mod:`seqweak.kernels`.

Outcome products have variance of order prod(a_k^2), so the number of
trajectories needed for a fixed error grows accordingly.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import integrate, stats

from . import kernels
from .errors import ContractViolation, EstimatorUnavailable
from .qcore import (
    MeasurementSpec,
    Observable,
    PostSelection,
    QuantumState,
    kraus_update,
    outcome_density,
    pauli_along,
    symmetrize,
)
from .rng import BLOCK_SIZE, block_ranges, block_variates

MAX_STREAM_LENGTH = 8


@dataclass(frozen=True)
class TrajectoryRecord:
    """One sampled outcome sequence.

    ``final_state_weight`` is the joint outcome density of the sequence (for
    a mixed initial state in the batch path: along the sampled pure
    component).
    """

    outcomes: tuple[float, ...]
    accepted: bool | None
    trajectory_index: int
    final_state_weight: float


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    std_error: float
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 2:
            raise EstimatorUnavailable(f"{self.sample_count} samples are too few for an estimate")
        if not self.std_error >= 0:
            raise ContractViolation("negative standard error")

    def z_score(self, expected: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.mean == expected else float("inf")
        return (self.mean - expected) / self.std_error

    def agrees_with(self, expected: float, sigmas: float = 5.0) -> bool:
        return abs(self.z_score(expected)) <= sigmas


def combined_z(a: MomentEstimate, b: MomentEstimate) -> float:
    """Difference of two independent estimates in combined standard errors."""
    s = np.hypot(a.std_error, b.std_error)
    if s == 0:
        return 0.0 if a.mean == b.mean else float("inf")
    return (a.mean - b.mean) / s


# --- reference path --------------------------------------------------------


def sample_measurement(state: QuantumState, spec: MeasurementSpec, rng: np.random.Generator):
    """Draw one outcome of an unsharp measurement and the normalised post-state.

    The eigen-branch i is chosen with probability <i|rho|i>, then the outcome
    is a_i plus Gaussian noise of width ``spec.precision``.
    """
    outcome, (post, _) = _reference_step(state, spec, rng)
    return outcome, post


def run_sequence(
    state: QuantumState,
    specs: Sequence[MeasurementSpec],
    rng: np.random.Generator,
    postsel: PostSelection | None = None,
    trajectory_index: int = 0,
) -> TrajectoryRecord:
    """Sample the outcomes of ``specs`` applied in order to ``state``."""
    if not specs:
        raise ContractViolation("empty measurement sequence")
    outcomes = []
    log_w = 0.0
    for spec in specs:
        outcome, post = _reference_step(state, spec, rng)
        log_w += np.log(post[1])
        state = post[0]
        outcomes.append(outcome)
    accepted = None
    if postsel is not None:
        accepted = bool(rng.random() < state.expect(postsel.effect))
    return TrajectoryRecord(tuple(outcomes), accepted, trajectory_index, float(np.exp(log_w)))


def _reference_step(state, spec, rng):
    obs = spec.observable
    pops = np.clip(np.real(np.diag(obs.to_eigenbasis(state.rho))), 0.0, None)
    i = rng.choice(obs.dim, p=pops / pops.sum())
    outcome = float(obs.eigenvalues[i] + spec.precision * rng.standard_normal())
    w = kraus_update(state, spec, outcome)
    return outcome, (w.normalized(), w.weight)


def run_strong_spin_sequence(state: QuantumState, directions, rng: np.random.Generator) -> list[int]:
    """Sequential projective spin measurements with Lueders collapse."""
    if state.dim != 2:
        raise ContractViolation("spin sequences need a 2-dimensional state")
    rho = np.array(state.rho)
    out = []
    for e in directions:
        sigma = pauli_along(e).matrix
        p_up = 0.5 * (np.eye(2) + sigma)
        prob = float(np.clip(np.real(np.trace(p_up @ rho)), 0.0, 1.0))
        if rng.random() < prob:
            proj, s = p_up, 1
        else:
            proj, s = np.eye(2) - p_up, -1
        rho = proj @ rho @ proj
        rho = symmetrize(rho / np.real(np.trace(rho)))
        out.append(s)
    return out


# --- batch path -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SequencePlan:
    """Pre-rotated operands for the batch kernels."""

    branch_vecs: np.ndarray
    branch_cum: np.ndarray
    transitions: np.ndarray
    eigvals: np.ndarray
    precisions: np.ndarray
    effect: np.ndarray
    postselected: bool

    @property
    def steps(self) -> int:
        return len(self.precisions)

    def kernel_args(self):
        return (self.branch_vecs, self.branch_cum, self.transitions, self.eigvals, self.precisions, self.effect)

    @classmethod
    def build(cls, state: QuantumState, observables: Sequence[Observable], precisions, postsel=None):
        if not observables:
            raise ContractViolation("empty measurement sequence")
        d = state.dim
        for o in observables:
            if o.dim != d:
                raise ContractViolation("observable and state dimensions differ")
        prec = np.asarray(precisions, dtype=float)
        if prec.shape != (len(observables),) or np.any(prec < 0) or not np.all(np.isfinite(prec)):
            raise ContractViolation("precisions must be finite, non-negative, one per observable")
        w, v = np.linalg.eigh(state.rho)
        keep = w > 1e-14
        w, v = w[keep], v[:, keep]
        order = np.argsort(-w)
        w, v = w[order], v[:, order]
        cum = np.cumsum(w / w.sum())
        cum[-1] = 1.0
        bases = [o.eigenvectors for o in observables]
        branch = (bases[0].conj().T @ v).T.copy()
        trans = np.empty((len(observables), d, d), dtype=complex)
        trans[0] = np.eye(d)
        for k in range(1, len(observables)):
            trans[k] = bases[k].conj().T @ bases[k - 1]
        if postsel is None:
            effect = np.eye(d, dtype=complex)
        else:
            if postsel.dim != d:
                raise ContractViolation("post-selection dimension differs from the state")
            effect = bases[-1].conj().T @ postsel.effect @ bases[-1]
        eig = np.array([o.eigenvalues for o in observables], dtype=float)
        return cls(
            np.ascontiguousarray(branch),
            cum,
            np.ascontiguousarray(trans),
            eig,
            prec,
            np.ascontiguousarray(effect),
            postsel is not None,
        )


def _spec_parts(specs: Sequence[MeasurementSpec]):
    return [s.observable for s in specs], [s.precision for s in specs]


def _run_block(plan: SequencePlan, seed: int, block: int, lo: int, hi: int, kernel=None):
    var = block_variates(seed, block, plan.steps)
    fn = kernel or kernels.chain
    outcomes, logw, accept_p = fn(*plan.kernel_args(), var.u_mix, var.u_branch, var.z)
    accepted = var.v_accept < accept_p
    return outcomes[lo:hi], logw[lo:hi], accept_p[lo:hi], accepted[lo:hi]


def _map_blocks(fn, ranges, threads: int):
    if threads <= 1:
        return map(fn, ranges)
    pool = ThreadPoolExecutor(max_workers=threads)
    try:
        return list(pool.map(fn, ranges))
    finally:
        pool.shutdown()


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Materialised outcomes of a contiguous range of trajectories."""

    outcomes: np.ndarray
    log_weight: np.ndarray
    accept_prob: np.ndarray
    accepted: np.ndarray | None
    start: int = 0

    def __len__(self):
        return len(self.outcomes)

    def __getitem__(self, i: int) -> TrajectoryRecord:
        acc = None if self.accepted is None else bool(self.accepted[i])
        return TrajectoryRecord(
            tuple(float(x) for x in self.outcomes[i]), acc, self.start + i, float(np.exp(self.log_weight[i]))
        )

    def records(self) -> Iterable[TrajectoryRecord]:
        return (self[i] for i in range(len(self)))


def simulate(
    state: QuantumState,
    specs: Sequence[MeasurementSpec],
    trajectories: int,
    seed: int,
    postsel: PostSelection | None = None,
    threads: int = 1,
    start: int = 0,
) -> TrajectoryBatch:
    """Sample ``trajectories`` outcome sequences with indices start, start+1, ..."""
    obs, prec = _spec_parts(specs)
    return _simulate_plan(SequencePlan.build(state, obs, prec, postsel), trajectories, seed, threads, start)


def _simulate_plan(plan, trajectories, seed, threads=1, start=0, kernel=None):
    parts = list(
        _map_blocks(lambda r: _run_block(plan, seed, *r, kernel=kernel), block_ranges(trajectories, start), threads)
    )
    out = np.concatenate([p[0] for p in parts])
    logw = np.concatenate([p[1] for p in parts])
    ap = np.concatenate([p[2] for p in parts])
    acc = np.concatenate([p[3] for p in parts]) if plan.postselected else None
    return TrajectoryBatch(out, logw, ap, acc, start)


def replay_trajectory(
    state: QuantumState,
    specs: Sequence[MeasurementSpec],
    seed: int,
    index: int,
    postsel: PostSelection | None = None,
) -> TrajectoryRecord:
    """Recompute trajectory ``index`` of the run keyed by ``seed``."""
    return simulate(state, specs, 1, seed, postsel, start=index)[0]


# --- streaming statistics -------------------------------------------------


def ordered_subsets(n: int) -> list[tuple[int, ...]]:
    """All non-empty increasing 1-based index tuples, shortest first."""
    return [c for r in range(1, n + 1) for c in itertools.combinations(range(1, n + 1), r)]


class MomentAccumulator:
    """Running mean and co-moment matrix of vector samples (pairwise merging)."""

    def __init__(self, width: int):
        self.count = 0
        self.mean = np.zeros(width)
        self.comoment = np.zeros((width, width))

    def update(self, samples: np.ndarray) -> None:
        samples = np.asarray(samples, dtype=float)
        if len(samples) == 0:
            return
        m = samples.mean(axis=0)
        c = samples - m
        self._merge(len(samples), m, c.T @ c)

    def merge(self, other: "MomentAccumulator") -> None:
        if other.count:
            self._merge(other.count, other.mean, other.comoment)

    def _merge(self, n_b, mean_b, com_b):
        n_a = self.count
        total = n_a + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / total)
        self.comoment = self.comoment + com_b + np.outer(delta, delta) * (n_a * n_b / total)
        self.count = total

    def covariance(self) -> np.ndarray:
        if self.count < 2:
            raise EstimatorUnavailable("fewer than two samples")
        return self.comoment / (self.count - 1)


class SubsetStatistics:
    """Streaming estimators of every ordered-subset outcome product."""

    def __init__(self, steps: int):
        if steps > MAX_STREAM_LENGTH:
            raise ContractViolation(f"streaming supports at most {MAX_STREAM_LENGTH} steps")
        self.steps = steps
        self.subsets = ordered_subsets(steps)
        self._index = {s: k for k, s in enumerate(self.subsets)}
        self._acc = MomentAccumulator(len(self.subsets))

    @classmethod
    def from_outcomes(cls, outcomes) -> "SubsetStatistics":
        outcomes = np.atleast_2d(np.asarray(outcomes, dtype=float))
        stats = cls(outcomes.shape[1])
        stats.update(outcomes)
        return stats

    def features(self, outcomes: np.ndarray) -> np.ndarray:
        return np.stack([np.prod(outcomes[:, [k - 1 for k in s]], axis=1) for s in self.subsets], axis=1)

    def update(self, outcomes: np.ndarray) -> None:
        if len(outcomes):
            self._acc.update(self.features(outcomes))

    def merge(self, other: "SubsetStatistics") -> None:
        self._acc.merge(other._acc)

    @property
    def count(self) -> int:
        return self._acc.count

    @property
    def available(self) -> bool:
        return self._acc.count >= 2

    def _key(self, subset) -> int:
        key = tuple(int(k) for k in subset)
        if key not in self._index:
            raise ContractViolation(f"subset {key} is not an increasing subset of 1..{self.steps}")
        return self._index[key]

    def estimate(self, subset) -> MomentEstimate:
        """Mean and standard error of the product at ``subset``.

        Raises
        ------
        EstimatorUnavailable
            When the pool holds fewer than two trajectories.
        """
        if not self.available:
            raise EstimatorUnavailable(f"pool holds {self.count} trajectories")
        k = self._key(subset)
        var = self._acc.covariance()[k, k]
        return MomentEstimate(float(self._acc.mean[k]), float(np.sqrt(var / self.count)), self.count)

    def linear_estimate(self, coefficients: dict) -> MomentEstimate:
        """Estimate of sum_s c_s M[prod_s] with correlations accounted for."""
        if not self.available:
            raise EstimatorUnavailable(f"pool holds {self.count} trajectories")
        c = np.zeros(len(self.subsets))
        for s, w in coefficients.items():
            c[self._key(s)] += w
        var = float(c @ self._acc.covariance() @ c)
        return MomentEstimate(float(c @ self._acc.mean), float(np.sqrt(max(var, 0.0) / self.count)), self.count)


@dataclass
class PostselectionResult:
    """Pooled statistics of a (possibly post-selected) run.

    ``accepted`` and ``discarded`` always exist; a pool with fewer than two
    trajectories reports ``available == False`` rather than NaN estimates.
    """

    accepted: SubsetStatistics
    discarded: SubsetStatistics
    trajectories: int
    mean_accept_prob: float

    @property
    def acceptance_rate(self) -> float:
        return self.accepted.count / self.trajectories

    @property
    def discard_rate(self) -> float:
        return self.discarded.count / self.trajectories

    def rate_std_error(self) -> float:
        p = self.acceptance_rate
        return float(np.sqrt(max(p * (1 - p), 0.0) / self.trajectories))

    @property
    def all(self) -> SubsetStatistics:
        merged = SubsetStatistics(self.accepted.steps)
        merged.merge(self.accepted)
        merged.merge(self.discarded)
        return merged


def _stream_plan(plan: SequencePlan, trajectories: int, seed: int, threads: int = 1, kernel=None):
    n = plan.steps

    def work(r):
        out, _, ap, acc = _run_block(plan, seed, *r, kernel=kernel)
        a, d = SubsetStatistics(n), SubsetStatistics(n)
        a.update(out[acc])
        d.update(out[~acc])
        return a, d, float(ap.sum())

    accepted, discarded = SubsetStatistics(n), SubsetStatistics(n)
    p_sum = 0.0
    for a, d, p in _map_blocks(work, block_ranges(trajectories), threads):
        accepted.merge(a)
        discarded.merge(d)
        p_sum += p
    return PostselectionResult(accepted, discarded, trajectories, p_sum / trajectories)


def stream_statistics(
    state: QuantumState,
    specs: Sequence[MeasurementSpec],
    trajectories: int,
    seed: int,
    postsel: PostSelection | None = None,
    threads: int = 1,
) -> PostselectionResult:
    """Run ``trajectories`` sequences keeping only pooled moment statistics.

    Memory use is independent of ``trajectories``. Without post-selection
    every trajectory lands in the accepted pool.
    """
    obs, prec = _spec_parts(specs)
    plan = SequencePlan.build(state, obs, prec, postsel)
    return _stream_plan(plan, trajectories, seed, threads)


def run_postselected(
    state: QuantumState,
    specs: Sequence[MeasurementSpec],
    postsel: PostSelection,
    trajectories: int,
    rng_seed: int,
    threads: int = 1,
) -> PostselectionResult:
    """Sample, then accept each trajectory with probability tr(Pi rho_final)."""
    if trajectories < 1:
        raise ContractViolation("trajectories must be >= 1")
    return stream_statistics(state, specs, trajectories, rng_seed, postsel, threads)


def spin_plan(state: QuantumState, directions, precision: float | Sequence[float] = 0.0) -> SequencePlan:
    """Plan for polarisation measurements; precision 0 means projective."""
    obs = [pauli_along(e) for e in directions]
    prec = np.broadcast_to(np.asarray(precision, dtype=float), (len(obs),))
    return SequencePlan.build(state, obs, prec)


def spin_statistics(
    state: QuantumState, directions, trajectories: int, seed: int, precision=0.0, threads: int = 1
) -> SubsetStatistics:
    """Pooled product statistics of a spin sequence (strong when precision is 0)."""
    return _stream_plan(spin_plan(state, directions, precision), trajectories, seed, threads).accepted


def estimate_product(records, subset: Sequence[int]) -> MomentEstimate:
    """Sample mean and standard error of the outcome product at ``subset``.

    ``records`` is a :class:`TrajectoryBatch`, an (N, n) outcome array, or a
    sequence of :class:`TrajectoryRecord`. Positions are 1-based.
    """
    if isinstance(records, TrajectoryBatch):
        arr = records.outcomes
    elif isinstance(records, np.ndarray):
        arr = np.atleast_2d(records)
    else:
        arr = np.array([r.outcomes for r in records], dtype=float)
    if len(arr) < 2:
        raise EstimatorUnavailable(f"{len(arr)} records are too few")
    cols = [k - 1 for k in subset]
    if not cols or min(cols) < 0 or max(cols) >= arr.shape[1]:
        raise ContractViolation(f"subset {list(subset)} out of range")
    prod = np.prod(arr[:, cols], axis=1)
    return MomentEstimate(float(prod.mean()), float(prod.std(ddof=1) / np.sqrt(len(prod))), len(prod))


def outcome_cdf(state: QuantumState, spec: MeasurementSpec, points: int = 20001):
    """CDF of a single outcome by trapezoidal quadrature of its density.

    Returns a vectorised callable; the grid spans the spectrum padded by
    ten widths on each side.
    """
    ev = spec.observable.eigenvalues
    lo, hi = ev.min() - 10 * spec.precision, ev.max() + 10 * spec.precision
    grid = np.linspace(lo, hi, points)
    cdf = integrate.cumulative_trapezoid(outcome_density(state, spec, grid), grid, initial=0.0)
    cdf /= cdf[-1]
    return lambda x: np.interp(x, grid, cdf, left=0.0, right=1.0)


class KSResult(NamedTuple):
    statistic: float
    critical: float
    sample_count: int

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical


def single_outcome_ks(
    state: QuantumState, spec: MeasurementSpec, samples: int, seed: int, level: float = 0.01
) -> KSResult:
    """Kolmogorov-Smirnov test of sampled outcomes against the quadrature CDF."""
    out = simulate(state, [spec], samples, seed).outcomes[:, 0]
    d = stats.kstest(out, outcome_cdf(state, spec)).statistic
    return KSResult(float(d), float(stats.kstwo.ppf(1.0 - level, samples)), samples)


__all__ = [
    "KSResult",
    "BLOCK_SIZE",
    "MomentAccumulator",
    "MomentEstimate",
    "PostselectionResult",
    "SequencePlan",
    "SubsetStatistics",
    "TrajectoryBatch",
    "TrajectoryRecord",
    "combined_z",
    "estimate_product",
    "outcome_cdf",
    "ordered_subsets",
    "replay_trajectory",
    "run_postselected",
    "run_sequence",
    "run_strong_spin_sequence",
    "sample_measurement",
    "simulate",
    "single_outcome_ks",
    "spin_plan",
    "spin_statistics",
    "stream_statistics",
]
