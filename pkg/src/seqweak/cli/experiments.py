"""Experiment pipelines behind ``seqweak run``.

Every pipeline returns a flat table (header + rows) and a list of
statistical-guard failures (Monte Carlo estimates further than
``guard_sigma`` standard errors from their exact finite-precision value).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import analytic, montecarlo, wigner
from ..errors import DegeneratePostselection
from ..qcore import MeasurementSpec
from .config import ExperimentConfig

KS_SAMPLES = 10**5


@dataclass
class Table:
    header: list[str]
    rows: list[list] = field(default_factory=list)
    guard_failures: list[str] = field(default_factory=list)

    def add(self, *row):
        self.rows.append(list(row))

    def guard(self, label: str, z: float, limit: float | None):
        if limit is not None and np.isfinite(z) and abs(z) > limit:
            self.guard_failures.append(f"{label}: |z| = {abs(z):.2f} > {limit:g}")
        elif limit is not None and not np.isfinite(z):
            self.guard_failures.append(f"{label}: non-finite z")


def _label(subset) -> str:
    return " ".join(str(k) for k in subset)


def _rank_one_vector(effect: np.ndarray):
    w, v = np.linalg.eigh(effect)
    if abs(w[-1] - 1.0) < 1e-10 and np.all(np.abs(w[:-1]) < 1e-10):
        return v[:, -1]
    return None


def correlate(cfg: ExperimentConfig, threads: int = 1) -> Table:
    """Closed-form moments; each precision adds a finite-a row (same a at every step)."""
    obs = cfg.observables
    analytic_value = analytic.product_moment(obs, cfg.state)
    extra, values = [], []
    if cfg.postselection is not None:
        extra.append("postselected")
        values.append(analytic.product_moment_postselected(obs, cfg.state, cfg.postselection))
        final = _rank_one_vector(cfg.postselection.effect)
        if final is not None and cfg.state.is_pure():
            extra.append("partition_sum")
            values.append(analytic.partition_sum_moment(obs, cfg.state.pure_vector(), final))
    interchangeable = int(analytic.interchangeability_check(obs))
    if not cfg.precisions:
        t = Table(["n", "analytic", "interchangeable"] + extra)
        t.add(len(obs), analytic_value, interchangeable, *values)
        return t
    t = Table(["a", "n", "analytic", "finite_a", "deviation", "interchangeable"] + extra)
    reference = values[0] if cfg.postselection is not None else analytic_value
    for a in cfg.precisions:
        specs = [MeasurementSpec(o, a) for o in obs]
        fa = analytic.finite_a_product_moment(specs, cfg.state, cfg.postselection)
        t.add(a, len(obs), analytic_value, fa, abs(fa - reference), interchangeable, *values)
    return t


def simulate(cfg: ExperimentConfig, threads: int = 1) -> Table:
    specs = [MeasurementSpec(o, a) for o, a in zip(cfg.observables, cfg.precisions)]
    res = montecarlo.stream_statistics(cfg.state, specs, cfg.trajectories, cfg.seed, cfg.postselection, threads)
    t = Table(["pool", "subset", "estimate", "std_error", "count", "exact", "weak_limit", "z"])
    pools = [("all", res.all, None)]
    if cfg.postselection is not None:
        pools += [("accepted", res.accepted, cfg.postselection), ("discarded", res.discarded, cfg.postselection.complement())]
    for name, stats, effect in pools:
        if not stats.available:
            t.add(name, "", "", "", stats.count, "", "", "")
            continue
        for subset in stats.subsets:
            est = stats.estimate(subset)
            exact = analytic.finite_a_product_moment(specs, cfg.state, effect, subset=subset)
            sub_obs = [cfg.observables[k - 1] for k in subset]
            weak = ""
            if effect is None:
                weak = analytic.product_moment(sub_obs, cfg.state)
            elif len(subset) == len(specs):
                try:
                    weak = analytic.product_moment_postselected(sub_obs, cfg.state, effect)
                except DegeneratePostselection:
                    pass
            z = est.z_score(exact)
            t.add(name, _label(subset), est.mean, est.std_error, est.sample_count, exact, weak, z)
            t.guard(f"{name} [{_label(subset)}]", z, cfg.guard_sigma)
    if len(specs) == 1 and cfg.postselection is None:
        ks = montecarlo.single_outcome_ks(cfg.state, specs[0], min(cfg.trajectories, KS_SAMPLES), cfg.seed)
        # KS row: estimate holds the statistic, exact the 1% critical value
        t.add("ks", "1", ks.statistic, "", ks.sample_count, ks.critical, "", "")
        if not ks.passed:
            t.guard_failures.append(f"KS statistic {ks.statistic:.4g} >= {ks.critical:.4g}")
    return t


def reselect_anomaly(cfg: ExperimentConfig, threads: int = 1) -> Table:
    obs = cfg.observables
    post = cfg.postselection
    discard = post.complement()
    t = Table(
        [
            "a",
            "discard_rate",
            "discarded_product_mean",
            "product_of_both",
            "analytic_rate",
            "analytic_mean",
            "discarded_product_stderr",
            "discard_count",
            "exact_rate",
            "exact_mean",
            "accepted_product_mean",
            "accepted_product_stderr",
            "exact_accepted_mean",
        ]
    )
    n = len(obs)
    same = all(o is obs[0] or np.array_equal(o.matrix, obs[0].matrix) for o in obs)
    spread = np.sqrt(max(analytic.quantum_variance(obs[0], cfg.state), 0.0))
    full = tuple(range(1, n + 1))
    for a in cfg.precisions:
        specs = [MeasurementSpec(o, a) for o in obs]
        res = montecarlo.run_postselected(cfg.state, specs, post, cfg.trajectories, cfg.seed, threads)
        exact_rate = analytic.finite_a_acceptance(specs, cfg.state, discard)
        exact_mean = analytic.finite_a_product_moment(specs, cfg.state, discard)
        exact_acc = analytic.finite_a_product_moment(specs, cfg.state, post)
        if same and n <= 2:
            asym = analytic.discard_asymptotics(n, a, spread)
            a_rate, a_mean = asym.rate, asym.conditional_mean
        else:
            a_rate = a_mean = ""
        rate = res.discard_rate
        if res.discarded.available:
            d = res.discarded.estimate(full)
            d_mean, d_err = d.mean, d.std_error
            t.guard(f"a={a:g} discarded mean", d.z_score(exact_mean), cfg.guard_sigma)
        else:
            d_mean = d_err = ""
        acc = res.accepted.estimate(full)
        rate_err = np.sqrt(exact_rate * (1 - exact_rate) / cfg.trajectories)
        t.guard(f"a={a:g} discard rate", (rate - exact_rate) / rate_err if rate_err > 0 else 0.0, cfg.guard_sigma)
        t.guard(f"a={a:g} accepted mean", acc.z_score(exact_acc), cfg.guard_sigma)
        both = rate * d_mean if d_mean != "" else ""
        t.add(a, rate, d_mean, both, a_rate, a_mean, d_err, res.discarded.count, exact_rate, exact_mean,
              acc.mean, acc.std_error, exact_acc)
    return t


def spin_compare(cfg: ExperimentConfig, threads: int = 1) -> Table:
    dirs = cfg.directions
    n = len(dirs)
    full = tuple(range(1, n + 1))
    closed = analytic.spin_closed_form(dirs, cfg.state)
    weak = montecarlo.spin_statistics(cfg.state, dirs, cfg.trajectories, cfg.seed, cfg.precisions[0], threads)
    strong_seed = (cfg.seed + 1) % 2**64
    strong = montecarlo.spin_statistics(cfg.state, dirs, cfg.trajectories, strong_seed, 0.0, threads)
    w, s = weak.estimate(full), strong.estimate(full)
    t = Table(["closed_form", "weak_estimate", "weak_stderr", "strong_estimate", "strong_stderr",
               "weak_z", "strong_z", "weak_strong_z"])
    wz, sz, ws = w.z_score(closed), s.z_score(closed), montecarlo.combined_z(w, s)
    t.add(closed, w.mean, w.std_error, s.mean, s.std_error, wz, sz, ws)
    t.guard("weak vs closed form", wz, cfg.guard_sigma)
    t.guard("strong vs closed form", sz, cfg.guard_sigma)
    t.guard("weak vs strong", ws, cfg.guard_sigma)
    return t


def run_tomography(state, dim: int, precision: float, trajectories: int, seed: int,
                   mixed_order: str = "qpqp", threads: int = 1):
    """Sample the three record families and build the moment table."""
    pair = wigner.canonical_pair(dim)
    q, p = pair.q_op, pair.p_op

    def family(ops, s):
        specs = [MeasurementSpec(o, precision) for o in ops]
        return montecarlo.stream_statistics(state, specs, trajectories, s, None, threads).accepted

    qq = family([q, q], seed)
    pp = family([p, p], (seed + 1) % 2**64)
    mixed = family([q if c == "q" else p for c in mixed_order], (seed + 2) % 2**64)
    return pair, wigner.tomography_second_moments(qq, pp, mixed, mixed_order)


def tomography(cfg: ExperimentConfig, threads: int = 1) -> Table:
    a = cfg.precisions[0]
    pair, table = run_tomography(cfg.state, cfg.dimension, a, cfg.trajectories, cfg.seed, cfg.mixed_order, threads)
    wt = wigner.wigner_table(cfg.state, pair)
    exact = wigner.tomography_finite_a(cfg.state, pair, a, cfg.mixed_order)
    t = Table(["moment", "estimate", "std_error", "weyl", "wigner", "finite_a", "z_weyl", "z_finite_a"])
    rows = [(name, est, wigner.MOMENT_POWERS[name]) for name, est in table.moments.items()]
    rows += [(name, est, (1, 1)) for name, est in table.cross.items()]
    for name, est, (qpow, ppow) in rows:
        weyl = wigner.weyl_moment(cfg.state, pair, qpow, ppow)
        wig = wigner.wigner_moment(wt, qpow, ppow)
        z_fa = est.z_score(exact[name])
        t.add(name, est.mean, est.std_error, weyl, wig, exact[name], est.z_score(weyl), z_fa)
        t.guard(name, z_fa, cfg.guard_sigma)
    return t


def quasi_dist(cfg: ExperimentConfig, threads: int = 1) -> Table:
    qd = analytic.quasi_distribution(cfg.observables, cfg.state)
    n = qd.length
    t = Table([f"A{k}" for k in range(1, n + 1)] + ["weight"])
    order = np.lexsort(qd.support.T[::-1])
    for i in order:
        t.add(*[float(v) for v in qd.support[i]], float(qd.weights[i]))
    return t


PIPELINES = {
    "correlate": correlate,
    "simulate": simulate,
    "reselect-anomaly": reselect_anomaly,
    "spin-compare": spin_compare,
    "tomography": tomography,
    "quasi-dist": quasi_dist,
}
