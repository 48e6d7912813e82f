"""Statistics that connect simulated genealogies to kernel predictions.

Everything here is a pure aggregation: inputs are arrays, logs or paths that
are never mutated, and results are small frozen records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import IncompleteSpineError, InsufficientDataError
from .geometry import DomainSpec, KernelEvaluator, dist_to_boundary
from .genealogy import GenealogyLog, LineagePath, SpineEstimate, spine_branch_times

LEVEL = 0.01
# Constant in the n^{-1/2} bound on the empirical-measure error.
VILLEMONAIS_CONSTANT = 2.0 * (1.0 + math.sqrt(2.0))
NEAR_FACE_WIDTH = 0.2
NEAR_FACE_MIN = 1000
EXPONENT_POINTS = 30
BOOTSTRAP_RESAMPLES = 1000


@dataclass(frozen=True)
class EmpiricalSample:
    values: np.ndarray
    weights: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != vals.shape[:1]:
                raise ValueError("weights must have one entry per value")
            if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
                raise ValueError("weights must be nonnegative and sum to 1")
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class FitReport:
    statistic: float
    sample_size: int
    threshold: float
    label: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.statistic < self.threshold)


def ks_threshold(size: int, level: float = LEVEL) -> float:
    """Critical value of the one-sample KS statistic at ``level``."""
    return float(stats.kstwo.ppf(1.0 - level, size))


def empirical_functional(source, f: Callable, t: float | None = None) -> float:
    """Average of ``f`` over a population.

    ``source`` is an array of positions (or anything with ``.positions``),
    in which case ``f`` gets the positions array, or a sequence of
    :class:`LineagePath`, in which case ``f`` gets each path cut at ``t``.
    """
    if hasattr(source, "positions"):
        source = source.positions
    if isinstance(source, np.ndarray):
        if source.size == 0:
            raise InsufficientDataError("empty population")
        vals = np.asarray(f(source), dtype=float)
    else:
        paths = list(source)
        if not paths:
            raise InsufficientDataError("empty population")
        vals = np.array([float(f(p if t is None else p.restrict(t))) for p in paths])
    if np.any(np.abs(vals) > 1.0 + 1e-12):
        raise ValueError("functional must be bounded by 1")
    return float(vals.mean())


def ks_distance(sample: EmpiricalSample | Sequence[float], cdf: Callable,
                level: float = LEVEL) -> FitReport:
    if not isinstance(sample, EmpiricalSample):
        sample = EmpiricalSample(np.asarray(sample, dtype=float))
    x = sample.values
    if x.ndim != 1:
        raise ValueError("KS distance needs a one-dimensional sample")
    if len(x) == 0:
        raise InsufficientDataError("empty sample")
    if sample.weights is None:
        stat = float(stats.kstest(x, cdf).statistic)
        size = len(x)
    else:
        order = np.argsort(x, kind="stable")
        xs, w = x[order], sample.weights[order]
        upper = np.cumsum(w)
        fx = cdf(xs)
        stat = float(max(np.max(upper - fx), np.max(fx - (upper - w))))
        # Kish effective size for the critical value.
        size = max(1, int(round(1.0 / np.sum(w**2))))
    return FitReport(stat, size, ks_threshold(size, level), sample.label)


# ---------------------------------------------------------------------------
# n^{-1/2} decay of the empirical-measure error


@dataclass(frozen=True)
class VillemonaisReport:
    n_values: tuple
    mean_gap: tuple
    se_gap: tuple
    bound: tuple
    slope: float
    intercept: float
    constant: float = VILLEMONAIS_CONSTANT

    @property
    def within_bound(self) -> tuple:
        """Per ``n``: is the gap below the bound allowing three standard errors."""
        return tuple(m - 3.0 * s <= b for m, s, b in zip(self.mean_gap, self.se_gap, self.bound))

    def rows(self):
        for n, m, s, b, ok in zip(self.n_values, self.mean_gap, self.se_gap, self.bound,
                                  self.within_bound):
            yield {"n": n, "mean_gap": m, "se_gap": s, "bound": b, "within_bound": ok}


def loglog_slope(xs, ys) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def villemonais_gap(gaps: dict, survival_moments: dict) -> VillemonaisReport:
    """Fit the decay of ``E|H_t^n(f) - E~_t(f)|`` in ``n`` and compare with the bound.

    ``gaps[n]`` holds one absolute error per replica; ``survival_moments[n]``
    is the replica average of ``P_mu_n(tau > t)^{-2}``.
    """
    ns = sorted(gaps)
    if len(ns) < 3:
        raise InsufficientDataError("need at least three population sizes")
    means, ses, bounds = [], [], []
    for n in ns:
        g = np.asarray(gaps[n], dtype=float)
        means.append(float(g.mean()))
        ses.append(float(g.std(ddof=1) / math.sqrt(len(g))) if len(g) > 1 else 0.0)
        bounds.append(VILLEMONAIS_CONSTANT * math.sqrt(survival_moments[n]) / math.sqrt(n))
    slope, intercept = loglog_slope(ns, means)
    return VillemonaisReport(tuple(ns), tuple(means), tuple(ses), tuple(bounds), slope,
                             intercept)


def replica_gap(ke: KernelEvaluator, initial: np.ndarray, final: np.ndarray, box, t: float):
    """Gap ``|H_t^n(1_box) - E~_t(1_box)|`` and ``P_mu_n(tau > t)^{-2}`` for one replica.

    The reference is the law at ``t`` of Brownian motion started from the
    empirical initial measure and conditioned to survive, by kernel series.
    """
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    pts = np.asarray(final, dtype=float).reshape(len(final), -1)
    inside = np.all((pts >= box[:, 0]) & (pts <= box[:, 1]), axis=1)
    ref = ke.conditioned_box_prob(t, initial, box)
    surv = float(np.mean(ke.survival(t, initial)))
    return abs(float(inside.mean()) - ref), surv**-2


# ---------------------------------------------------------------------------
# Boundary diagnostics


def boundary_occupation(path: LineagePath, threshold: float, grid, domain: DomainSpec) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InsufficientDataError("empty time grid")
    pts = np.array([path.value_at(s) for s in grid])
    return float(np.mean(dist_to_boundary(domain, pts) <= threshold))


def occupation_reference(ke: KernelEvaluator, threshold: float, law: str) -> float:
    """Mass within ``threshold`` of the boundary of (0, L) under ``law``.

    ``law`` is ``"qsd"`` (density proportional to phi) or ``"h"`` (phi squared).
    """
    if ke.domain.d != 1:
        raise ValueError("occupation reference is tabulated for intervals")
    cdf = {"qsd": ke.qsd_cdf, "h": ke.h_stationary_cdf}[law]
    lo, hi = float(ke.domain.lo[0]), float(ke.domain.hi[0])
    inner = cdf(hi - threshold) - cdf(lo + threshold)
    return float(1.0 - max(inner, 0.0))


def face_distances(values, domain: DomainSpec) -> np.ndarray:
    """Distance to the nearest face; folds all faces onto one."""
    return np.asarray(dist_to_boundary(domain, domain.as_points(values)), dtype=float)


def vanishing_exponent(sample: EmpiricalSample | Sequence[float],
                       width: float = NEAR_FACE_WIDTH, points: int = EXPONENT_POINTS,
                       min_count: int = NEAR_FACE_MIN) -> float:
    """Exponent ``gamma`` in ``density ~ distance**gamma`` near a face.

    ``sample`` holds distances to the face.  The empirical CDF of the
    near-face points is regressed on distance in log-log scale over
    ``points`` geometric abscissae from its 1% quantile to ``width``; the
    density exponent is the slope minus one.
    """
    vals = sample.values if isinstance(sample, EmpiricalSample) else np.asarray(sample, float)
    near = np.sort(vals[(vals >= 0) & (vals <= width)])
    if len(near) < min_count:
        raise InsufficientDataError(
            f"{len(near)} samples within {width} of the face, need {min_count}")
    r0 = float(np.quantile(near, 0.01))
    if r0 <= 0:
        r0 = float(near[near > 0][0])
    rs = np.geomspace(r0, width, points)
    ecdf = np.searchsorted(near, rs, side="right") / len(near)
    slope, _ = loglog_slope(rs, ecdf)
    return slope - 1.0


# ---------------------------------------------------------------------------
# Branching along the spine


@dataclass(frozen=True)
class BranchRateReport:
    spine_rate: float
    generic_rate: float
    ratio: float
    ci_low: float
    ci_high: float
    replicas: int
    window: tuple = field(default=(0.0, 0.0))


def _events_in(log: GenealogyLog, t0: float, t1: float) -> int:
    return int(np.count_nonzero((log.times > t0) & (log.times <= t1)))


def _window_counts(sp: SpineEstimate, log: GenealogyLog, t0: float, t1: float):
    in_window = _events_in(log, t0, t1)
    if in_window == 0:
        return 0, 0.0
    times = np.asarray(spine_branch_times(sp, log))
    on_spine = int(np.count_nonzero((times > t0) & (times <= t1)))
    return on_spine, in_window / log.n


def spine_branch_rate(spines: Sequence[SpineEstimate], logs: Sequence[GenealogyLog],
                      window: tuple[float, float] | None = None,
                      resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0) -> BranchRateReport:
    """Branch points per unit time on the spine versus per generic particle.

    A generic particle is jumped onto at rate (events per unit time) / n.
    The confidence interval is a percentile bootstrap over replicas.
    """
    if len(spines) != len(logs):
        raise ValueError("one log per spine")
    if window is None:
        window = (0.0, min(sp.coalescence_time for sp in spines) if spines else 0.0)
    t0, t1 = map(float, window)
    if not spines or t1 <= t0:
        raise InsufficientDataError("empty measurement window")
    for sp, lg in zip(spines, logs):
        # a replica with nothing happening in the window has nothing to attribute
        if _events_in(lg, t0, t1) and (not sp.complete or sp.coalescence_time < t1):
            raise IncompleteSpineError("spine does not cover the measurement window")
    counts = np.array([_window_counts(sp, lg, t0, t1) for sp, lg in zip(spines, logs)])
    span = t1 - t0

    def ratio(c):
        s, g = c[:, 0].sum(), c[:, 1].sum()
        return s / g if g > 0 else math.nan

    sr = counts[:, 0].mean() / span
    gr = counts[:, 1].mean() / span
    r = ratio(counts)
    if math.isnan(r):
        return BranchRateReport(sr, gr, math.nan, math.nan, math.nan, len(spines), (t0, t1))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(counts), size=(resamples, len(counts)))
    boot = np.array([ratio(counts[i]) for i in idx])
    lo, hi = np.nanpercentile(boot, [2.5, 97.5])
    return BranchRateReport(float(sr), float(gr), float(r), float(lo), float(hi), len(spines),
                            (t0, t1))
