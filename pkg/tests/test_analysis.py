import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fvspine.analysis import (VILLEMONAIS_CONSTANT, EmpiricalSample, boundary_occupation,
                              empirical_functional, face_distances, ks_distance, ks_threshold,
                              occupation_reference, replica_gap, spine_branch_rate,
                              vanishing_exponent, villemonais_gap)
from fvspine.engine import EngineConfig, InitialMeasure, run
from fvspine.errors import IncompleteSpineError, InsufficientDataError
from fvspine.geometry import DomainSpec, KernelEvaluator, contains
from fvspine.genealogy import GenealogyLog, LineagePath, PathStore, spine
from fvspine.rng import RngStream
from fvspine.sampler import h_process_step

UNIT = DomainSpec.interval(0.0, 1.0)


@pytest.fixture(scope="module")
def ke():
    return KernelEvaluator(UNIT)


def invert(cdf, size):
    grid = np.linspace(0, 1, 200_001)
    return np.interp((np.arange(size) + 0.5) / size, cdf(grid), grid)


# -- empirical functionals --------------------------------------------------------

def test_functional_examples():
    pts = np.array([[0.3], [0.7]])
    assert empirical_functional(pts, lambda x: np.ones(len(x))) == 1.0
    assert empirical_functional(pts, lambda x: (x[:, 0] < 0.5).astype(float)) == 0.5


def test_functional_on_engine_snapshot():
    cfg = EngineConfig(n=50, T=0.5, dt=1e-3, domain=UNIT,
                       initial=InitialMeasure.uniform_on_box((0.25, 0.75)), seed=2,
                       snapshot_times=(0.25,))
    snap = run(cfg, 0).snapshots[0]
    assert empirical_functional(snap, lambda x: contains(UNIT, x).astype(float)) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=30),
       st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_functional_is_linear(xs, a, b):
    pts = np.array(xs)[:, None]
    f = lambda x: np.sin(3 * x[:, 0])
    g = lambda x: (x[:, 0] > 0.5).astype(float)
    both = empirical_functional(pts, lambda x: a * f(x) + b * g(x))
    assert both == pytest.approx(a * empirical_functional(pts, f) + b * empirical_functional(pts, g),
                                 abs=1e-12)


def test_functional_over_lineages_cuts_at_time():
    p = LineagePath(np.array([0.0, 0.5, 1.0]), np.array([[0.2], [0.4], [0.9]]), [(0.0, 1.0, 0)])
    q = LineagePath(np.array([0.0, 0.5, 1.0]), np.array([[0.6], [0.6], [0.6]]), [(0.0, 1.0, 1)])
    end_below = lambda path: float(path.values[-1, 0] < 0.5)
    assert empirical_functional([p, q], end_below, t=0.5) == 0.5
    assert empirical_functional([p, q], end_below, t=1.0) == 0.0


def test_functional_rejects_unbounded_and_empty():
    with pytest.raises(ValueError):
        empirical_functional(np.array([[0.5]]), lambda x: 2 * np.ones(1))
    with pytest.raises(InsufficientDataError):
        empirical_functional(np.empty((0, 1)), lambda x: x[:, 0])


# -- KS ----------------------------------------------------------------------------

def test_ks_thresholds():
    assert ks_threshold(1000) == pytest.approx(0.05129, abs=5e-5)
    assert ks_threshold(10_000) == pytest.approx(0.01626, abs=5e-5)


def test_ks_perfect_fit(ke):
    sample = invert(ke.h_stationary_cdf, 1000)
    rep = ks_distance(EmpiricalSample(sample), ke.h_stationary_cdf)
    assert rep.statistic <= 1 / 1000 and rep.passed and rep.sample_size == 1000


def test_ks_degenerate_sample(ke):
    rep = ks_distance(np.full(500, 0.1), ke.h_stationary_cdf)
    assert rep.statistic >= 0.9 and not rep.passed


def test_ks_h_sampler_against_own_law(ke):
    start = invert(ke.h_stationary_cdf, 10_000)[:, None]
    draws = h_process_step(RngStream(31), ke, start, 0.5)[:, 0]
    assert ks_distance(draws, ke.h_stationary_cdf).statistic < 0.0163


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.001, 0.999), min_size=5, max_size=50), st.floats(0.3, 3.0))
def test_ks_invariant_under_monotone_map(xs, power):
    x = np.array(xs)
    cdf = lambda y: (1 - np.cos(np.pi * np.clip(y, 0, 1))) / 2
    a = ks_distance(x, cdf).statistic
    b = ks_distance(x**power, lambda z: cdf(np.clip(z, 0, 1) ** (1 / power))).statistic
    assert a == pytest.approx(b, abs=1e-12)


def test_weighted_ks_matches_plain_for_equal_weights(ke):
    x = np.random.default_rng(0).uniform(size=300)
    plain = ks_distance(x, ke.qsd_cdf)
    weighted = ks_distance(EmpiricalSample(x, np.full(300, 1 / 300)), ke.qsd_cdf)
    assert weighted.statistic == pytest.approx(plain.statistic, abs=1e-12)
    assert weighted.sample_size == 300


def test_ks_rejects_bad_samples():
    with pytest.raises(InsufficientDataError):
        ks_distance([], lambda y: y)
    with pytest.raises(ValueError):
        EmpiricalSample([0.1, 0.2], weights=[0.5, 0.6])


# -- decay fits --------------------------------------------------------------------

def test_villemonais_slope_on_exact_power_law():
    ns = [50, 100, 200, 400, 800]
    gaps = {n: [0.7 / math.sqrt(n)] * 3 for n in ns}
    rep = villemonais_gap(gaps, {n: 1.0 for n in ns})
    assert rep.slope == pytest.approx(-0.5, abs=1e-12)
    assert rep.intercept == pytest.approx(math.log(0.7), abs=1e-12)
    assert all(rep.within_bound)


def test_villemonais_constant_and_bound():
    assert VILLEMONAIS_CONSTANT == pytest.approx(4.8284, abs=1e-4)
    rep = villemonais_gap({10: [10.0, 10.0], 20: [0.05, 0.05], 40: [0.0, 0.1]},
                          {10: 4.0, 20: 1.0, 40: 1.0})
    assert rep.bound[0] == pytest.approx(VILLEMONAIS_CONSTANT * 2 / math.sqrt(10))
    assert rep.within_bound[0] is False
    assert [r["n"] for r in rep.rows()] == [10, 20, 40]


def test_villemonais_needs_three_sizes():
    with pytest.raises(InsufficientDataError):
        villemonais_gap({10: [0.1], 20: [0.1]}, {10: 1.0, 20: 1.0})


def test_replica_gap_for_exact_population(ke):
    initial = np.full((1, 1), 0.5)
    box = [(0.4, 0.6)]
    ref = ke.conditioned_box_prob(1.0, initial, box)
    # a population reproducing the reference mass exactly has zero gap
    k = 1000
    inside = int(round(ref * k))
    final = np.r_[np.full(inside, 0.5), np.full(k - inside, 0.2)][:, None]
    gap, moment = replica_gap(ke, initial, final, box, 1.0)
    assert gap < 1 / k
    assert moment == pytest.approx(ke.survival(1.0, 0.5) ** -2)


# -- boundary diagnostics ----------------------------------------------------------

def constant_path(x):
    times = np.linspace(0, 1, 11)
    return LineagePath(times, np.full((11, 1), x), [(0.0, 1.0, 0)])


def test_boundary_occupation_examples():
    grid = np.linspace(0, 1, 11)
    assert boundary_occupation(constant_path(0.5), 0.2, grid, UNIT) == 0.0
    assert boundary_occupation(constant_path(0.5), 0.5, grid, UNIT) == 1.0
    assert boundary_occupation(constant_path(0.03), 0.05, grid, UNIT) == 1.0
    with pytest.raises(InsufficientDataError):
        boundary_occupation(constant_path(0.5), 0.1, [], UNIT)


def test_occupation_reference_values(ke):
    w = 0.05
    assert occupation_reference(ke, w, "qsd") == pytest.approx(1 - math.cos(math.pi * w))
    assert occupation_reference(ke, w, "h") == pytest.approx(
        2 * (w - math.sin(2 * math.pi * w) / (2 * math.pi)))
    assert occupation_reference(ke, w, "h") < occupation_reference(ke, w, "qsd")


def test_face_distances_fold_both_faces():
    assert np.allclose(face_distances([0.1, 0.95, 0.5], UNIT), [0.1, 0.05, 0.5])


@pytest.mark.parametrize("power,exponent", [(3, 2.0), (2, 1.0)])
def test_vanishing_exponent_on_power_cdf(power, exponent):
    # distances whose CDF on [0, 0.2] is (r / 0.2) ** power
    r = 0.2 * ((np.arange(5000) + 0.5) / 5000) ** (1 / power)
    assert vanishing_exponent(r) == pytest.approx(exponent, abs=0.02)


def test_vanishing_exponent_distinguishes_laws(ke):
    h = face_distances(invert(ke.h_stationary_cdf, 20_000), UNIT)
    q = face_distances(invert(ke.qsd_cdf, 20_000), UNIT)
    assert 1.6 <= vanishing_exponent(h) <= 2.4
    assert 0.7 <= vanishing_exponent(q) <= 1.3


def test_vanishing_exponent_needs_mass():
    with pytest.raises(InsufficientDataError):
        vanishing_exponent(np.full(5000, 0.5))


# -- branch rates ------------------------------------------------------------------

def flat_store(n):
    times = np.linspace(0, 10, 101)
    return PathStore(times=times, positions=np.full((101, n, 1), 0.5))


def test_branch_rate_without_events_is_undefined():
    log = GenealogyLog.empty(4, 10.0)
    sp = spine(log, flat_store(4))
    rep = spine_branch_rate([sp, sp], [log, log], window=(0.0, 5.0))
    assert rep.spine_rate == 0 and rep.generic_rate == 0 and math.isnan(rep.ratio)


def test_branch_rate_on_constructed_log():
    # particle 0 never dies; blocks of (1 -> 0), (2 -> 1), (2 -> 0)
    events = []
    for b in range(10):
        t = 0.5 + 0.9 * b
        events += [(t, 1, 0), (t + 0.1, 2, 1), (t + 0.2, 2, 0)]
    log = GenealogyLog.from_events(3, 10.0, events)
    sp = spine(log, flat_store(3))
    assert sp.complete
    window = (0.0, sp.coalescence_time)
    in_window = sum(t <= sp.coalescence_time for t, *_ in events)
    on_spine = sum(t <= sp.coalescence_time and tgt == 0 for t, _, tgt in events)
    rep = spine_branch_rate([sp] * 5, [log] * 5, window=window, resamples=200)
    assert rep.ratio == pytest.approx(on_spine / (in_window / 3))
    assert rep.ci_low == pytest.approx(rep.ratio) and rep.ci_high == pytest.approx(rep.ratio)
    assert rep.replicas == 5


def test_branch_rate_rejects_short_spines():
    log = GenealogyLog.from_events(2, 10.0, [(1.0, 0, 1), (8.0, 1, 0)])
    sp = spine(log, flat_store(2))
    with pytest.raises(IncompleteSpineError):
        spine_branch_rate([sp], [log], window=(0.0, 9.0))
    with pytest.raises(InsufficientDataError):
        spine_branch_rate([sp], [log], window=(2.0, 2.0))
