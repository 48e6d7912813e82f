import math

import numpy as np
import pytest
from scipy import integrate, stats

from fvspine.errors import DomainError
from fvspine.experiments import killed_walk_survival
from fvspine.geometry import DomainSpec, KernelEvaluator
from fvspine.rng import RngStream, stream_id
from fvspine.sampler import (bm_step, crossing_probability, gaussian_increment, h_process_step,
                             pinned_bridge_path, pinned_bridge_paths)

UNIT = DomainSpec.interval(0.0, 1.0)
# Discrete monitoring on a grid of step h misses excursions; moving the barrier
# inward by this many sqrt(h) compensates to leading order.
MONITOR_SHIFT = 0.5826


@pytest.fixture(scope="module")
def ke():
    return KernelEvaluator(UNIT)


# -- streams -------------------------------------------------------------------

def test_stream_replay_is_bit_identical():
    a = RngStream(42, stream_id(3, 7))
    b = RngStream(42, stream_id(3, 7))
    assert np.array_equal(gaussian_increment(a, 0.1, 3, size=100),
                          gaussian_increment(b, 0.1, 3, size=100))
    state = a.state()
    first = a.uniform(10)
    a.set_state(state)
    assert np.array_equal(a.uniform(10), first)


def test_distinct_streams_uncorrelated():
    a = RngStream(42, stream_id(0, 0)).normal(100_000)
    b = RngStream(42, stream_id(0, 1)).normal(100_000)
    c = RngStream(43, stream_id(0, 0)).normal(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(100_000)
    assert abs(np.corrcoef(a, c)[0, 1]) < 4 / math.sqrt(100_000)


def test_stream_id_layout():
    assert stream_id(2, 5) == 2 * 2**20 + 5
    with pytest.raises(ValueError):
        stream_id(0, 2**20)


@pytest.mark.parametrize("dt", [1e-4, 0.5])
def test_gaussian_increment_moments(dt):
    z = gaussian_increment(RngStream(1, 9), dt, 2, size=1_000_000)
    assert z.shape == (1_000_000, 2)
    assert np.all(np.abs(z.mean(axis=0)) < 4 * math.sqrt(dt / 1e6))
    assert np.all(np.abs(z.var(axis=0) - dt) < 4 * dt * math.sqrt(2 / 1e6))


def test_gaussian_increment_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        gaussian_increment(RngStream(1), 0.0)


# -- crossing probabilities ------------------------------------------------------

def test_single_barrier_closed_form():
    wide = DomainSpec.interval(0.0, 10.0)
    assert crossing_probability(0.1, 0.1, 0.01, wide) == pytest.approx(math.exp(-2), rel=1e-12)


def test_crossing_limits():
    assert crossing_probability(0.0, 0.5, 0.01, UNIT) == pytest.approx(1.0)
    assert crossing_probability(0.5, 0.5, 1e-6, UNIT) < 1e-100


def test_rectangle_crossing_multiplies_survival():
    sq = DomainSpec.rectangle((0.0, 10.0), (0.0, 10.0))
    p = crossing_probability((0.1, 0.2), (0.1, 0.2), 0.01, sq)
    expected = 1 - (1 - math.exp(-2 * 0.01 / 0.01)) * (1 - math.exp(-2 * 0.04 / 0.01))
    assert p == pytest.approx(expected, rel=1e-12)


def monitored_bridge_exits(rng, x, y, dt, lo, hi, fine, paths, chunk=10_000):
    """Fraction of Brownian bridges x -> y over dt whose fine-grid path leaves (lo, hi)."""
    h = dt / fine
    shift = MONITOR_SHIFT * math.sqrt(h)
    s = np.arange(1, fine + 1) / fine
    hits = 0
    for start in range(0, paths, chunk):
        m = min(chunk, paths - start)
        w = np.cumsum(math.sqrt(h) * rng.normal((m, fine)), axis=1)
        path = x + w - s * (w[:, -1:] - (y - x))
        hits += int(np.sum(np.any((path <= lo + shift) | (path >= hi - shift), axis=1)))
    return hits / paths


@pytest.mark.parametrize("x,y,lo,hi", [
    (0.1, 0.1, 0.0, 10.0),   # one barrier in reach
    (0.1, 0.2, 0.0, 0.3),    # narrow interval: both barriers matter
])
def test_crossing_matches_fine_grid_simulation(x, y, lo, hi):
    dt, paths = 0.01, 100_000
    p = crossing_probability(x, y, dt, DomainSpec.interval(lo, hi))
    mc = monitored_bridge_exits(RngStream(5, 1), x, y, dt, lo, hi, fine=1000, paths=paths)
    se = math.sqrt(p * (1 - p) / paths)
    assert abs(mc - p) < 3 * se


# -- bm_step ---------------------------------------------------------------------

def test_bm_step_centre_tiny_dt_never_exits():
    res = bm_step(RngStream(2), np.full((100_000, 1), 0.5), 1e-6, UNIT)
    assert not np.any(res.exited)
    assert np.array_equal(res.exit_face[:, 0], np.full(100_000, -1))


def test_bm_step_next_to_boundary_exits_half_the_time():
    res = bm_step(RngStream(3), np.full((10_000, 1), 1e-9), 0.01, UNIT)
    assert res.exited.mean() >= 0.49
    assert np.all(res.exit_face[res.exited, 1] == 0)


def test_bm_step_single_point_and_replay():
    a = bm_step(RngStream(4, 4), 0.3, 0.01, UNIT)
    b = bm_step(RngStream(4, 4), 0.3, 0.01, UNIT)
    assert a.exited == b.exited and np.array_equal(a.new_position, b.new_position)
    if not a.exited:
        assert 0 < a.new_position[0] < 1


def test_bm_step_rejects_outside_start():
    with pytest.raises(DomainError):
        bm_step(RngStream(1), 1.5, 0.01, UNIT)


def test_bridge_correction_removes_discretization_bias(ke):
    exact = ke.survival(1.0, 0.5)
    n = 100_000
    se = math.sqrt(exact * (1 - exact) / n)
    corrected = killed_walk_survival(RngStream(20, 0), UNIT, 0.5, 1.0, 1e-3, n, True)
    plain = killed_walk_survival(RngStream(20, 1), UNIT, 0.5, 1.0, 1e-3, n, False)
    assert abs(corrected - exact) < 3 * se
    assert plain - exact > 3 * se


# -- h-process -------------------------------------------------------------------

def test_h_step_never_leaves(ke):
    for x in (0.5, 1e-3):
        for dt in (1e-4, 0.5):
            y = h_process_step(RngStream(6), ke, x, dt, size=1_000_000)
            assert np.all((y > 0) & (y < 1))


def stationary_sample(ke, size, seed):
    u = RngStream(seed, 0).uniform(size)
    grid = np.linspace(0, 1, 20_001)
    return np.interp(u, ke.h_stationary_cdf(grid), grid)[:, None]


@pytest.mark.parametrize("dt", [0.1, 0.5, 1.0])
def test_h_step_preserves_sine_squared(ke, dt):
    x = stationary_sample(ke, 10_000, 7)
    y = h_process_step(RngStream(8), ke, x, dt)
    assert stats.kstest(y[:, 0], ke.h_stationary_cdf).statistic < 0.02


def test_h_step_drift_near_quarter(ke):
    dt = 1e-4
    y = h_process_step(RngStream(9), ke, 0.25, dt, size=4_000_000)
    drift = math.pi / math.tan(math.pi * 0.25) * dt
    assert abs((y.mean() - 0.25) / drift - 1) < 0.1


def test_h_step_batch_replay(ke):
    x = np.linspace(0.1, 0.9, 17)[:, None]
    a = h_process_step(RngStream(1, 1), ke, x, 0.01)
    b = h_process_step(RngStream(1, 1), ke, x, 0.01)
    assert np.array_equal(a, b)


def test_h_step_on_rectangle_stays_inside():
    box = KernelEvaluator(DomainSpec.rectangle((0, 1), (0, 2)))
    y = h_process_step(RngStream(2), box, (0.5, 1.0), 0.3, size=10_000)
    assert y.shape == (10_000, 2)
    assert np.all((y > 0) & (y < [1, 2]))


# -- pinned bridges --------------------------------------------------------------

def test_bridge_endpoints_exact_and_inside(ke):
    times, vals = pinned_bridge_paths(RngStream(10), ke, 0.3, 0.8, 1.0, 0.1, count=10_000)
    assert times[0] == 0 and times[-1] == 1.0 and len(times) == 11
    assert np.all(vals[:, 0, 0] == 0.3) and np.all(vals[:, -1, 0] == 0.8)
    assert np.all((vals > 0) & (vals < 1))


def test_single_bridge_path_object(ke):
    p = pinned_bridge_path(RngStream(11), ke, 0.5, 0.5, 2.0, 0.5)
    assert p.values.shape == (5, 1) and p.values[0, 0] == 0.5 == p.values[-1, 0]


def test_bridge_midpoint_law_chi_square(ke):
    s, x, y = 2.0, 0.3, 0.6
    _, vals = pinned_bridge_paths(RngStream(12), ke, x, y, s, s / 4, count=10_000)
    mid = vals[:, 2, 0]
    grid = np.linspace(0, 1, 20_001)
    dens = np.zeros_like(grid)
    dens[1:-1] = ke.bridge_marginal(s, s / 2, x, y, grid[1:-1])
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]
    edges = np.interp(np.linspace(0, 1, 21), cdf, grid)
    observed, _ = np.histogram(mid, edges)
    assert stats.chisquare(observed).pvalue > 0.001


def test_bridge_rejects_bad_grid(ke):
    with pytest.raises(ValueError):
        pinned_bridge_paths(RngStream(1), ke, 0.3, 0.3, 1.0, 2.0)
    with pytest.raises(DomainError):
        pinned_bridge_paths(RngStream(1), ke, 0.3, 1.3, 1.0, 0.1)
