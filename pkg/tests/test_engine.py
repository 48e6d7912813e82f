import numpy as np
import pytest
from scipy import stats

from fvspine.engine import (EngineConfig, InitialMeasure, Simulation, init, run, step,
                            tagged_particle)
from fvspine.errors import ConfigError
from fvspine.geometry import DomainSpec, contains
from fvspine.rng import RngStream, stream_id

UNIT = DomainSpec.interval(0.0, 1.0)
CENTRE = InitialMeasure.uniform_on_box((0.25, 0.75))


def config(**kw):
    base = dict(n=10, T=0.5, dt=1e-4, domain=UNIT, initial=CENTRE, seed=1)
    base.update(kw)
    return EngineConfig(**base)


# -- init and validation -----------------------------------------------------

def test_point_cloud_initial_is_exact():
    cfg = config(n=2, initial=InitialMeasure.point_cloud([0.4, 0.6]))
    state, log = init(cfg)
    assert np.array_equal(state.positions[:, 0], [0.4, 0.6])
    assert len(log) == 0 and state.time == 0.0


def test_uniform_initial_mean():
    state, _ = init(config(n=10_000))
    assert abs(state.positions.mean() - 0.5) < 4 * (0.5 / np.sqrt(12)) / 100


@pytest.mark.parametrize("kw", [
    dict(initial=InitialMeasure.uniform_on_box((0.0, 0.5))),
    dict(n=1),
    dict(T=-1.0),
    dict(dt=1.0, T=0.5),
    dict(snapshot_times=(2.0,)),
    dict(storage_dt=1.5e-4),
])
def test_invalid_configs_rejected(kw):
    with pytest.raises(ConfigError):
        config(**kw)


# -- single steps --------------------------------------------------------------

def test_tiny_step_from_centre_never_kills():
    cfg = config(n=2, T=1e-6, dt=1e-8, initial=InitialMeasure.point_cloud([0.5, 0.5]))
    assert all(len(run(cfg, r).log) == 0 for r in range(200))


def test_particle_at_boundary_dies_in_first_step():
    cfg = config(n=2, T=0.02, dt=0.01, storage_dt=0.01,
                 initial=InitialMeasure.point_cloud([1e-12, 0.5], margin=1e-12))
    trials = 500
    first = []
    for r in range(trials):
        log = run(cfg, r).log
        assert len(log) > 0
        first.append((log.steps[0], log.dying[0], log.target[0]))
        # the dier lands where the target stood
        assert abs(log.landing[0, 0] - 0.5) < 6 * np.sqrt(0.01)
    assert sum(f == (1, 0, 1) for f in first) > 0.98 * trials


def test_population_conserved_at_every_stored_time():
    res = run(config(n=20, T=1.0, seed=4), 0)
    assert res.store.positions.shape[1] == 20
    assert np.all(contains(UNIT, res.store.positions))


# -- runs ----------------------------------------------------------------------

def test_short_run_far_from_boundary_is_plain_brownian_motion():
    cfg = config(n=2, T=10e-4, initial=InitialMeasure.point_cloud([0.5, 0.5]),
                 snapshot_times=(5e-4,), storage_dt=1e-4)
    res = run(cfg, 0)
    assert len(res.log) == 0
    for p in range(2):
        rng = RngStream(cfg.seed, stream_id(0, p))
        x = 0.5
        path = [x]
        for _ in range(10):
            x = x + np.sqrt(cfg.dt) * rng.normal()
            path.append(x)
        assert np.array_equal(res.store.positions[:, p, 0], path)
    assert np.array_equal(res.snapshots[0].positions[:, 0], res.store.positions[5, :, 0])


def test_same_seed_bit_identical():
    a, b = run(config(seed=9), 0), run(config(seed=9), 0)
    for k in ("times", "steps", "dying", "target", "landing"):
        assert np.array_equal(getattr(a.log, k), getattr(b.log, k))
    assert np.array_equal(a.store.positions, b.store.positions)


def test_step_by_step_equals_bulk():
    cfg = config(n=12, T=0.3, seed=2, initial=InitialMeasure.uniform_on_box((0.05, 0.95)))
    bulk = Simulation(cfg)
    bulk.advance(cfg.nsteps)
    stepped = Simulation(cfg)
    for _ in range(cfg.nsteps):
        step(stepped)
    assert np.array_equal(bulk.state.positions, stepped.state.positions)
    assert np.array_equal(bulk.log().target, stepped.log().target)
    assert bulk.n_ev > 0


def test_killing_happens_over_long_run():
    cfg = config(n=100, T=5.0, dt=1e-3)
    assert all(len(run(cfg, r).log) > 0 for r in range(100))


def test_event_log_invariants():
    res = run(config(n=30, T=1.0, seed=6), 0)
    log = res.log
    log.validate()
    assert np.all(np.diff(log.times) >= 0)
    assert np.all(log.dying != log.target)
    assert np.all(contains(UNIT, log.landing))
    assert np.allclose(log.times, log.steps * 1e-4)


def test_distilled_drivers_are_gaussian():
    cfg = config(n=10, T=1.0, storage_dt=1e-4, seed=8)
    res = run(cfg, 0)
    log, pos = res.log, res.store.positions[:, :, 0]
    # remove each recorded jump from the path of the particle that made it
    incr = np.diff(pos, axis=0)
    for k in range(len(log)):
        incr[log.steps[k] - 1, log.dying[k]] -= log.landing[k, 0] - log.departure[k, 0]
    for p in range(cfg.n):
        z = incr[:, p] / np.sqrt(cfg.dt)
        assert stats.kstest(z, "norm").pvalue > 0.001


def test_tagged_particle_is_deterministic_and_in_range():
    cfg = config(n=7)
    tags = [tagged_particle(cfg, r) for r in range(50)]
    assert tags == [tagged_particle(cfg, r) for r in range(50)]
    assert min(tags) >= 0 and max(tags) < 7 and len(set(tags)) > 3
