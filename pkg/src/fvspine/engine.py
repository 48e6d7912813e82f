"""Fleming-Viot particle system driven by Brownian motion.

Each particle moves by its own Brownian stream.  A particle that exits the
domain during a step (its proposal lands outside, or an unseen bridge
excursion is drawn) jumps onto another particle chosen uniformly among the
rest; every such jump is appended to the genealogy log.

Discretization conventions:

* an exit flagged during a step happens at the step's right end;
* several exits in one step are applied one at a time in a uniformly random
  order;
* the dying particle lands on the target's current position, which is the
  post-step position, or the pre-step position if the target itself has
  exited in this step and has not been processed yet.

Random inputs are drawn in fixed blocks of ``CHUNK`` steps per particle
stream, so the trajectory does not depend on how a run is split into calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from ._crossing import axis_crossing
from .errors import ConfigError, DomainError, RefinementAbort
from .geometry import DomainSpec, contains
from .genealogy import GenealogyLog, PathStore
from .rng import CONTROL_SLOT, INIT_SLOT, RngStream, stream_id

CHUNK = 1024
POOL_SIZE = 4096
MAX_REFINEMENTS = 60

_OK, _ALL_EXIT, _POOL, _GROW, _UPOOL = 0, 1, 2, 3, 4
# Per-particle bridge uniforms buffered between refills.
UNIFORM_BLOCK = 64


@dataclass(frozen=True)
class InitialMeasure:
    """``point_cloud`` (explicit positions) or ``uniform_on_box`` (i.i.d. uniform)."""

    kind: str
    points: tuple | None = None
    box: tuple | None = None
    margin: float = 1e-3

    @classmethod
    def uniform_on_box(cls, *box, margin: float = 1e-3) -> "InitialMeasure":
        return cls("uniform_on_box", box=tuple(tuple(map(float, b)) for b in box), margin=margin)

    @classmethod
    def point_cloud(cls, points, margin: float = 1e-3) -> "InitialMeasure":
        pts = np.asarray(points, dtype=float)
        return cls("point_cloud", points=tuple(map(tuple, pts.reshape(len(pts), -1))),
                   margin=margin)

    def support_distance(self, domain: DomainSpec) -> float:
        if self.kind == "point_cloud":
            pts = domain.as_points(np.asarray(self.points))
            from .geometry import dist_to_boundary
            return float(np.min(dist_to_boundary(domain, pts)))
        if self.kind == "uniform_on_box":
            box = np.asarray(self.box, dtype=float)
            if box.shape != (domain.d, 2) or np.any(box[:, 0] > box[:, 1]):
                raise ConfigError("initial box must give (lo, hi) for every axis")
            return float(min(np.min(box[:, 0] - domain.lo), np.min(domain.hi - box[:, 1])))
        raise ConfigError(f"unknown initial measure {self.kind!r}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "margin": self.margin}
        if self.points is not None:
            out["points"] = [list(p) for p in self.points]
        if self.box is not None:
            out["box"] = [list(b) for b in self.box]
        return out


@dataclass(frozen=True)
class EngineConfig:
    n: int
    T: float
    dt: float
    domain: DomainSpec
    initial: InitialMeasure
    seed: int = 0
    snapshot_times: tuple = ()
    storage_dt: float | None = None
    bridge_correction: bool = True

    def __post_init__(self):
        object.__setattr__(self, "snapshot_times", tuple(sorted(float(s) for s in self.snapshot_times)))
        if self.storage_dt is None:
            object.__setattr__(self, "storage_dt", 10.0 * self.dt)
        self.validate()

    @property
    def nsteps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def store_every(self) -> int:
        return int(round(self.storage_dt / self.dt))

    def validate(self):
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError("population size n must be an integer >= 2")
        if not (self.T > 0 and self.dt > 0):
            raise ConfigError("T and dt must be positive")
        if not self.dt < self.T:
            raise ConfigError("dt must be smaller than T")
        if abs(self.nsteps * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigError("T must be an integer multiple of dt")
        if self.store_every < 1 or abs(self.store_every * self.dt - self.storage_dt) > 1e-9 * self.storage_dt:
            raise ConfigError("storage_dt must be a positive integer multiple of dt")
        if self.nsteps % self.store_every:
            raise ConfigError("T must be an integer multiple of storage_dt")
        for s in self.snapshot_times:
            if not 0 <= s <= self.T:
                raise ConfigError(f"snapshot time {s} outside [0, T]")
        if self.n >= (1 << 20) - 2:
            raise ConfigError("population too large for the stream layout")
        if not self.initial.margin > 0:
            raise ConfigError("initial margin must be positive")
        dist = self.initial.support_distance(self.domain)
        if dist < self.initial.margin:
            raise ConfigError(
                f"initial support is {dist:g} from the boundary, below margin {self.initial.margin:g}")
        if self.initial.kind == "point_cloud" and len(self.initial.points) != self.n:
            raise ConfigError("point cloud size must equal n")


@dataclass
class ParticleSystemState:
    time: float
    positions: np.ndarray
    jump_count: int
    step: int = 0


# Bridge crossings with exp(-2ab/dt) below exp(-NEGLIGIBLE) are treated as
# impossible; no uniform is consumed for them.
NEGLIGIBLE = 40.0


@nb.njit(cache=True)
def _advance(pos, lo, hi, dt, t0, step0, nsteps, normals, off, ubuf, ucur, pool, cursor,
             store, store_every, ev_time, ev_step, ev_dying, ev_target, ev_landing,
             ev_departure, n_ev, bridge, fixed_step):
    """Advance ``pos`` in place by up to ``nsteps`` steps.

    ``normals[p, off + i]`` drives particle ``p`` in step ``i``; bridge
    uniforms come from the per-particle buffers ``ubuf`` and event
    randomness from ``pool``.  Returns ``(status, steps_done, cursor, n_ev)``;
    a step that cannot be completed (all particles exited, a buffer ran
    dry) is left untouched and reported through ``status``.
    """
    n, d = pos.shape
    sq = math.sqrt(dt)
    cut = NEGLIGIBLE * dt / 2.0
    ub = ubuf.shape[1]
    y = np.empty((n, d))
    flagged = np.empty(n, dtype=np.int64)
    moved = np.empty(n, dtype=np.bool_)
    took = np.zeros(n, dtype=np.bool_)
    for i in range(nsteps):
        row = off + i
        if bridge:
            for p in range(n):
                if ucur[p] >= ub:
                    return _UPOOL, i, cursor, n_ev
        k = 0
        for p in range(n):
            exited = False
            near = False
            for a in range(d):
                x0 = pos[p, a]
                v = x0 + sq * normals[p, row, a]
                y[p, a] = v
                if v <= lo[a] or v >= hi[a]:
                    exited = True
                elif (x0 - lo[a]) * (v - lo[a]) < cut or (hi[a] - x0) * (hi[a] - v) < cut:
                    near = True
            if not exited and bridge and near:
                surv = 1.0
                for a in range(d):
                    _, _, pa = axis_crossing(pos[p, a] - lo[a], y[p, a] - lo[a], hi[a] - lo[a], dt)
                    surv *= 1.0 - pa
                u = ubuf[p, ucur[p]]
                ucur[p] += 1
                took[p] = True
                if u < 1.0 - surv:
                    exited = True
            moved[p] = not exited
            if exited:
                flagged[k] = p
                k += 1
        if k == n or (k > 0 and (cursor + 2 * k > pool.shape[0] or n_ev + k > ev_time.shape[0])):
            # Undo uniform consumption so the step replays identically.
            for p in range(n):
                if took[p]:
                    ucur[p] -= 1
                    took[p] = False
            status = _ALL_EXIT if k == n else (_POOL if cursor + 2 * k > pool.shape[0] else _GROW)
            return status, i, cursor, n_ev
        for p in range(n):
            took[p] = False
        g = step0 + i
        t_end = t0 + (i + 1) * dt
        # Exited particles keep their last interior position until their
        # jump is applied, so a not-yet-processed one is a valid target.
        for p in range(n):
            if moved[p]:
                for a in range(d):
                    pos[p, a] = y[p, a]
        if k > 0:
            order = np.argsort(pool[cursor:cursor + k])
            cursor += k
            for j in range(k):
                dier = flagged[order[j]]
                r = int(pool[cursor] * (n - 1))
                cursor += 1
                if r >= n - 1:
                    r = n - 2
                if r >= dier:
                    r += 1
                ev_time[n_ev] = t_end
                ev_step[n_ev] = fixed_step if fixed_step >= 0 else g + 1
                ev_dying[n_ev] = dier
                ev_target[n_ev] = r
                for a in range(d):
                    ev_departure[n_ev, a] = y[dier, a]
                    ev_landing[n_ev, a] = pos[r, a]
                    pos[dier, a] = pos[r, a]
                n_ev += 1
        if store_every > 0 and (g + 1) % store_every == 0:
            srow = (g + 1) // store_every
            for p in range(n):
                for a in range(d):
                    store[srow, p, a] = pos[p, a]
    return _OK, nsteps, cursor, n_ev


class Simulation:
    """One replica of the particle system, advanced step by step or in bulk."""

    def __init__(self, config: EngineConfig, replica: int = 0):
        self.config = config
        self.replica = int(replica)
        dom = config.domain
        self.n, self.d = config.n, dom.d
        self.lo = dom.lo
        self.hi = dom.hi
        self.streams = [RngStream(config.seed, stream_id(replica, p)) for p in range(self.n)]
        self.control = RngStream(config.seed, stream_id(replica, CONTROL_SLOT))
        self.state = ParticleSystemState(time=0.0, positions=self._initial_positions(),
                                         jump_count=0, step=0)
        nrows = config.nsteps // config.store_every + 1
        self.store = np.empty((nrows, self.n, self.d))
        self.store[0] = self.state.positions
        cap = 1024
        self._ev_time = np.empty(cap)
        self._ev_step = np.empty(cap, dtype=np.int64)
        self._ev_dying = np.empty(cap, dtype=np.int64)
        self._ev_target = np.empty(cap, dtype=np.int64)
        self._ev_landing = np.empty((cap, self.d))
        self._ev_departure = np.empty((cap, self.d))
        self.n_ev = 0
        self._pool = np.empty(0)
        self._cursor = 0
        self._chunk = -1
        self._normals = np.empty((self.n, CHUNK, self.d))
        self._ubuf = np.empty((self.n, UNIFORM_BLOCK))
        self._ucur = np.full(self.n, UNIFORM_BLOCK, dtype=np.int64)

    def _initial_positions(self) -> np.ndarray:
        init = self.config.initial
        dom = self.config.domain
        if init.kind == "point_cloud":
            return dom.as_points(np.asarray(init.points, dtype=float)).reshape(self.n, self.d).copy()
        box = np.asarray(init.box, dtype=float)
        u = RngStream(self.config.seed, stream_id(self.replica, INIT_SLOT)).uniform((self.n, self.d))
        return box[:, 0] + u * (box[:, 1] - box[:, 0])

    def _fill_chunk(self, chunk: int):
        for p, s in enumerate(self.streams):
            s.generator.standard_normal(out=self._normals[p])
        self._chunk = chunk

    def _refill_uniforms(self):
        # Refills are tied to absolute steps, so the stream order is the
        # same however the run is split into calls.
        for p in np.flatnonzero(self._ucur >= UNIFORM_BLOCK):
            self.streams[p].generator.random(out=self._ubuf[p])
            self._ucur[p] = 0

    def _refill_pool(self):
        self._pool = self.control.uniform(POOL_SIZE)
        self._cursor = 0

    def _grow(self):
        cap = 2 * len(self._ev_time)
        for name in ("_ev_time", "_ev_step", "_ev_dying", "_ev_target", "_ev_landing",
                     "_ev_departure"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self.n_ev] = old[: self.n_ev]
            setattr(self, name, new)

    def _kernel(self, pos, dt, t0, step0, nsteps, normals, off, store, store_every,
                fixed_step):
        return _advance(pos, self.lo, self.hi, dt, t0, step0, nsteps, normals, off,
                        self._ubuf, self._ucur, self._pool, self._cursor, store, store_every, self._ev_time,
                        self._ev_step, self._ev_dying, self._ev_target, self._ev_landing,
                        self._ev_departure, self.n_ev, self.config.bridge_correction, fixed_step)

    def advance(self, nsteps: int):
        """Advance by ``nsteps`` steps (not past the horizon)."""
        cfg = self.config
        remaining = min(int(nsteps), cfg.nsteps - self.state.step)
        pos = self.state.positions
        while remaining > 0:
            step = self.state.step
            chunk, off = divmod(step, CHUNK)
            if chunk != self._chunk:
                self._fill_chunk(chunk)
            todo = min(remaining, CHUNK - off)
            status, done, cursor, n_ev = self._kernel(
                pos, cfg.dt, step * cfg.dt, step, todo, self._normals, off,
                self.store, cfg.store_every, -1)
            self._cursor, self.n_ev = cursor, n_ev
            self.state.step += done
            remaining -= done
            if status == _POOL:
                self._refill_pool()
            elif status == _UPOOL:
                self._refill_uniforms()
            elif status == _GROW:
                self._grow()
            elif status == _ALL_EXIT:
                self._refined_step(self.state.step)
                self.state.step += 1
                remaining -= 1
        self.state.time = self.state.step * cfg.dt
        self.state.jump_count = self.n_ev

    def _refined_step(self, step: int, level: int = 1, t0: float | None = None,
                      dt: float | None = None):
        """Redo one step as ten sub-steps driven by the control stream."""
        if level > MAX_REFINEMENTS:
            raise RefinementAbort(
                f"all particles exited at step {step} after {MAX_REFINEMENTS} refinements")
        cfg = self.config
        t0 = step * cfg.dt if t0 is None else t0
        dt = cfg.dt / 10.0 if dt is None else dt / 10.0
        pos = self.state.positions
        normals = self.control.normal((self.n, 10, self.d))
        dummy = np.empty((1, self.n, self.d))
        i = 0
        while i < 10:
            status, done, cursor, n_ev = self._kernel(
                pos, dt, t0 + i * dt, 0, 10 - i, normals, i, dummy, 0, step + 1)
            self._cursor, self.n_ev = cursor, n_ev
            i += done
            if status == _POOL:
                self._refill_pool()
            elif status == _UPOOL:
                self._refill_uniforms()
            elif status == _GROW:
                self._grow()
            elif status == _ALL_EXIT:
                self._refined_step(step, level + 1, t0 + i * dt, dt)
                i += 1
        if (step + 1) % cfg.store_every == 0:
            self.store[(step + 1) // cfg.store_every] = pos

    def log(self) -> GenealogyLog:
        k = self.n_ev
        return GenealogyLog(n=self.n, horizon=self.config.T, times=self._ev_time[:k].copy(),
                            steps=self._ev_step[:k].copy(), dying=self._ev_dying[:k].copy(),
                            target=self._ev_target[:k].copy(), landing=self._ev_landing[:k].copy(),
                            departure=self._ev_departure[:k].copy())

    def path_store(self) -> PathStore:
        cfg = self.config
        rows = np.arange(self.store.shape[0])
        steps = rows * cfg.store_every
        return PathStore(times=steps * cfg.dt, positions=self.store, steps=steps)

    def snapshot(self) -> ParticleSystemState:
        s = self.state
        return ParticleSystemState(time=s.step * self.config.dt, positions=s.positions.copy(),
                                   jump_count=self.n_ev, step=s.step)


def tagged_particle(config: EngineConfig, replica: int = 0) -> int:
    """Uniformly chosen particle index for a replica.

    Drawn from the initial-condition stream just past the initial
    positions, so tagging never perturbs the dynamics.
    """
    rng = RngStream(config.seed, stream_id(replica, INIT_SLOT))
    u = rng.uniform(config.n * config.domain.d + 1)[-1]
    return min(int(u * config.n), config.n - 1)


def init(config: EngineConfig, replica: int = 0):
    """Initial state and empty log for one replica."""
    sim = Simulation(config, replica)
    return sim.snapshot(), GenealogyLog.empty(config.n, config.T, config.domain.d)


def step(sim: Simulation) -> Simulation:
    """Advance a simulation by exactly one step."""
    sim.advance(1)
    return sim


@dataclass
class RunResult:
    log: GenealogyLog
    snapshots: list = field(default_factory=list)
    store: PathStore | None = None
    config: EngineConfig | None = None
    replica: int = 0
    initial: np.ndarray | None = None


def run(config: EngineConfig, replica: int = 0) -> RunResult:
    """Simulate one replica to the horizon, recording snapshots and the path store."""
    sim = Simulation(config, replica)
    initial = sim.state.positions.copy()
    snaps = []
    snap_steps = [int(round(s / config.dt)) for s in config.snapshot_times]
    for target in snap_steps:
        sim.advance(target - sim.state.step)
        snaps.append(sim.snapshot())
    sim.advance(config.nsteps - sim.state.step)
    if not np.all(contains(config.domain, sim.state.positions)):
        raise DomainError("particle left the domain")  # invariant guard
    return RunResult(log=sim.log(), snapshots=snaps, store=sim.path_store(), config=config,
                     replica=replica, initial=initial)
