"""Lineages of the particle system reconstructed from its event log.

The log records, for every killing, the index of the particle that died and
the index of the particle it jumped onto.  A lineage ("dynamical historical
process") is traced backwards: it follows its carrier until the carrier's
most recent death, where it continues on the particle the carrier jumped
onto.  The jump itself never appears on the lineage.

Particle indices are 0-based; label event indices are 1-based with 0
reserved for the initial configuration.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteSpineError


@dataclass(frozen=True)
class EventRecord:
    time: float
    dying: int
    target: int
    landing: np.ndarray
    departure: np.ndarray | None = None
    step: int | None = None


@dataclass
class GenealogyLog:
    """All jump events of one run, ordered by event index.

    Several events may share a time when exits are detected in the same
    step; their order within the step is the order in which they were
    applied.  ``steps`` holds the integer step at whose end each event took
    effect and is what lineage queries compare against the path store.
    """

    n: int
    horizon: float
    times: np.ndarray
    steps: np.ndarray
    dying: np.ndarray
    target: np.ndarray
    landing: np.ndarray
    departure: np.ndarray
    _by_dier: list | None = field(default=None, repr=False, compare=False)

    @classmethod
    def empty(cls, n: int, horizon: float, d: int = 1) -> "GenealogyLog":
        return cls(n=n, horizon=horizon, times=np.zeros(0), steps=np.zeros(0, dtype=np.int64),
                   dying=np.zeros(0, dtype=np.int64), target=np.zeros(0, dtype=np.int64),
                   landing=np.zeros((0, d)), departure=np.zeros((0, d)))

    @classmethod
    def from_events(cls, n: int, horizon: float, events, d: int = 1) -> "GenealogyLog":
        """Build a log from ``(time, dying, target)`` tuples (for hand-made examples)."""
        events = list(events)
        times = np.array([e[0] for e in events], dtype=float)
        steps = np.arange(1, len(events) + 1, dtype=np.int64) if len(events) else np.zeros(0, np.int64)
        # Hand-made logs have no grid; events are ordered by time and queried by time.
        return cls(n=n, horizon=horizon, times=times, steps=steps,
                   dying=np.array([e[1] for e in events], dtype=np.int64),
                   target=np.array([e[2] for e in events], dtype=np.int64),
                   landing=np.full((len(events), d), np.nan),
                   departure=np.full((len(events), d), np.nan))

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k) -> EventRecord:
        return EventRecord(time=float(self.times[k]), dying=int(self.dying[k]),
                           target=int(self.target[k]), landing=self.landing[k],
                           departure=self.departure[k], step=int(self.steps[k]))

    def validate(self):
        if len(self) == 0:
            return
        if np.any(np.diff(self.times) < 0):
            raise ValueError("event times decrease")
        if np.any(self.dying == self.target):
            raise ValueError("an event targets its own dying particle")
        for arr in (self.dying, self.target):
            if arr.min() < 0 or arr.max() >= self.n:
                raise ValueError("particle index out of range")

    def count_through(self, t: float) -> int:
        """Number of events with time <= t."""
        return int(np.searchsorted(self.times, t, side="right"))

    def deaths_of(self, i: int) -> list:
        if self._by_dier is None:
            order = np.argsort(self.dying, kind="stable")
            splits = np.searchsorted(self.dying[order], np.arange(self.n + 1))
            self._by_dier = [order[splits[j]:splits[j + 1]].tolist() for j in range(self.n)]
        return self._by_dier[i]


@dataclass
class PathStore:
    """Positions of every particle on a coarse time grid: ``positions[row, particle]``."""

    times: np.ndarray
    positions: np.ndarray
    steps: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    def row_at(self, t: float) -> int:
        j = int(np.searchsorted(self.times, t + 1e-12 * max(1.0, abs(t)), side="right")) - 1
        if j < 0 or abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the storage grid")
        return j

    def map(self, fn) -> "PathStore":
        return PathStore(times=self.times.copy(), positions=fn(self.positions),
                         steps=None if self.steps is None else self.steps.copy())


@dataclass
class LineagePath:
    """A path on a time grid with its carrier segments ``(t_start, t_end, particle)``."""

    times: np.ndarray
    values: np.ndarray
    carrier: list = field(default_factory=list)

    def value_at(self, t: float) -> np.ndarray:
        j = int(np.searchsorted(self.times, t + 1e-12 * max(1.0, abs(t)), side="right")) - 1
        if j < 0 or abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the path grid")
        return self.values[j]

    def carrier_at(self, t: float) -> int:
        for t0, t1, who in self.carrier:
            if t0 <= t <= t1:
                last = who
                if t < t1:
                    return who
        return last

    def restrict(self, t_max: float) -> "LineagePath":
        keep = self.times <= t_max + 1e-12 * max(1.0, abs(t_max))
        segs = [(a, min(b, t_max), c) for a, b, c in self.carrier if a <= t_max]
        return LineagePath(self.times[keep], self.values[keep], segs)


@dataclass
class LabelSequence:
    entries: tuple

    @property
    def particles(self) -> list:
        return [a for a, _ in self.entries]

    @property
    def event_indices(self) -> list:
        return [b for _, b in self.entries]


@dataclass
class SpineEstimate:
    path: LineagePath
    coalescence_time: float
    complete: bool
    coalescence_event: int = -1


# ---------------------------------------------------------------------------


def _events_through(log: GenealogyLog, t: float, step: int | None):
    if step is not None:
        return int(np.searchsorted(log.steps, step, side="right"))
    return log.count_through(t)


def _carrier_segments(log: GenealogyLog, ell: int, t: float, kmax: int):
    """Backward walk: list of ``(t_start, t_end, particle)`` in forward order."""
    segs = []
    c = ell
    end = t
    k = kmax
    while True:
        deaths = log.deaths_of(c)
        j = bisect.bisect_left(deaths, k) - 1
        if j < 0:
            segs.append((0.0, end, c))
            break
        ev = deaths[j]
        start = float(log.times[ev])
        segs.append((start, end, c))
        end = start
        c = int(log.target[ev])
        k = ev
    segs.reverse()
    return segs


def _grid_step(store: PathStore, t: float):
    if store.steps is None:
        return None
    return int(store.steps[store.row_at(t)])


def _path_from_segments(store: PathStore, segs, t: float, log: GenealogyLog,
                        seg_steps=None) -> LineagePath:
    rows = np.flatnonzero(store.times <= t + 1e-12 * max(1.0, abs(t)))
    times = store.times[rows]
    who = np.empty(len(rows), dtype=np.int64)
    if seg_steps is not None and store.steps is not None:
        grid_steps = store.steps[rows]
        for (s0, s1), (_, _, c) in zip(seg_steps, segs):
            who[(grid_steps >= s0) & (grid_steps <= s1)] = c
    else:
        # Later segments win, so a switch time takes the new carrier.
        for a, _, c in segs:
            who[times >= a - 1e-12 * max(1.0, abs(a))] = c
    values = store.positions[rows, who]
    return LineagePath(times=times, values=values, carrier=list(segs))


def dhp(log: GenealogyLog, store: PathStore, ell: int, t: float) -> LineagePath:
    """Ancestral path of particle ``ell`` alive at time ``t``.

    Segment boundaries sit at event times; at a switch time the path already
    takes the later carrier, whose stored position is the landing point.
    """
    if not 0 <= ell < log.n:
        raise IndexError(f"particle {ell} out of range")
    if t > log.horizon + 1e-12 * max(1.0, log.horizon) or t < 0:
        raise ValueError(f"time {t} beyond horizon {log.horizon}")
    step = _grid_step(store, t) if store.steps is not None and _on_grid(store, t) else None
    kmax = _events_through(log, t, step)
    segs = _carrier_segments(log, ell, t, kmax)
    return _path_from_segments(store, segs, t, log, _segment_steps(log, segs, kmax, step))


def _on_grid(store, t):
    try:
        store.row_at(t)
        return True
    except ValueError:
        return False


def _segment_steps(log, segs, kmax, step):
    """Inclusive step ranges for each carrier segment (None without a step grid)."""
    if step is None:
        return None
    out = []
    # Recover the step of each switch from the event times in forward order.
    starts = []
    for a, _, _ in segs[1:]:
        k = int(np.searchsorted(log.times, a, side="left"))
        starts.append(int(log.steps[k]))
    bounds = [0] + starts
    for i, s0 in enumerate(bounds):
        s1 = bounds[i + 1] - 1 if i + 1 < len(bounds) else step
        out.append((s0, s1))
    return out


def labels(log: GenealogyLog, i: int, s: float) -> LabelSequence:
    """Label of particle ``i`` at time ``s`` by forward induction over events <= s."""
    if not 0 <= i < log.n:
        raise IndexError(f"particle {i} out of range")
    if s < 0 or s > log.horizon + 1e-12 * max(1.0, log.horizon):
        raise ValueError(f"time {s} outside [0, horizon]")
    kmax = log.count_through(s)
    lab = [((j, 0),) for j in range(log.n)]
    for k in range(kmax):
        dier, tgt = int(log.dying[k]), int(log.target[k])
        prev = lab[tgt]
        lab[tgt] = prev + ((tgt, k + 1),)
        lab[dier] = prev + ((dier, k + 1),)
    return LabelSequence(lab[i])


def all_labels(log: GenealogyLog, s: float) -> list:
    kmax = log.count_through(s)
    lab = [((j, 0),) for j in range(log.n)]
    for k in range(kmax):
        dier, tgt = int(log.dying[k]), int(log.target[k])
        prev = lab[tgt]
        lab[tgt] = prev + ((tgt, k + 1),)
        lab[dier] = prev + ((dier, k + 1),)
    return [LabelSequence(x) for x in lab]


def label_carriers(log: GenealogyLog, label: LabelSequence) -> list:
    """Collapse a label to ``(switch_time, particle)`` pairs, merging repeated particles."""
    out = []
    for a, b in label.entries:
        if out and out[-1][1] == a:
            continue
        out.append((0.0 if b == 0 else float(log.times[b - 1]), a))
    return out


def coalescence_walk(log: GenealogyLog, t: float | None = None):
    """Trace all ``n`` lineages back from ``t`` (default: horizon) at once.

    Returns ``(coalescence_event, spine_segments)``: the index of the event
    at which the last two lineage groups merge (``-1`` if they never do) and
    the carrier segments of the merged lineage on ``[0, tau]``.
    """
    t = log.horizon if t is None else t
    kmax = log.count_through(t)
    occupied = set(range(log.n))
    merge_event = -1
    k = kmax - 1
    while k >= 0 and len(occupied) > 1:
        dier = int(log.dying[k])
        if dier in occupied:
            occupied.discard(dier)
            tgt = int(log.target[k])
            if tgt in occupied:
                if len(occupied) == 1:
                    merge_event = k
                    break
            else:
                occupied.add(tgt)
        k -= 1
    if merge_event < 0:
        return -1, []
    tgt = int(log.target[merge_event])
    tau = float(log.times[merge_event])
    segs = _carrier_segments(log, tgt, tau, merge_event)
    return merge_event, segs


def spine(log: GenealogyLog, store: PathStore, t: float | None = None) -> SpineEstimate:
    """Common ancestral prefix of every particle alive at ``t`` (default: horizon).

    The path covers stored times up to and including the coalescence time,
    carried by the merged lineage (at the merge time itself, the particle
    that was jumped onto).
    """
    t = log.horizon if t is None else t
    ev, segs = coalescence_walk(log, t)
    if ev < 0:
        empty = LineagePath(times=np.zeros(0), values=np.zeros((0,) + store.positions.shape[2:]),
                            carrier=[])
        return SpineEstimate(path=empty, coalescence_time=0.0, complete=False)
    tau = float(log.times[ev])
    step = int(log.steps[ev]) if store.steps is not None else None
    if step is not None:
        rows = np.flatnonzero(store.steps <= step)
        seg_steps = _segment_steps(log, segs, ev, step)
        grid_steps = store.steps[rows]
        who = np.empty(len(rows), dtype=np.int64)
        for (s0, s1), (_, _, c) in zip(seg_steps, segs):
            who[(grid_steps >= s0) & (grid_steps <= s1)] = c
        path = LineagePath(store.times[rows], store.positions[rows, who], list(segs))
    else:
        path = _path_from_segments(store, segs, tau, log)
    return SpineEstimate(path=path, coalescence_time=tau, complete=tau > 0,
                         coalescence_event=ev)


def branch_count(log: GenealogyLog, k: int) -> int:
    """Events whose target descends from time-0 particle ``k``."""
    return int(branch_counts(log)[k])


def branch_counts(log: GenealogyLog) -> np.ndarray:
    root = np.arange(log.n)
    counts = np.zeros(log.n, dtype=np.int64)
    for dier, tgt in zip(log.dying.tolist(), log.target.tolist()):
        r = root[tgt]
        counts[r] += 1
        root[dier] = r
    return counts


def spine_branch_times(sp: SpineEstimate, log: GenealogyLog) -> list:
    """Times in ``[0, coalescence_time]`` at which the spine's carrier was jumped onto."""
    if not sp.complete:
        raise IncompleteSpineError("spine has not coalesced")
    ev = sp.coalescence_event
    # Both sides of the merging event sit on the spine; walk back from it.
    c = int(log.target[ev])
    out = [float(log.times[ev])]
    for k in range(ev - 1, -1, -1):
        dier, tgt = int(log.dying[k]), int(log.target[k])
        if dier == c:
            out.append(float(log.times[k]))
            c = tgt
        elif tgt == c:
            out.append(float(log.times[k]))
    out.reverse()
    return out
