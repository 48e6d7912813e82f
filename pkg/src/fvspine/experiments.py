"""Experiment runners: replica fan-out, data files and pass/fail gates.

Every replica is a pure function of ``(config, replica id)``; results are
collected in replica order before anything is written, so the output files
do not depend on the worker count.
"""

from __future__ import annotations

import hashlib
import math
import multiprocessing as mp
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import optimize

from . import __version__
from .analysis import (EmpiricalSample, boundary_occupation, face_distances, ks_distance,
                       ks_threshold, occupation_reference, replica_gap, vanishing_exponent, villemonais_gap)
from .config import ExperimentConfig
from .engine import run, tagged_particle
from .errors import InsufficientDataError
from .geometry import DomainSpec, KernelEvaluator, pullback_path, refined_simpson
from .genealogy import dhp, spine, spine_branch_times
from .io import RunManifest, file_hash, write_csv, write_events
from .rng import PARTICLE_BITS, RngStream, stream_id
from .sampler import bm_step, h_process_step

# Gate thresholds.
REJECT_KS = 0.10
SPINE_EXPONENT = (1.6, 2.4)
TAGGED_EXPONENT = (0.7, 1.3)
SLOPE_RANGE = (-0.65, -0.35)
SE_SLACK = 3.0
H_INTEGRAL_TOL = 1e-8
SERIES_AGREEMENT_TOL = 1e-10
LONG_TIME_RTOL = 0.01
BRIDGE_RTOL = 0.01
COUPLING_TOL = 1e-12
OCCUPATION_WIDTH = 0.05


def gate(name, statistic, threshold, relation, detail="") -> dict:
    s = float(statistic)
    if math.isnan(s):
        ok = False
    elif relation == "<":
        ok = s < threshold
    elif relation == "<=":
        ok = s <= threshold
    elif relation == ">":
        ok = s > threshold
    elif relation == "in":
        ok = threshold[0] <= s <= threshold[1]
    else:
        raise ValueError(f"unknown relation {relation!r}")
    thr = list(threshold) if relation == "in" else float(threshold)
    return {"name": name, "statistic": s, "threshold": thr, "relation": relation,
            "passed": bool(ok), "detail": detail}


def _map(fn, args, parallelism):
    if parallelism <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with mp.get_context("fork").Pool(min(parallelism, len(args))) as pool:
        return pool.map(fn, args, chunksize=1)


def _axis0(points) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(len(points), -1)[:, 0]


def _coords(x) -> list:
    return [float(v) for v in np.atleast_1d(x)]


def _coord_names(d) -> list:
    return ["x", "y", "z"][:d] if d <= 3 else [f"x{i}" for i in range(d)]


def _carrier_column(path) -> np.ndarray:
    who = np.empty(len(path.times), dtype=np.int64)
    for a, b, c in path.carrier:
        who[path.times >= a] = c
    return who


# ---------------------------------------------------------------------------
# spine_marginal


def _spine_replica(args):
    cfg, replica = args
    eng, qt, out = cfg.engine, cfg.query_time, Path(cfg.output_dir)
    res = run(eng, replica)
    log, store = res.log, res.store
    if cfg.params["write_events"]:
        write_events(out / "events" / f"replica_{replica:05d}.jsonl", log)
    pos_q = store.positions[store.row_at(qt)]
    tag = tagged_particle(eng, replica)
    tag_path = dhp(log, store, tag, qt)
    sp = spine(log, store)
    rec = {"replica": replica, "events": len(log), "coalescence_time": sp.coalescence_time,
           "complete": sp.complete, "tag": tag, "tagged_x": pos_q[tag].copy(),
           "distances": face_distances(pos_q, eng.domain), "spine_x": None,
           "spine_carrier": -1, "path": None, "branch": None,
           "tagged_occupation": _occupation(tag_path, store, qt, eng.domain)}
    if sp.complete:
        who = _carrier_column(sp.path)
        rec["path"] = (sp.path.times, sp.path.values, who)
    if sp.complete and sp.coalescence_time >= qt:
        rec["spine_x"] = sp.path.value_at(qt).copy()
        rec["spine_carrier"] = sp.path.carrier_at(qt)
        rec["spine_occupation"] = _occupation(sp.path, store, qt, eng.domain)
    w0, w1 = cfg.params["branch_window"] or (0.0, qt)
    if sp.complete and sp.coalescence_time >= w1:
        times = np.asarray(spine_branch_times(sp, log))
        on_spine = int(np.count_nonzero((times > w0) & (times <= w1)))
        generic = np.count_nonzero((log.times > w0) & (log.times <= w1)) / log.n
        rec["branch"] = (on_spine, float(generic))
    return rec


def _occupation(path, store, t_max, domain):
    grid = store.times[store.times <= t_max + 1e-12]
    return boundary_occupation(path, OCCUPATION_WIDTH, grid, domain)


def _ks_gates(ke, name, sample, level, planned):
    """KS gates for one sample; ``planned`` sizes the threshold when the sample is empty."""
    out = []
    laws = (("h", ke.h_stationary_cdf), ("qsd", ke.qsd_cdf))
    expect = {"spine": "h", "tagged": "qsd"}[name]
    for law, cdf in laws:
        gname = f"{name}_ks_{law}" if law == expect else f"{name}_ks_{law}_reject"
        if len(sample) == 0:
            thr = ks_threshold(planned, level) if law == expect else REJECT_KS
            out.append(gate(gname, math.nan, thr, "<" if law == expect else ">",
                            f"no {name} samples"))
            continue
        rep = ks_distance(EmpiricalSample(sample, label=name), cdf, level)
        if law == expect:
            out.append(gate(gname, rep.statistic, rep.threshold, "<",
                            f"size {rep.sample_size}"))
        else:
            out.append(gate(gname, rep.statistic, REJECT_KS, ">", f"size {rep.sample_size}"))
    return out


def _exponent_gate(name, distances, band):
    try:
        g = vanishing_exponent(distances)
        return gate(name, g, band, "in", f"{len(distances)} samples")
    except InsufficientDataError as exc:
        return gate(name, math.nan, band, "in", str(exc))


def run_spine_marginal(cfg: ExperimentConfig):
    eng, qt, out = cfg.engine, cfg.query_time, Path(cfg.output_dir)
    recs = _map(_spine_replica, [(cfg, r) for r in range(cfg.replicas)], cfg.parallelism)
    names = _coord_names(eng.domain.d)
    write_csv(out / "coalescence.csv",
              ["replica_id", "coalescence_time", "complete", "events", "tagged_particle"],
              [(r["replica"], r["coalescence_time"], r["complete"], r["events"], r["tag"])
               for r in recs])
    kept = [r for r in recs if r["spine_x"] is not None]
    write_csv(out / "spine_samples.csv",
              ["replica_id", "time", *names, "carrier", "coalescence_time"],
              [(r["replica"], qt, *_coords(r["spine_x"]), r["spine_carrier"],
                r["coalescence_time"]) for r in kept])
    write_csv(out / "tagged_samples.csv",
              ["replica_id", "time", *names, "carrier", "coalescence_time"],
              [(r["replica"], qt, *_coords(r["tagged_x"]), r["tag"], r["coalescence_time"])
               for r in recs])
    write_csv(out / "population_distances.csv", ["replica_id", "particle", "distance"],
              [(r["replica"], i, dd) for r in recs for i, dd in enumerate(r["distances"])])
    write_csv(out / "spine_paths.csv", ["replica_id", "time", *names, "carrier"],
              [(r["replica"], t, *_coords(v), c) for r in recs if r["path"] is not None
               for t, v, c in zip(*r["path"])])

    ke = KernelEvaluator(eng.domain)
    spine_x = _axis0([r["spine_x"] for r in kept]) if kept else np.zeros(0)
    tagged_x = _axis0([r["tagged_x"] for r in recs])
    gates = (_ks_gates(ke, "spine", spine_x, cfg.level, cfg.replicas)
             + _ks_gates(ke, "tagged", tagged_x, cfg.level, cfg.replicas))
    spine_d = face_distances([r["spine_x"] for r in kept], eng.domain) if kept else np.zeros(0)
    pooled = np.concatenate([r["distances"] for r in recs])
    gates.append(_exponent_gate("spine_exponent", spine_d, SPINE_EXPONENT))
    gates.append(_exponent_gate("tagged_exponent", pooled, TAGGED_EXPONENT))

    summary = {"replicas": len(recs), "retained": len(kept),
               "retention_fraction": len(kept) / len(recs),
               "mean_coalescence_time": float(np.mean([r["coalescence_time"] for r in recs])),
               "complete_fraction": float(np.mean([r["complete"] for r in recs])),
               "tagged_occupation": float(np.mean([r["tagged_occupation"] for r in recs]))}
    if kept:
        summary["spine_occupation"] = float(np.mean([r["spine_occupation"] for r in kept]))
    if eng.domain.d == 1:
        summary["occupation_reference_h"] = occupation_reference(ke, OCCUPATION_WIDTH, "h")
        summary["occupation_reference_qsd"] = occupation_reference(ke, OCCUPATION_WIDTH, "qsd")
    branch = np.array([r["branch"] for r in recs if r["branch"] is not None], dtype=float)
    if len(branch):
        summary.update(_branch_summary(branch, cfg.params["branch_window"] or (0.0, qt),
                                       eng.seed))
    return gates, summary


def _branch_summary(counts, window, seed):
    span = window[1] - window[0]

    def ratio(c):
        g = c[:, 1].sum()
        return c[:, 0].sum() / g if g > 0 else math.nan

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(counts), size=(1000, len(counts)))
    boot = np.array([ratio(counts[i]) for i in idx])
    lo, hi = np.nanpercentile(boot, [2.5, 97.5]) if np.isfinite(boot).any() else (math.nan,) * 2
    return {"branch_rate_spine": float(counts[:, 0].mean() / span),
            "branch_rate_generic": float(counts[:, 1].mean() / span),
            "branch_rate_ratio": float(ratio(counts)), "branch_ratio_ci": [float(lo), float(hi)],
            "branch_replicas": int(len(counts))}


# ---------------------------------------------------------------------------
# villemonais


def _villemonais_replica(args):
    cfg, n, replica = args
    eng = replace(cfg.engine, n=n)
    res = run(eng, replica)
    final = res.store.positions[-1]
    ke = KernelEvaluator(eng.domain)
    box = cfg.params["box"]
    gap, moment = replica_gap(ke, res.initial, final, box, eng.T)
    return n, replica, gap, moment


def run_villemonais(cfg: ExperimentConfig):
    ns = [int(n) for n in cfg.params["n_values"]]
    R = cfg.replicas
    jobs = [(cfg, n, i * R + r) for i, n in enumerate(ns) for r in range(R)]
    recs = _map(_villemonais_replica, jobs, cfg.parallelism)
    out = Path(cfg.output_dir)
    write_csv(out / "villemonais_replicas.csv", ["n", "replica_id", "gap", "inverse_survival_sq"],
              recs)
    gaps = {n: [g for m, _, g, _ in recs if m == n] for n in ns}
    moments = {n: float(np.mean([s for m, _, _, s in recs if m == n])) for n in ns}
    rep = villemonais_gap(gaps, moments)
    write_csv(out / "villemonais_fit.csv",
              ["n", "mean_gap", "se_gap", "bound", "within_bound"],
              [(r["n"], r["mean_gap"], r["se_gap"], r["bound"], r["within_bound"])
               for r in rep.rows()])
    gates = [gate("villemonais_slope", rep.slope, SLOPE_RANGE, "in")]
    for n, m, s, b in zip(rep.n_values, rep.mean_gap, rep.se_gap, rep.bound):
        gates.append(gate(f"villemonais_bound_n{n}", m - SE_SLACK * s, b, "<=",
                          f"mean gap {m:.4g}, se {s:.2g}"))
    summary = {"slope": rep.slope, "intercept": rep.intercept, "constant": rep.constant,
               "survival_moments": {str(n): moments[n] for n in ns}}
    return gates, summary, sorted({j[2] for j in jobs})


# ---------------------------------------------------------------------------
# kernels


def _x_grid(domain: DomainSpec):
    if domain.d == 1:
        return domain.lo + domain.widths * np.linspace(0.1, 0.9, 9)[:, None]
    axes = [domain.lo[a] + domain.widths[a] * np.array([0.25, 0.5, 0.75])
            for a in range(domain.d)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.d)


def h_integral_errors(ke: KernelEvaluator, ts=(0.1, 1.0, 5.0)):
    """``|int h_kernel(t, x, y) dy - 1|`` on the interior grid (per-axis factorization)."""
    dom = ke.domain
    rows = []
    for t in ts:
        for x in _x_grid(dom):
            total = 1.0
            for a in range(dom.d):
                total *= refined_simpson(lambda g, a=a: ke.axis_h_kernel(a, t, x[a], g),
                                         float(dom.lo[a]), float(dom.hi[a]))
            rows.append((t, x, abs(total - 1.0)))
    return rows


def series_agreement(ke: KernelEvaluator, ts=None):
    """Max ``|image - spectral|`` of ``p_t`` over grid pairs, per ``t``."""
    ts = np.geomspace(0.05, 20.0, 12) if ts is None else ts
    xs = _x_grid(ke.domain)
    X, Y = np.repeat(xs, len(xs), axis=0), np.tile(xs, (len(xs), 1))
    return [(float(t), float(np.max(np.abs(ke.heat_kernel(t, X, Y, "image")
                                          - ke.heat_kernel(t, X, Y, "spectral")))))
            for t in ts]


def long_time_errors(ke: KernelEvaluator, ts=(5.0, 10.0, 20.0)):
    """Sup relative error of the conditioned density from the centre against the QSD."""
    lo, hi = float(ke.domain.lo[0]), float(ke.domain.hi[0])
    ys = np.linspace(lo, hi, 201)[1:-1]
    x = 0.5 * (lo + hi)
    q = ke.qsd_density(ys)
    return [(t, float(np.max(np.abs(ke.conditioned_density(t, x, ys) / q - 1.0)))) for t in ts]


def bridge_ratio_error(ke: KernelEvaluator, t=8.0, t1=1.0):
    """Largest relative difference between bridge marginals with different right pins."""
    lo, hi = float(ke.domain.lo[0]), float(ke.domain.hi[0])
    L = hi - lo
    ys = np.linspace(lo, hi, 201)[1:-1]
    worst = 0.0
    for x in lo + L * np.array([0.2, 0.5, 0.8]):
        dens = [ke.bridge_marginal(t, t1, x, v, ys)
                for v in lo + L * np.array([0.1, 0.3, 0.5, 0.7, 0.9])]
        for i in range(len(dens)):
            for j in range(i + 1, len(dens)):
                worst = max(worst, float(np.max(np.abs(dens[i] / dens[j] - 1.0))))
    return worst


def h_chain(ke: KernelEvaluator, rng: RngStream, steps: int, dt: float) -> np.ndarray:
    """Chained h-process steps from a start drawn from the h-stationary law."""
    lo, hi = float(ke.domain.lo[0]), float(ke.domain.hi[0])
    u = float(rng.uniform())
    x = optimize.brentq(lambda y: ke.h_stationary_cdf(y) - u, lo, hi, xtol=1e-14)
    out = np.empty(steps)
    for k in range(steps):
        x = h_process_step(rng, ke, x, dt).item()
        out[k] = x
    return out


def run_kernels(cfg: ExperimentConfig):
    out = Path(cfg.output_dir)
    gates, rows = [], []
    first_1d = None
    for bounds in cfg.params["domains"]:
        dom = DomainSpec("interval" if len(bounds) == 1 else "rectangle",
                         tuple(tuple(map(float, b)) for b in bounds))
        ke = KernelEvaluator(dom)
        tag = f"{dom.d}d"
        ints = h_integral_errors(ke)
        agree = series_agreement(ke)
        rows += [(tag, "h_integral", t, *_pad(x), e) for t, x, e in ints]
        rows += [(tag, "series_agreement", t, *_pad(None), e) for t, e in agree]
        gates.append(gate(f"h_integral_{tag}", max(e for *_, e in ints), H_INTEGRAL_TOL, "<"))
        gates.append(gate(f"series_agreement_{tag}", max(e for _, e in agree),
                          SERIES_AGREEMENT_TOL, "<"))
        if dom.d == 1 and first_1d is None:
            first_1d = ke
    summary = {}
    if first_1d is not None:
        ke = first_1d
        lt = long_time_errors(ke)
        rows += [("1d", "long_time_density", t, *_pad(None), e) for t, e in lt]
        gates.append(gate("long_time_density", max(e for _, e in lt), LONG_TIME_RTOL, "<"))
        br = bridge_ratio_error(ke)
        rows.append(("1d", "bridge_ratio", 1.0, *_pad(None), br))
        gates.append(gate("bridge_ratio", br, BRIDGE_RTOL, "<"))
        rng = RngStream(cfg.seed, stream_id(0, 0))
        chain = h_chain(ke, rng, int(cfg.params["h_chain_steps"]), float(cfg.params["h_chain_dt"]))
        write_csv(out / "h_chain.csv", ["step", "x"], enumerate(chain, start=1))
        rep = ks_distance(chain, ke.h_stationary_cdf, cfg.level)
        gates.append(gate("h_chain_ks", rep.statistic, rep.threshold, "<",
                          f"size {rep.sample_size}"))
    write_csv(out / "kernels.csv", ["domain", "check", "t", "x", "y", "error"], rows)
    return gates, summary


def _pad(x):
    vals = [] if x is None else _coords(x)
    return (vals + [None, None])[:2]


# ---------------------------------------------------------------------------
# boundary (discretization bias of the killed walk)


def killed_walk_survival(rng: RngStream, domain: DomainSpec, start, t: float, dt: float,
                         trials: int, bridge_correction: bool) -> float:
    """Fraction of ``trials`` discretized walks from ``start`` still alive at ``t``."""
    x = np.broadcast_to(domain.as_points(start), (trials, domain.d)).copy()
    alive = np.arange(trials)
    for _ in range(int(round(t / dt))):
        res = bm_step(rng, x, dt, domain, bridge_correction)
        keep = ~res.exited
        x = res.new_position[keep]
        alive = alive[keep]
        if len(alive) == 0:
            break
    return len(alive) / trials


def run_boundary(cfg: ExperimentConfig):
    p = cfg.params
    dom = cfg.engine.domain
    ke = KernelEvaluator(dom)
    exact = float(ke.survival(float(p["t"]), p["start"]))
    n = int(p["trials"])
    est = {}
    for slot, corrected in ((0, True), (1, False)):
        rng = RngStream(cfg.seed, stream_id(0, slot))
        est[corrected] = killed_walk_survival(rng, dom, p["start"], float(p["t"]),
                                              float(p["step_dt"]), n, corrected)

    def z(q):
        se = math.sqrt(max(q * (1 - q), 1e-300) / n)
        return (q - exact) / se, se

    zc, sec = z(est[True])
    zu, seu = z(est[False])
    write_csv(Path(cfg.output_dir) / "survival.csv",
              ["estimator", "estimate", "standard_error", "exact", "z"],
              [("bridge_corrected", est[True], sec, exact, zc),
               ("uncorrected", est[False], seu, exact, zu)])
    gates = [gate("corrected_within_3se", abs(zc), SE_SLACK, "<="),
             gate("uncorrected_high_3se", zu, SE_SLACK, ">")]
    return gates, {"exact": exact, "corrected": est[True], "uncorrected": est[False]}


# ---------------------------------------------------------------------------
# transform_coupling


def _transform_replica(args):
    cfg, replica = args
    a = float(cfg.params["exponent"])
    first = run(cfg.engine, replica)
    again = run(cfg.engine, replica)
    direct = pullback_path(spine(first.log, first.store).path, a)
    sp = spine(again.log, again.store.map(lambda v: v ** (1.0 / a)))
    same_log = all(np.array_equal(getattr(first.log, k), getattr(again.log, k))
                   for k in ("times", "steps", "dying", "target", "landing"))
    diff = (float(np.max(np.abs(direct.values - sp.path.values)))
            if len(direct.times) and direct.values.shape == sp.path.values.shape else
            (0.0 if direct.values.shape == sp.path.values.shape else math.inf))
    return replica, sp.complete, same_log, diff, direct


def run_transform(cfg: ExperimentConfig):
    recs = _map(_transform_replica, [(cfg, r) for r in range(cfg.replicas)], cfg.parallelism)
    names = _coord_names(cfg.engine.domain.d)
    write_csv(Path(cfg.output_dir) / "transform_spines.csv", ["replica_id", "time", *names],
              [(r, t, *_coords(v)) for r, _, _, _, p in recs for t, v in zip(p.times, p.values)])
    complete = sum(c for _, c, _, _, _ in recs)
    worst = max(d for *_, d, _ in recs)
    gates = [gate("transform_coupling", worst if complete else math.nan, COUPLING_TOL, "<=",
                  f"{complete} complete spines"),
             gate("transform_identical_logs", sum(not s for _, _, s, _, _ in recs), 0.5, "<")]
    return gates, {"complete_spines": complete, "max_difference": worst}


# ---------------------------------------------------------------------------
# plain simulation


def _simulate_replica(args):
    cfg, replica = args
    res = run(cfg.engine, replica)
    write_events(Path(cfg.output_dir) / "events" / f"replica_{replica:05d}.jsonl", res.log)
    inside = bool(np.all(np.asarray(res.store.positions) > cfg.engine.domain.lo)
                  and np.all(np.asarray(res.store.positions) < cfg.engine.domain.hi))
    log = res.log
    ordered = bool(np.all(np.diff(log.times) >= 0) and np.all(log.dying != log.target))
    snaps = [(s.time, s.positions) for s in res.snapshots]
    snaps.append((cfg.engine.T, res.store.positions[-1]))
    return replica, len(log), inside, ordered, snaps


def simulate(cfg: ExperimentConfig) -> RunManifest:
    """Run the engine for every replica; write event logs and snapshots."""
    recs = _map(_simulate_replica, [(cfg, r) for r in range(cfg.replicas)], cfg.parallelism)
    out = Path(cfg.output_dir)
    names = _coord_names(cfg.engine.domain.d)
    write_csv(out / "snapshots.csv", ["replica_id", "time", "particle", *names],
              [(r, t, i, *_coords(p)) for r, _, _, _, snaps in recs for t, pos in snaps
               for i, p in enumerate(pos)])
    gates = [gate("population_conserved", sum(not c for _, _, c, _, _ in recs), 0.5, "<"),
             gate("events_ordered", sum(not o for *_, o, _ in recs), 0.5, "<")]
    summary = {"events_per_replica": float(np.mean([e for _, e, *_ in recs]))}
    return _finish(cfg, gates, summary, list(range(cfg.replicas)), "simulate")


RUNNERS = {
    "spine_marginal": run_spine_marginal,
    "villemonais": run_villemonais,
    "kernels": run_kernels,
    "boundary": run_boundary,
    "transform_coupling": run_transform,
}


def code_version() -> str:
    """Package version plus a digest of the package sources."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def cached_manifest(cfg: ExperimentConfig) -> RunManifest | None:
    """The manifest already in ``cfg.output_dir`` if it came from this config and code."""
    out = Path(cfg.output_dir)
    try:
        m = RunManifest.load(out)
    except FileNotFoundError:
        return None
    if m.config_hash != cfg.config_hash() or m.code_version != code_version():
        return None
    for name, digest in m.outputs.items():
        if not (out / name).is_file() or file_hash(out / name) != digest:
            return None
    return m


def run_experiment(cfg: ExperimentConfig, reuse: bool = False) -> RunManifest:
    """Run one experiment, write its data files and manifest, and return the manifest.

    With ``reuse``, a verified manifest from an identical earlier run is returned instead.
    """
    if reuse and (m := cached_manifest(cfg)) is not None:
        return m
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    result = RUNNERS[cfg.experiment](cfg)
    if len(result) == 3:
        gates, summary, replicas = result
    else:
        gates, summary = result
        replicas = list(range(cfg.replicas))
    return _finish(cfg, gates, summary, replicas, cfg.experiment)


def _finish(cfg, gates, summary, replicas, experiment) -> RunManifest:
    out = Path(cfg.output_dir)
    write_csv(out / "gates.csv", ["gate", "statistic", "threshold", "relation", "passed"],
              [(g["name"], g["statistic"], _thr(g["threshold"]), g["relation"], g["passed"])
               for g in gates])
    outputs = {str(p.relative_to(out)): file_hash(p) for p in sorted(out.rglob("*"))
               if p.is_file() and p.name != "manifest.json" and not p.name.startswith("report")}
    manifest = RunManifest(
        experiment=experiment, config_hash=cfg.config_hash(), seed=cfg.seed,
        code_version=code_version(),
        stream_ids=[[r, r << PARTICLE_BITS] for r in replicas], outputs=outputs, gates=gates,
        summary=summary, config=cfg.to_dict(), root=str(out))
    manifest.save(out)
    return manifest


def _thr(t):
    return " ".join(format(v, ".17g") for v in t) if isinstance(t, list) else t
