"""Brownian steps with bridge-corrected killing and exact reference samplers.

``bm_step`` is the discretized driving motion: a Gaussian proposal plus a
Bernoulli draw for an unseen excursion out of the domain between the two
grid points.  ``h_process_step`` and ``pinned_bridge_paths`` sample exactly
(up to a 4096-point grid) from kernel densities and serve as references for
the particle system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._crossing import crossing_batch
from .errors import DomainError, NumericFloorError
from .geometry import PHI_FLOOR, DomainSpec, KernelEvaluator, contains
from .rng import RngStream

GRID_POINTS = 4096
# Half-width of the sampling window in units of the proposal's standard deviation.
WINDOW_SIGMAS = 12.0
_BLOCK = 256


def gaussian_increment(rng: RngStream, dt: float, d: int = 1, size=None) -> np.ndarray:
    """``d`` centered Gaussians of variance ``dt`` (leading ``size`` batch axes optional)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    shape = (d,) if size is None else tuple(np.atleast_1d(size)) + (d,)
    return math.sqrt(dt) * rng.normal(shape)


def crossing_probability(x, y, dt: float, domain: DomainSpec):
    """Probability that a Brownian bridge ``x -> y`` over ``dt`` leaves ``domain``."""
    xp = domain.as_points(x)
    yp = domain.as_points(y)
    xb, yb = np.broadcast_arrays(xp, yp)
    shape = xb.shape[:-1]
    p, _ = crossing_batch(np.ascontiguousarray(xb.reshape(-1, domain.d)),
                          np.ascontiguousarray(yb.reshape(-1, domain.d)),
                          domain.lo, domain.hi, float(dt))
    p = p.reshape(shape)
    return float(p) if p.ndim == 0 else p


@dataclass
class StepResult:
    """Outcome of one step.  ``exit_face`` is ``(axis, side)`` with side 0 = lower."""

    new_position: np.ndarray
    exited: np.ndarray | bool
    exit_face: object = None


def resolve_step(x, y, u, dt, domain: DomainSpec, bridge_correction: bool = True):
    """Deterministic part of :func:`bm_step` given the proposal ``y`` and uniform ``u``.

    Returns ``(exited, axis, side)`` arrays; ``axis == -1`` when no exit.
    """
    lo, hi = domain.lo, domain.hi
    m, d = x.shape
    outside = ~np.all((y > lo) & (y < hi), axis=-1)
    axis = np.full(m, -1)
    side = np.full(m, -1)
    if np.any(outside):
        over = np.concatenate([lo - y, y - hi], axis=-1)[outside]
        j = np.argmax(over, axis=-1)
        axis[outside] = j % d
        side[outside] = j // d
    exited = outside.copy()
    if bridge_correction:
        inside = ~outside
        if np.any(inside):
            p, faces = crossing_batch(np.ascontiguousarray(x[inside]),
                                      np.ascontiguousarray(y[inside]), lo, hi, float(dt))
            ui = u[inside]
            hit = ui < p
            # Reuse the uniform to pick the face: u/p is uniform on [0, 1) given a hit.
            frac = np.where(hit, ui / np.where(p > 0, p, 1.0), 0.0)
            cum = np.cumsum(faces, axis=-1)
            # faces are ordered (axis0 lo, axis0 hi, axis1 lo, ...)
            j = np.minimum((cum <= frac[:, None]).sum(axis=-1), 2 * d - 1)
            idx = np.flatnonzero(inside)[hit]
            exited[idx] = True
            axis[idx] = j[hit] // 2
            side[idx] = j[hit] % 2
    return exited, axis, side


def bm_step(rng: RngStream, x, dt: float, domain: DomainSpec,
            bridge_correction: bool = True) -> StepResult:
    """Advance one point (shape ``(d,)``) or a batch (shape ``(m, d)``) by ``dt``.

    The proposal is drawn first, then one uniform per point decides an
    unseen bridge excursion.  With ``bridge_correction=False`` only
    proposals landing outside count as exits.
    """
    xp = domain.as_points(x)
    single = xp.ndim == 1
    xb = np.atleast_2d(xp)
    if not np.all(contains(domain, xb)):
        raise DomainError("bm_step requires a starting point inside the domain")
    m = xb.shape[0]
    y = xb + gaussian_increment(rng, dt, domain.d, size=m)
    u = rng.uniform(m)
    exited, axis, side = resolve_step(xb, y, u, dt, domain, bridge_correction)
    if single:
        face = None if axis[0] < 0 else (int(axis[0]), int(side[0]))
        return StepResult(new_position=y[0], exited=bool(exited[0]), exit_face=face)
    faces = np.stack([axis, side], axis=-1)
    return StepResult(new_position=y, exited=exited, exit_face=faces)


# ---------------------------------------------------------------------------
# Inverse-CDF sampling on per-sample grids


def grid_inverse_cdf(density, left, right, u, npts: int = GRID_POINTS):
    """Sample from densities tabulated on per-sample grids.

    ``density(grid)`` maps a ``(m, npts)`` grid to unnormalized values;
    ``left``/``right``/``u`` have shape ``(m,)``.  Cell masses come from the
    trapezoid rule and the CDF is interpolated linearly inside each cell.
    """
    s = np.linspace(0.0, 1.0, npts)
    if np.ptp(left) == 0 and np.ptp(right) == 0:
        # one grid shared by every row; density sees it as 1-D
        shared = left[0] + (right[0] - left[0]) * s
        f = np.clip(density(shared), 0.0, None)
        grid = np.broadcast_to(shared, f.shape)
    else:
        grid = left[:, None] + (right - left)[:, None] * s
        f = np.clip(density(grid), 0.0, None)
    cell = 0.5 * (f[:, 1:] + f[:, :-1]) * np.diff(grid, axis=-1)
    cdf = np.concatenate([np.zeros((len(u), 1)), np.cumsum(cell, axis=-1)], axis=-1)
    total = cdf[:, -1]
    if np.any(total <= 0):
        raise NumericFloorError("tabulated density has no mass")
    target = u * total
    j = np.clip((cdf <= target[:, None]).sum(axis=-1) - 1, 0, npts - 2)
    rows = np.arange(len(u))
    c0, c1 = cdf[rows, j], cdf[rows, j + 1]
    frac = np.where(c1 > c0, (target - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.5)
    return grid[rows, j] + frac * (grid[rows, j + 1] - grid[rows, j])


def grid_law(density, left: float, right: float, npts: int = GRID_POINTS):
    """Grid, tabulated density and CDF of the law used by :func:`grid_inverse_cdf`."""
    grid = np.linspace(left, right, npts)
    f = np.clip(density(grid[None, :])[0], 0.0, None)
    cell = 0.5 * (f[1:] + f[:-1]) * np.diff(grid)
    cdf = np.concatenate([[0.0], np.cumsum(cell)])
    return grid, f / cdf[-1], cdf / cdf[-1]


def _interior_clip(v, lo, hi):
    return np.clip(v, np.nextafter(lo, hi), np.nextafter(hi, lo))


def _h_window(ke: KernelEvaluator, a: int, x, dt):
    lo = float(ke.domain.lo[a])
    hi = float(ke.domain.hi[a])
    half = WINDOW_SIGMAS * math.sqrt(dt)
    return np.maximum(x - half, lo), np.minimum(x + half, hi)


def h_process_step(rng: RngStream, ke: KernelEvaluator, x, dt: float, size: int | None = None):
    """Exact draw from ``y -> h_kernel(dt, x, y)`` (never leaves the domain).

    ``x`` may be one point or a batch ``(m, d)``; with ``size`` given, that
    many independent draws are made from the single point ``x``.
    Each axis is sampled independently since the h-kernel factorizes.
    """
    dom = ke.domain
    xp = dom.as_points(x)
    single = xp.ndim == 1
    if size is not None:
        if not single:
            raise ValueError("size requires a single starting point")
        xb = np.broadcast_to(xp, (int(size), dom.d)).copy()
    else:
        xb = np.atleast_2d(xp).copy()
    if not np.all(contains(dom, xb)):
        raise DomainError("h_process_step requires a point inside the domain")
    if np.any(np.asarray(ke.spectral.phi(xb)) < PHI_FLOOR):
        raise NumericFloorError("phi(x) below floor")
    m = xb.shape[0]
    u = rng.uniform((m, dom.d))
    out = np.empty_like(xb)
    lo, hi = dom.lo, dom.hi
    for a in range(dom.d):
        if size is not None:
            # Same starting point: tabulate once.
            left, right = _h_window(ke, a, float(xb[0, a]), dt)
            grid, _, cdf = grid_law(lambda g: ke.axis_h_kernel(a, dt, float(xb[0, a]), g),
                                    float(left), float(right))
            out[:, a] = _inverse_from_table(grid, cdf, u[:, a], ke, a, dt, float(xb[0, a]))
            continue
        for s in range(0, m, _BLOCK):
            xs = xb[s:s + _BLOCK, a]
            left, right = _h_window(ke, a, xs, dt)
            out[s:s + _BLOCK, a] = grid_inverse_cdf(
                lambda g, xs=xs: _axis_h_rows(ke, a, dt, xs, g), left, right, u[s:s + _BLOCK, a])
    out = _interior_clip(out, lo, hi)
    return out[0] if single and size is None else out


def _axis_h_rows(ke, a, dt, xs, grid):
    lo = float(ke.domain.lo[a])
    L = float(ke.domain.widths[a])
    xo = xs - lo
    method = "spectral" if grid.ndim == 1 else None
    k = ke._axis_kernel(a, dt, xo[:, None], grid - lo, shift=ke.spectral.axis_lambdas[a],
                        method=method)
    return k * np.sin(np.pi * (grid - lo) / L) / np.sin(np.pi * xo / L)[:, None]


def _inverse_from_table(grid, cdf, u, ke, a, dt, x0):
    return np.interp(u, cdf, grid)


def pinned_bridge_paths(rng: RngStream, ke: KernelEvaluator, x, y, s: float, grid_dt: float,
                        count: int = 1):
    """Sample ``count`` killed-BM bridges ``x -> y`` over ``[0, s]`` on a time grid.

    Returns ``(times, values)`` with ``values`` of shape ``(count, len(times), d)``.
    Each grid value is drawn from the pinned marginal given the previous one,
    i.e. from ``bridge_marginal(s - t_j, dt_j, z_j, y, .)``.
    """
    dom = ke.domain
    xp = dom.as_points(x)
    yp = dom.as_points(y)
    if not (contains(dom, xp) and contains(dom, yp)):
        raise DomainError("bridge endpoints must lie inside the domain")
    if not 0 < grid_dt < s:
        raise ValueError("need 0 < grid_dt < s")
    if np.any(np.asarray(ke._scaled_kernel(s, xp - dom.lo, yp - dom.lo)) < 1e-290):
        raise NumericFloorError("p_s(x, y) below floor")
    steps = int(math.ceil(s / grid_dt - 1e-9))
    times = np.minimum(np.arange(steps + 1) * grid_dt, s)
    times[-1] = s
    vals = np.empty((count, len(times), dom.d))
    vals[:, 0] = xp
    vals[:, -1] = yp
    lams = ke.spectral.axis_lambdas
    for j in range(len(times) - 2):
        h = times[j + 1] - times[j]
        rest = s - times[j + 1]
        u = rng.uniform((count, dom.d))
        for a in range(dom.d):
            lo_a = float(dom.lo[a])
            hi_a = float(dom.hi[a])
            z = vals[:, j, a]
            target = float(yp[a])
            mean = z + h / (h + rest) * (target - z)
            sd = math.sqrt(h * rest / (h + rest))
            left = np.maximum(mean - WINDOW_SIGMAS * sd, lo_a)
            right = np.minimum(mean + WINDOW_SIGMAS * sd, hi_a)

            def dens(g, z=z, a=a, lo_a=lo_a, h=h, rest=rest, target=target):
                k1 = ke._axis_kernel(a, h, (z - lo_a)[:, None], g - lo_a, shift=lams[a])
                k2 = ke._axis_kernel(a, rest, g - lo_a, target - lo_a, shift=lams[a])
                return k1 * k2

            for b in range(0, count, _BLOCK):
                sl = slice(b, b + _BLOCK)
                vals[sl, j + 1, a] = grid_inverse_cdf(
                    lambda g, sl=sl: dens(g, z=z[sl]), left[sl], right[sl], u[sl, a])
            vals[:, j + 1, a] = _interior_clip(vals[:, j + 1, a], lo_a, hi_a)
    return times, vals


def pinned_bridge_path(rng: RngStream, ke: KernelEvaluator, x, y, s: float, grid_dt: float):
    """One conditioned pinned path as a :class:`~fvspine.genealogy.LineagePath`."""
    from .genealogy import LineagePath

    times, vals = pinned_bridge_paths(rng, ke, x, y, s, grid_dt, count=1)
    return LineagePath(times=times, values=vals[0], carrier=[])
