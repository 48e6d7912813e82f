"""Brownian-bridge barrier crossing, compiled so the engine loop can inline it."""

import math

import numba as nb
import numpy as np

# Axes narrower than this many sqrt(dt) use the exact two-barrier series.
TWO_BARRIER_WIDTHS = 6.0


@nb.njit(cache=True)
def axis_crossing(a, b, w, dt):
    """Bridge crossing probabilities for one axis of width ``w``.

    ``a`` and ``b`` are the start and end offsets from the lower barrier.
    Returns ``(p_lower, p_upper, p_total)``; the two face terms are the
    single-reflection contributions and are used only to apportion exits.
    """
    if a <= 0.0 or b <= 0.0 or a >= w or b >= w:
        return 1.0, 0.0, 1.0
    p_lo = math.exp(-2.0 * a * b / dt)
    p_hi = math.exp(-2.0 * (w - a) * (w - b) / dt)
    if w >= TWO_BARRIER_WIDTHS * math.sqrt(dt):
        return p_lo, p_hi, p_lo + p_hi - p_lo * p_hi
    # Exact survival of a bridge in (0, w) from the method of images.
    surv = 1.0 - p_lo
    k = 1
    while True:
        kw = k * w
        t1 = math.exp(-2.0 * kw * (kw + b - a) / dt) + math.exp(-2.0 * kw * (kw - b + a) / dt)
        t2 = math.exp(-2.0 * (a + kw) * (b + kw) / dt) + math.exp(-2.0 * (a - kw) * (b - kw) / dt)
        surv += t1 - t2
        if t1 + t2 < 1e-17 or k > 1_000_000:
            break
        k += 1
    p_tot = 1.0 - surv
    if p_tot < 0.0:
        p_tot = 0.0
    elif p_tot > 1.0:
        p_tot = 1.0
    return p_lo, p_hi, p_tot


@nb.njit(cache=True)
def crossing_batch(x, y, lo, hi, dt):
    """Exit probabilities for bridges ``x[i] -> y[i]`` in the box ``(lo, hi)``.

    Returns ``(p_exit, faces)`` where ``faces[i, 2*a + s]`` is the share of
    face (axis ``a``, side ``s``) in the exit probability.
    """
    m, d = x.shape
    p_exit = np.empty(m)
    faces = np.zeros((m, 2 * d))
    for i in range(m):
        surv = 1.0
        tot = 0.0
        for ax in range(d):
            w = hi[ax] - lo[ax]
            p_lo, p_hi, p_ax = axis_crossing(x[i, ax] - lo[ax], y[i, ax] - lo[ax], w, dt)
            surv *= 1.0 - p_ax
            faces[i, 2 * ax] = p_lo
            faces[i, 2 * ax + 1] = p_hi
            tot += p_lo + p_hi
        p_exit[i] = 1.0 - surv
        if tot > 0.0:
            for j in range(2 * d):
                faces[i, j] /= tot
    return p_exit, faces
