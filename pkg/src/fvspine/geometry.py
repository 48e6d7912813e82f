"""Domains, Dirichlet spectral data and reference densities for killed Brownian motion.

Only intervals and axis-aligned rectangles are supported.  On these domains
the killed heat kernel factorizes over axes, and each 1D factor has two exact
representations:

* image (reflection) series, fast for small ``t``::

      p_t(x, y) = sum_m g_t(y - x + 2mL) - g_t(y + x + 2mL)

* spectral series, fast for large ``t``::

      p_t(x, y) = (2/L) sum_k exp(-k^2 pi^2 t / (2 L^2)) sin(k pi x/L) sin(k pi y/L)

Every density derived here (conditioned, h-transformed, pinned bridge) is
built from these two series.  Long-time quantities are evaluated in
"scaled" form, multiplying each factor by ``exp(lambda_a t)`` inside the
series, so that ratios stay finite when ``p_t`` itself underflows.

Coordinates are offsets from the lower corner internally; the public API
takes absolute coordinates.  A "point" is an array whose last axis has
length ``d``; for ``d == 1`` a bare scalar or a 1D array of positions is
also accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DimensionMismatchError, DomainError, NumericFloorError

SERIES_TOL = 1e-14
SIMPSON_PANELS = 2048
SIMPSON_RTOL = 1e-9
PHI_FLOOR = 1e-12
# Normalizers below this are treated as underflow.
MASS_FLOOR = 1e-290


@dataclass(frozen=True)
class DomainSpec:
    """Open interval or axis-aligned box ``prod_a (lo_a, hi_a)``."""

    kind: str
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        if not bounds:
            raise DomainError("domain needs at least one axis")
        if self.kind == "interval" and len(bounds) != 1:
            raise DomainError("an interval has exactly one axis")
        for lo, hi in bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise DomainError(f"invalid axis bounds ({lo}, {hi})")

    @classmethod
    def interval(cls, lo: float, hi: float) -> "DomainSpec":
        return cls("interval", ((lo, hi),))

    @classmethod
    def rectangle(cls, *bounds: Sequence[float]) -> "DomainSpec":
        return cls("rectangle", tuple(tuple(b) for b in bounds))

    @property
    def d(self) -> int:
        return len(self.bounds)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def as_points(self, x) -> np.ndarray:
        """Return ``x`` as a float array of shape ``(..., d)``."""
        arr = np.asarray(x, dtype=float)
        if self.d == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
            arr = arr[..., None]
        if arr.ndim == 0 or arr.shape[-1] != self.d:
            raise DimensionMismatchError(
                f"expected points of dimension {self.d}, got shape {np.shape(x)}"
            )
        return arr

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bounds": [list(b) for b in self.bounds]}


def contains(domain: DomainSpec, x) -> np.ndarray | bool:
    """True where ``x`` lies strictly inside the open domain."""
    p = domain.as_points(x)
    inside = np.all((p > domain.lo) & (p < domain.hi), axis=-1)
    return bool(inside) if inside.ndim == 0 else inside


def dist_to_boundary(domain: DomainSpec, x) -> np.ndarray | float:
    """Euclidean distance to the complement; zero outside the domain."""
    p = domain.as_points(x)
    per_axis = np.minimum(p - domain.lo, domain.hi - p)
    dist = np.clip(per_axis.min(axis=-1), 0.0, None)
    return float(dist) if dist.ndim == 0 else dist


@dataclass(frozen=True)
class SpectralData:
    """Principal Dirichlet eigenpair of ``-1/2 Laplacian``; ``phi`` has sup 1."""

    lambda1: float
    phi: Callable[[np.ndarray], np.ndarray]
    phi_mass: float
    phi2_mass: float
    axis_lambdas: tuple[float, ...] = ()


def eigen(domain: DomainSpec) -> SpectralData:
    widths = domain.widths
    lo = domain.lo
    lambdas = tuple(float(np.pi**2 / (2.0 * w**2)) for w in widths)

    def phi(x):
        p = domain.as_points(x)
        val = np.prod(np.sin(np.pi * (p - lo) / widths), axis=-1)
        return float(val) if val.ndim == 0 else val

    return SpectralData(
        lambda1=float(sum(lambdas)),
        phi=phi,
        phi_mass=float(np.prod(2.0 * widths / np.pi)),
        phi2_mass=float(np.prod(widths / 2.0)),
        axis_lambdas=lambdas,
    )


# ---------------------------------------------------------------------------
# 1D series on (0, L).  ``t`` is a scalar; x, y broadcast.  ``shift`` multiplies
# the result by exp(shift * t) inside the sum.


def _spectral_terms(t: float, L: float, tol: float, shift: float) -> int:
    a = np.pi**2 * t / (2.0 * L * L)
    coef = max(2.0 / L, 4.0 / np.pi)
    k = 1
    while k < 100_000:
        expo = -a * ((k + 1) ** 2) + shift * t
        tail = coef * math.exp(expo) / max(1.0 - math.exp(-a * (2 * k + 3)), 1e-300)
        if tail < tol:
            return k
        k += 1
    return k


def _image_terms(t: float, L: float, tol: float, shift: float) -> int:
    norm = 1.0 / math.sqrt(2.0 * math.pi * t)
    m = 1
    while m < 100_000:
        z = 2.0 * m * L
        if 4.0 * norm * math.exp(-z * z / (2.0 * t) + shift * t) < tol:
            return m
        m += 1
    return m


def axis_kernel_spectral(t, x, y, L, tol=SERIES_TOL, shift=0.0):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    K = _spectral_terms(t, L, tol, shift)
    a = np.pi**2 * t / (2.0 * L * L)
    if x.ndim == 2 and x.shape[1] == 1 and y.ndim == 1:
        # rows of starting points against one shared grid: a single matmul
        k = np.arange(1, K + 1, dtype=float)
        w = (2.0 / L) * np.exp(-(k * k) * a + shift * t)
        sx = np.sin(x * k * (np.pi / L)) * w
        return sx @ np.sin(np.multiply.outer(k, y) * (np.pi / L))
    out = np.zeros(np.broadcast_shapes(x.shape, y.shape))
    for k in range(1, K + 1):
        w = (2.0 / L) * math.exp(-k * k * a + shift * t)
        out += w * np.sin(x * (k * np.pi / L)) * np.sin(y * (k * np.pi / L))
    return out


def axis_kernel_image(t, x, y, L, tol=SERIES_TOL, shift=0.0):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    M = _image_terms(t, L, tol, shift)
    diff = y - x
    summ = y + x
    out = np.zeros(np.broadcast_shapes(x.shape, y.shape))
    scale = -1.0 / (2.0 * t)
    for m in range(-M, M + 1):
        off = 2.0 * m * L
        out += np.exp(scale * (diff + off) ** 2)
        out -= np.exp(scale * (summ + off) ** 2)
    return out * (math.exp(shift * t) / math.sqrt(2.0 * math.pi * t))


def axis_mass_spectral(t, x, a, b, L, tol=SERIES_TOL, shift=0.0):
    """``exp(shift t) * int_a^b p_t(x, y) dy`` for ``0 <= a < b <= L``."""
    x = np.asarray(x, dtype=float)
    K = _spectral_terms(t, L, tol, shift)
    k = np.arange(1, K + 1, dtype=float)
    w = (2.0 / np.pi) / k * np.exp(-(k * k) * (np.pi**2 * t / (2.0 * L * L)) + shift * t)
    w = w * (np.cos(k * np.pi * a / L) - np.cos(k * np.pi * b / L))
    sx = np.sin(np.multiply.outer(x, k) * (np.pi / L))
    return np.sum(w * sx, axis=-1)


def axis_mass_image(t, x, a, b, L, tol=SERIES_TOL, shift=0.0):
    x = np.asarray(x, dtype=float)
    M = _image_terms(t, L, tol, shift)
    m = np.arange(-M, M + 1, dtype=float) * (2.0 * L)
    s = math.sqrt(t)
    xm = x[..., None]
    terms = (
        ndtr((b - xm + m) / s)
        - ndtr((a - xm + m) / s)
        - ndtr((b + xm + m) / s)
        + ndtr((a + xm + m) / s)
    )
    return math.exp(shift * t) * np.sum(terms, axis=-1)


def simpson(values: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """Composite Simpson rule on an odd number of equally spaced samples."""
    v = np.moveaxis(values, axis, -1)
    if v.shape[-1] % 2 == 0:
        raise ValueError("Simpson's rule needs an even number of panels")
    return (h / 3.0) * (
        v[..., 0] + v[..., -1] + 4.0 * v[..., 1:-1:2].sum(-1) + 2.0 * v[..., 2:-1:2].sum(-1)
    )


def refined_simpson(fn, a: float, b: float, panels: int = SIMPSON_PANELS,
                    rtol: float = SIMPSON_RTOL, max_panels: int = 2**20):
    """Simpson's rule on ``[a, b]``, doubling panels until the relative change < rtol.

    ``fn`` maps a grid of shape ``(m,)`` to values of shape ``(..., m)``.
    """
    prev = None
    while True:
        grid = np.linspace(a, b, panels + 1)
        val = simpson(fn(grid), (b - a) / panels)
        if prev is not None:
            scale = np.maximum(np.abs(val), np.finfo(float).tiny)
            if np.all(np.abs(val - prev) <= rtol * scale):
                return val
        if panels >= max_panels:
            return val
        prev = val
        panels *= 2


@dataclass(frozen=True)
class KernelEvaluator:
    """Exact killed-BM kernels on an interval or rectangle.

    ``t_switch`` holds the per-axis crossover ``L^2/pi`` between the image
    series (``t < t_switch``) and the spectral series.
    """

    domain: DomainSpec
    series_tol: float = SERIES_TOL
    spectral: SpectralData = field(init=False)
    t_switch: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "spectral", eigen(self.domain))
        object.__setattr__(
            self, "t_switch", tuple(float(w * w / np.pi) for w in self.domain.widths)
        )

    # -- helpers ---------------------------------------------------------
    def _interior(self, x, name="point") -> np.ndarray:
        p = self.domain.as_points(x)
        if not np.all(contains(self.domain, p)):
            raise DomainError(f"{name} outside the open domain")
        return p - self.domain.lo

    @staticmethod
    def _check_time(t):
        if not (np.isscalar(t) and t > 0 and math.isfinite(t)):
            raise ValueError(f"time must be a positive finite scalar, got {t!r}")
        return float(t)

    def _axis_kernel(self, a, t, x, y, shift=0.0, method=None):
        L = float(self.domain.widths[a])
        if method is None:
            method = "image" if t < self.t_switch[a] else "spectral"
        fn = axis_kernel_image if method == "image" else axis_kernel_spectral
        return fn(t, x, y, L, self.series_tol, shift)

    def _axis_mass(self, a, t, x, lo, hi, shift=0.0, method=None):
        L = float(self.domain.widths[a])
        if method is None:
            method = "image" if t < self.t_switch[a] else "spectral"
        fn = axis_mass_image if method == "image" else axis_mass_spectral
        return fn(t, x, lo, hi, L, self.series_tol, shift)

    def _product(self, per_axis):
        out = per_axis[0]
        for v in per_axis[1:]:
            out = out * v
        return out

    @staticmethod
    def _squeeze(val):
        val = np.asarray(val)
        return float(val) if val.ndim == 0 else val

    # -- kernels ----------------------------------------------------------
    def heat_kernel(self, t, x, y, method: str | None = None):
        """Killed transition density ``p_t(x, y)``.

        ``method`` forces ``"image"`` or ``"spectral"``; by default each axis
        picks the faster series for its own ``t_switch``.
        """
        t = self._check_time(t)
        xo = self._interior(x, "x")
        yo = self._interior(y, "y")
        return self._squeeze(self._scaled_kernel(t, xo, yo, scaled=False, method=method))

    def _scaled_kernel(self, t, xo, yo, scaled=True, method=None):
        lams = self.spectral.axis_lambdas
        return self._product([
            self._axis_kernel(a, t, xo[..., a], yo[..., a],
                              shift=lams[a] if scaled else 0.0, method=method)
            for a in range(self.domain.d)
        ])

    def survival(self, t, x, method: str | None = None):
        """``P_x(tau > t)`` from the integrated series (closed form per axis)."""
        t = self._check_time(t)
        xo = self._interior(x, "x")
        w = self.domain.widths
        return self._squeeze(self._product([
            self._axis_mass(a, t, xo[..., a], 0.0, float(w[a]), method=method)
            for a in range(self.domain.d)
        ]))

    def box_mass(self, t, x, box: Sequence[Sequence[float]]):
        """``int_box p_t(x, y) dy`` for an axis-aligned ``box`` inside the domain."""
        t = self._check_time(t)
        xo = self._interior(x, "x")
        lo = self.domain.lo
        per_axis = []
        for a, (b0, b1) in enumerate(box):
            a0 = max(float(b0) - lo[a], 0.0)
            a1 = min(float(b1) - lo[a], float(self.domain.widths[a]))
            per_axis.append(self._axis_mass(a, t, xo[..., a], a0, a1))
        return self._squeeze(self._product(per_axis))

    def quadrature_survival(self, t, x):
        """Survival probability by refined composite Simpson over each axis."""
        t = self._check_time(t)
        xo = self._interior(x, "x")
        per_axis = []
        for a in range(self.domain.d):
            L = float(self.domain.widths[a])
            xa = xo[..., a]
            per_axis.append(refined_simpson(
                lambda g, xa=xa, a=a: self._axis_kernel(a, t, xa[..., None], g), 0.0, L))
        return self._squeeze(self._product(per_axis))

    def conditioned_density(self, t, x, y):
        """Density of ``B_t`` given survival on ``[0, t]``, started at ``x``.

        The normalizer is computed by quadrature in scaled form, so only a
        genuinely vanishing survival probability raises.
        """
        t = self._check_time(t)
        xo = self._interior(x, "x")
        yo = self._interior(y, "y")
        lams = self.spectral.axis_lambdas
        num, den = [], []
        for a in range(self.domain.d):
            L = float(self.domain.widths[a])
            xa = xo[..., a]
            num.append(self._axis_kernel(a, t, xa, yo[..., a], shift=lams[a]))
            den.append(refined_simpson(
                lambda g, xa=xa, a=a: self._axis_kernel(a, t, xa[..., None], g, shift=lams[a]),
                0.0, L))
        den = self._product(den)
        if np.any(~np.isfinite(den)) or np.any(den < MASS_FLOOR):
            raise NumericFloorError(f"survival normalizer underflows at t={t}")
        return self._squeeze(self._product(num) / den)

    def h_kernel(self, t, x, y):
        """Transition density ``exp(lambda t) phi(y)/phi(x) p_t(x, y)`` of the h-process."""
        t = self._check_time(t)
        phi_x = np.asarray(self.spectral.phi(x))
        if np.any(phi_x < PHI_FLOOR):
            raise NumericFloorError("phi(x) below floor; x too close to the boundary")
        xo = self._interior(x, "x")
        yo = self._interior(y, "y")
        val = self._scaled_kernel(t, xo, yo) * self.spectral.phi(y) / phi_x
        return self._squeeze(val)

    def axis_h_kernel(self, a: int, t: float, x: float, y):
        """One factor of :meth:`h_kernel`; ``x`` and ``y`` are absolute coordinates on axis ``a``."""
        lo = float(self.domain.lo[a])
        L = float(self.domain.widths[a])
        xo, yo = float(x) - lo, np.asarray(y, dtype=float) - lo
        sx = math.sin(math.pi * xo / L)
        if sx < PHI_FLOOR:
            raise NumericFloorError("phi(x) below floor; x too close to the boundary")
        k = self._axis_kernel(a, t, xo, yo, shift=self.spectral.axis_lambdas[a])
        return k * np.sin(np.pi * yo / L) / sx

    def axis_kernel(self, a: int, t: float, x, y, scaled: bool = False):
        lo = float(self.domain.lo[a])
        shift = self.spectral.axis_lambdas[a] if scaled else 0.0
        return self._axis_kernel(a, t, np.asarray(x, float) - lo, np.asarray(y, float) - lo,
                                 shift=shift)

    def bridge_marginal(self, t, t1, x, v, y):
        """Density in ``y`` of ``B_{t1}`` given survival on ``[0, t]``, ``B_0 = x``, ``B_t = v``."""
        t = self._check_time(t)
        t1 = self._check_time(t1)
        if not t1 < t:
            raise ValueError("need 0 < t1 < t")
        xo = self._interior(x, "x")
        vo = self._interior(v, "v")
        yo = self._interior(y, "y")
        den = self._scaled_kernel(t, xo, vo)
        if np.any(den < MASS_FLOOR):
            raise NumericFloorError("p_t(x, v) below numeric floor")
        num = self._scaled_kernel(t1, xo, yo) * self._scaled_kernel(t - t1, yo, vo)
        return self._squeeze(num / den)

    # -- reference laws ---------------------------------------------------
    def qsd_density(self, y):
        """Long-time conditioned density ``phi / int phi``."""
        return self._squeeze(np.asarray(self.spectral.phi(y)) / self.spectral.phi_mass)

    def h_stationary_density(self, y):
        """Stationary density ``phi^2 / int phi^2`` of the h-process."""
        return self._squeeze(np.asarray(self.spectral.phi(y)) ** 2 / self.spectral.phi2_mass)

    def qsd_cdf(self, y, axis: int = 0):
        """Marginal CDF along ``axis`` of :meth:`qsd_density`."""
        lo, L = float(self.domain.lo[axis]), float(self.domain.widths[axis])
        u = np.clip((np.asarray(y, float) - lo) / L, 0.0, 1.0)
        return self._squeeze(0.5 * (1.0 - np.cos(np.pi * u)))

    def h_stationary_cdf(self, y, axis: int = 0):
        lo, L = float(self.domain.lo[axis]), float(self.domain.widths[axis])
        u = np.clip((np.asarray(y, float) - lo) / L, 0.0, 1.0)
        return self._squeeze(u - np.sin(2.0 * np.pi * u) / (2.0 * np.pi))

    def conditioned_box_prob(self, t, starts, box):
        """``P(B_t in box | tau > t)`` for ``B_0`` uniform over the points ``starts``.

        This is the reference value of an endpoint indicator under the
        empirical initial measure of a particle system.
        """
        mass = np.asarray(self.box_mass(t, starts, box))
        surv = np.asarray(self.survival(t, starts))
        total = surv.sum()
        if total < MASS_FLOOR:
            raise NumericFloorError("survival probability underflows")
        return float(mass.sum() / total)

    def _window_integral(self, t1, x, box, weight):
        xo = self._interior(x, "x")
        lo = self.domain.lo
        out = []
        for a, (b0, b1) in enumerate(box):
            a0 = max(float(b0) - lo[a], 0.0)
            a1 = min(float(b1) - lo[a], float(self.domain.widths[a]))
            xa = xo[..., a]
            out.append(refined_simpson(
                lambda g, xa=xa, a=a: self._axis_kernel(
                    a, t1, xa[..., None], g, shift=self.spectral.axis_lambdas[a]) * weight(a, g),
                a0, a1))
        return self._product(out)

    def window_prob_conditioned(self, t, t1, x, box):
        """``P(B_{t1} in box | B_0 = x, tau > t)`` for ``t1 < t`` by quadrature."""
        t = self._check_time(t)
        t1 = self._check_time(t1)
        if not t1 < t:
            raise ValueError("need t1 < t")
        lams = self.spectral.axis_lambdas
        w = self.domain.widths

        def weight(a, g):
            return axis_mass_spectral(t - t1, g, 0.0, float(w[a]), float(w[a]),
                                      self.series_tol, shift=lams[a]) \
                if t - t1 >= self.t_switch[a] else \
                axis_mass_image(t - t1, g, 0.0, float(w[a]), float(w[a]),
                                self.series_tol, shift=lams[a])

        num = self._window_integral(t1, x, box, weight)
        xo = self._interior(x, "x")
        den = self._product([
            self._axis_mass(a, t, xo[..., a], 0.0, float(w[a]), shift=lams[a])
            for a in range(self.domain.d)
        ])
        return self._squeeze(num / den)

    def window_prob_h(self, t1, x, box):
        """``P(B_{t1} in box)`` for the h-process started at ``x``."""
        t1 = self._check_time(t1)
        xo = self._interior(x, "x")
        w = self.domain.widths
        num = self._window_integral(t1, x, box,
                                    lambda a, g: np.sin(np.pi * g / w[a]))
        phi_x = np.prod(np.sin(np.pi * xo / w), axis=-1)
        return self._squeeze(num / phi_x)


def pullback_path(path, a: float):
    """Map a lineage path through ``u = x**(1/a)`` pointwise, keeping times and carriers."""
    from .genealogy import LineagePath

    if a < 1:
        raise ValueError("exponent a must be >= 1")
    values = np.asarray(path.values, dtype=float)
    if np.any(values <= 0):
        raise DomainError("pullback needs strictly positive path values")
    mapped = values if a == 1 else values ** (1.0 / a)
    return LineagePath(times=np.array(path.times, copy=True), values=mapped,
                       carrier=list(path.carrier))
