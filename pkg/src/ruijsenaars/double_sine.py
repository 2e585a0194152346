"""The double sine function S2(z | w1, w2) and friends.

Evaluation strategy:

* inside the analytic window ``0 < Re z < Re(w1+w2)`` the logarithm is the
  absolutely convergent integral

      ln S2(z) = int_0^inf dt/(2t) [ sh((2z-w1-w2)t) / (sh(w1 t) sh(w2 t))
                                     - (2z-w1-w2) / (w1 w2 t) ],

  computed with a Taylor head below t0 = 1e-3 (the subtraction makes t=0
  removable but numerically catastrophic) and Gauss-Kronrod panels up to a
  radius fixed by the analytic tail bound;
* far from the real lattice directions (all Im(z/w_j) of one sign and large)
  the classical asymptotics exp(+-i pi/2 B22(z)) is used; the switch point
  is chosen so the dropped corrections ~ exp(-2 pi min_j |Im(z/w_j)|) are far
  below double precision;
* everywhere else the two first-order difference equations move z into the
  window by whole-period steps (greedy in Re, capped at 500 steps).

Arguments exactly on the zero lattice snap to 0; arguments within tolerance
of a pole raise ``PoleError`` carrying the lattice point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quadrature import (
    IntegralResult,
    QuadratureSpec,
    estimate_truncation_radius,
    fixed_panel_nodes,
    integrate_line,
)

__all__ = [
    "Periods",
    "LatticePoint",
    "PoleError",
    "StripError",
    "b22",
    "log_s2_strip",
    "s2",
    "log_s2",
    "s2_asymptotic",
    "hyperbolic_gamma",
    "faddeev_dilog",
    "pole_zero_lattice",
]

_T0 = 1e-3            # switch point for the Taylor head of the log integral
_ASYM_MARGIN = 12.0   # min_j |Im(z/w_j)| beyond which asymptotics is exact to ~1e-32
_STEP_CAP = 500       # continuation step budget
_POLE_TOL_UNITS = 1e-12


class StripError(ValueError):
    """Argument outside the integral-representation strip."""


class PoleError(ValueError):
    """Argument on (or too close to) the pole lattice of S2."""

    def __init__(self, message, lattice_point=None):
        super().__init__(message)
        self.lattice_point = lattice_point


@dataclass(frozen=True)
class Periods:
    omega1: complex
    omega2: complex

    def __post_init__(self):
        o1, o2 = complex(self.omega1), complex(self.omega2)
        if not (o1.real > 0 and o2.real > 0):
            raise ValueError("periods must satisfy Re omega1 > 0 and Re omega2 > 0")
        object.__setattr__(self, "omega1", o1)
        object.__setattr__(self, "omega2", o2)

    @property
    def total(self) -> complex:
        return self.omega1 + self.omega2

    @property
    def product(self) -> complex:
        return self.omega1 * self.omega2

    @property
    def scale(self) -> float:
        return min(self.omega1.real, self.omega2.real)

    def swapped(self) -> "Periods":
        return Periods(self.omega2, self.omega1)

    def key(self) -> tuple:
        return (self.omega1, self.omega2)


@dataclass(frozen=True)
class LatticePoint:
    m1: int
    m2: int
    kind: str  # "pole" | "zero"
    location: complex


def b22(z, omega: Periods):
    """Second-order Bernoulli polynomial (1/w1w2)[(z - (w1+w2)/2)^2 - (w1^2+w2^2)/12]."""
    z = np.asarray(z, dtype=complex)
    s = omega.total
    val = ((z - s / 2.0) ** 2 - (omega.omega1 ** 2 + omega.omega2 ** 2) / 12.0) / omega.product
    return val if val.ndim else complex(val)


def pole_zero_lattice(omega: Periods, radius: float) -> list[LatticePoint]:
    """All poles/zeros with |location| <= radius, sorted by |location|."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    s = omega.total
    bound = int(math.ceil((radius + abs(s)) / omega.scale)) + 1
    pts = []
    for m1 in range(bound + 1):
        for m2 in range(bound + 1):
            step = m1 * omega.omega1 + m2 * omega.omega2
            zloc = -step
            if abs(zloc) <= radius:
                pts.append(LatticePoint(m1, m2, "zero", zloc))
            ploc = s + step
            if abs(ploc) <= radius:
                pts.append(LatticePoint(m1, m2, "pole", ploc))
    pts.sort(key=lambda p: (abs(p.location), p.kind, p.m1))
    return pts


def _pole_tol(omega: Periods) -> float:
    return _POLE_TOL_UNITS * omega.scale


def _nearest_lattice_dist(z: np.ndarray, omega: Periods, kind: str) -> np.ndarray:
    """Distance from each z to the pole or zero lattice (vectorized)."""
    o1, o2 = omega.omega1, omega.omega2
    target = (z - omega.total) if kind == "pole" else (-z)
    det = o1.real * o2.imag - o2.real * o1.imag
    if abs(det) > 1e-9 * abs(o1) * abs(o2):
        # genuine 2-D lattice: invert the real 2x2 system for (m1, m2)
        a, b = o1.real, o2.real
        c, d = o1.imag, o2.imag
        m1f = (d * target.real - b * target.imag) / det
        m2f = (-c * target.real + a * target.imag) / det
        best = np.full(z.shape, np.inf)
        for dm1 in (np.floor(m1f), np.ceil(m1f)):
            for dm2 in (np.floor(m2f), np.ceil(m2f)):
                mm1 = np.maximum(dm1, 0.0)
                mm2 = np.maximum(dm2, 0.0)
                dist = np.abs(target - (mm1 * o1 + mm2 * o2))
                best = np.minimum(best, dist)
        return best
    # degenerate (colinear) lattice, e.g. both periods real
    u = (o2 / o1).real
    zeta = target / o1
    xr = zeta.real
    best1d = np.full(z.shape, np.inf)
    m1_max = int(math.ceil(np.max(xr, initial=0.0))) + 1
    for m1 in range(0, min(m1_max, 100 * _STEP_CAP) + 1):
        rem = xr - m1
        m2 = np.maximum(np.round(rem / u), 0.0)
        best1d = np.minimum(best1d, np.abs(rem - m2 * u))
        m2 = np.maximum(np.floor(rem / u), 0.0)
        best1d = np.minimum(best1d, np.abs(rem - m2 * u))
    return abs(o1) * np.hypot(best1d, zeta.imag)


def _nearest_pole(z: complex, omega: Periods) -> LatticePoint:
    pts = pole_zero_lattice(omega, abs(z) + abs(omega.total) + abs(omega.omega1) + abs(omega.omega2))
    poles = [p for p in pts if p.kind == "pole"]
    return min(poles, key=lambda p: abs(p.location - z))


# ---------------------------------------------------------------------------
# log S2 inside the strip


def _series_head(a: np.ndarray, omega: Periods, t0: float) -> np.ndarray:
    """Integral of the log-integrand over [0, t0] via the Taylor expansion.

    With A(t) = sh(at)/t and B(t) = sh(w1 t) sh(w2 t)/t^2 the integrand is
    (A/B - a/(w1 w2)) / (2 t^2); the even series of A/B - a/b0 is obtained
    by series division, exact through t^8.
    """
    o1, o2 = omega.omega1, omega.omega2
    fac = math.factorial
    alph = [a ** (2 * m + 1) / fac(2 * m + 1) for m in range(5)]
    beta = [
        sum(
            o1 ** (2 * i + 1) * o2 ** (2 * j + 1) / (fac(2 * i + 1) * fac(2 * j + 1))
            for i in range(m + 1)
            for j in [m - i]
        )
        for m in range(5)
    ]
    b0 = beta[0]
    v = [np.zeros_like(a)]
    for m in range(1, 5):
        acc = alph[m] - (a / b0) * beta[m]
        for j in range(1, m):
            acc = acc - beta[m - j] * v[j]
        v.append(acc / b0)
    head = np.zeros_like(a)
    for m in range(1, 5):
        head = head + v[m] * t0 ** (2 * m - 1) / (2 * (2 * m - 1))
    return head


def _tail_correction(a, omega: Periods, T: float):
    # the 1/t^2 counterterm decays only algebraically; integrate it to
    # infinity in closed form instead of asking the truncated panels to
    return -a / (2.0 * omega.product * T)


def _log_integrand(t: np.ndarray, a: np.ndarray, omega: Periods) -> np.ndarray:
    """Integrand of ln S2; a = 2z - w1 - w2, broadcast over t (last axis)."""
    o1, o2 = omega.omega1, omega.omega2
    num = np.sinh(a * t)
    den = np.sinh(o1 * t) * np.sinh(o2 * t)
    return (num / den - a / (o1 * o2 * t)) / (2.0 * t)


def _tail_params(a_vals: np.ndarray, omega: Periods):
    s = omega.total
    rate = s.real - np.max(np.abs(a_vals.real), initial=0.0)
    rate = max(rate, 1e-6)
    amp = 10.0 * (1.0 + np.max(np.abs(a_vals), initial=1.0))
    T = estimate_truncation_radius(rate, amp, 1e-16) + 1.0
    freq = np.max(np.abs(a_vals.imag), initial=0.0) + abs(omega.omega1.imag) + abs(omega.omega2.imag) + 2.0
    width = min(0.4, 7.0 / freq)
    return T, width


def log_s2_strip(z: complex, omega: Periods, spec: QuadratureSpec | None = None) -> complex:
    """ln S2(z) by adaptive quadrature; requires 0 < Re z < Re(w1+w2)."""
    z = complex(z)
    s = omega.total
    if not (0.0 < z.real < s.real):
        raise StripError("outside integral-representation strip")
    a = 2.0 * z - s
    head = complex(_series_head(np.asarray(a), omega, _T0))
    T, width = _tail_params(np.asarray(a), omega)
    if spec is None:
        spec = QuadratureSpec(rel_tol=1e-13, abs_tol=1e-14, truncation_radius=(T,),
                              max_nodes_per_dim=400_000, refinement_limit=8000)
    n_init = max(8, int(math.ceil((T - _T0) / width)))
    res = integrate_line(lambda t: _log_integrand(t, a, omega), spec,
                         interval=(_T0, T), initial_panels=n_init)
    return head + res.value + complex(_tail_correction(a, omega, T))


def log_s2_strip_result(z: complex, omega: Periods, spec: QuadratureSpec | None = None) -> IntegralResult:
    """Like log_s2_strip but exposing the quadrature error estimate (for the CLI)."""
    z = complex(z)
    s = omega.total
    if not (0.0 < z.real < s.real):
        raise StripError("outside integral-representation strip")
    a = 2.0 * z - s
    head = complex(_series_head(np.asarray(a), omega, _T0))
    T, width = _tail_params(np.asarray(a), omega)
    if spec is None:
        spec = QuadratureSpec(rel_tol=1e-13, abs_tol=1e-14, truncation_radius=(T,),
                              max_nodes_per_dim=400_000, refinement_limit=8000)
    n_init = max(8, int(math.ceil((T - _T0) / width)))
    res = integrate_line(lambda t: _log_integrand(t, a, omega), spec,
                         interval=(_T0, T), initial_panels=n_init)
    value = head + res.value + complex(_tail_correction(a, omega, T))
    return IntegralResult(value, res.error_estimate, res.nodes_used, res.converged)


def _log_s2_window_arr(z: np.ndarray, omega: Periods) -> np.ndarray:
    """ln S2 on strip-interior points, vectorized; asymptotic branch where valid."""
    out = np.empty(z.shape, dtype=complex)
    up = np.minimum((z / omega.omega1).imag, (z / omega.omega2).imag)
    dn = np.maximum((z / omega.omega1).imag, (z / omega.omega2).imag)
    mask_up = up >= _ASYM_MARGIN
    mask_dn = dn <= -_ASYM_MARGIN
    mask_q = ~(mask_up | mask_dn)
    if np.any(mask_up):
        out[mask_up] = 0.5j * math.pi * b22(z[mask_up], omega)
    if np.any(mask_dn):
        out[mask_dn] = -0.5j * math.pi * b22(z[mask_dn], omega)
    if np.any(mask_q):
        zq = z[mask_q]
        a = 2.0 * zq - omega.total
        T, width = _tail_params(a, omega)
        ts, wk, _ = fixed_panel_nodes(_T0, T, width)
        vals = np.empty(zq.shape, dtype=complex)
        chunk = max(1, int(4_000_000 // max(ts.size, 1)))
        for i in range(0, zq.size, chunk):
            sl = slice(i, min(i + chunk, zq.size))
            mat = _log_integrand(ts[None, :], a[sl, None], omega)
            vals[sl] = mat @ wk
        out[mask_q] = vals + _series_head(a, omega, _T0) + _tail_correction(a, omega, T)
    return out


# ---------------------------------------------------------------------------
# continuation into the strip and public evaluators


def _window_lo(omega: Periods) -> float:
    return 0.5 * omega.omega1.real


def _reduce_into_window(z: np.ndarray, omega: Periods):
    """Shift each z by integer multiples of w2 into the analytic window.

    Returns (z_reduced, log_prefactor) with
    S2(z) = exp(log_prefactor) * S2(z_reduced); uses S2(z) = 2 sin(pi z / w1) S2(z + w2).
    """
    lo = _window_lo(omega)
    step = omega.omega2
    k = np.ceil((lo - z.real) / step.real).astype(int)
    if np.any(np.abs(k) > _STEP_CAP):
        raise ValueError("continuation cap exceeded (argument too far from the strip)")
    logpref = np.zeros(z.shape, dtype=complex)
    zred = z + k * step
    kmax = int(np.max(k, initial=0))
    for i in range(kmax):
        active = k > i
        if not np.any(active):
            break
        logpref[active] += np.log(2.0 * np.sin(math.pi * (z[active] + i * step) / omega.omega1))
    kmin = int(np.min(k, initial=0))
    for i in range(-kmin):
        active = k < -i
        if not np.any(active):
            break
        logpref[active] -= np.log(2.0 * np.sin(math.pi * (zred[active] + i * step) / omega.omega1))
    return zred, logpref


def log_s2(z, omega: Periods):
    """ln S2(z) anywhere off the zero/pole lattice (branch only fixed up to 2 pi i)."""
    z_arr = np.atleast_1d(np.asarray(z, dtype=complex))
    tol = _pole_tol(omega)
    if np.any(_nearest_lattice_dist(z_arr, omega, "pole") < tol):
        bad = z_arr[_nearest_lattice_dist(z_arr, omega, "pole") < tol][0]
        raise PoleError("pole of S2 at z = %s" % bad, _nearest_pole(complex(bad), omega))
    if np.any(_nearest_lattice_dist(z_arr, omega, "zero") < tol):
        raise ZeroDivisionError("log S2 at a lattice zero")
    zred, logpref = _reduce_into_window(z_arr, omega)
    out = logpref + _log_s2_window_arr(zred, omega)
    return out if np.asarray(z).ndim else complex(out[0])


def s2(z, omega: Periods):
    """S2(z | w) for any z off the pole lattice; exact 0 on the zero lattice."""
    z_in = np.asarray(z, dtype=complex)
    z_arr = np.atleast_1d(z_in).copy()
    tol = _pole_tol(omega)
    pole_d = _nearest_lattice_dist(z_arr, omega, "pole")
    if np.any(pole_d < tol):
        bad = complex(z_arr[pole_d < tol][0])
        raise PoleError("pole of S2 at z = %s" % bad, _nearest_pole(bad, omega))
    zero_mask = _nearest_lattice_dist(z_arr, omega, "zero") < tol
    out = np.zeros(z_arr.shape, dtype=complex)
    live = ~zero_mask
    if np.any(live):
        zred, logpref = _reduce_into_window(z_arr[live], omega)
        out[live] = np.exp(logpref + _log_s2_window_arr(zred, omega))
    return out if z_in.ndim else complex(out[0])


def s2_asymptotic(z, omega: Periods):
    """exp(+- i pi/2 B22(z)): + for Im z > 0, - for Im z < 0."""
    z_arr = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z_arr.imag == 0.0):
        raise ValueError("asymptotic sign undefined on axis")
    sign = np.sign(z_arr.imag)
    out = np.exp(0.5j * math.pi * sign * b22(z_arr, omega))
    return out if np.asarray(z).ndim else complex(out[0])


def hyperbolic_gamma(z, omega: Periods):
    """G(z) = S2(i z + (w1+w2)/2)."""
    z = np.asarray(z, dtype=complex)
    return s2(1j * z + omega.total / 2.0, omega)


def faddeev_dilog(z, omega: Periods):
    """gamma(z) = S2(-i z + (w1+w2)/2) exp(i pi/(2 w1 w2) [z^2 + (w1^2+w2^2)/12])."""
    z = np.asarray(z, dtype=complex)
    expo = np.exp(0.5j * math.pi / omega.product
                  * (z ** 2 + (omega.omega1 ** 2 + omega.omega2 ** 2) / 12.0))
    return s2(-1j * z + omega.total / 2.0, omega) * expo
