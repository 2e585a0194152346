"""System parameters, dual/reflected maps, and the measure/kernel functions.

Everything downstream is assembled from four scalar building blocks:

    mu(x)    = S2(i x) / S2(i x + g)                       (measure)
    K(x)     = 1 / [S2(i x + g*/2) S2(-i x + g*/2)]        (kernel)
    eta pair = 1 / [S2(i d + g) S2(-i d + g)]              (coupling part)
    Delta    = elementary sinh product                     (coupling-free part)

with g* = w1 + w2 - g, plus their duals obtained by the parameter map
(w1, w2, g) -> ((1/w2, 1/w1), g/(w1 w2)) and coupling reflection.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from ._cheb import ChebLine
from .double_sine import Periods, s2, log_s2

__all__ = [
    "SystemParams",
    "Regime",
    "RegimeError",
    "dual",
    "reflect_coupling",
    "hatted",
    "mu_scalar",
    "kernel_k",
    "mu_multi",
    "mu_half",
    "delta_measure",
    "delta_measure_s2_form",
    "eta",
    "eta_hat",
    "mu_hat_scalar",
    "classify_regime",
    "cached_kernel",
    "pairwise_rate",
]

_REGIME_TOL = 1e-12
_N_MAX = 20


class RegimeError(ValueError):
    """Operation requires one of the four unitarity regimes."""


@dataclass(frozen=True)
class SystemParams:
    """Periods, coupling constant and particle number, validated on construction.

    Periods are stored in canonical order Re w1 <= Re w2 (stable under ties,
    so a conjugate pair keeps the caller's orientation).
    """

    omega: Periods
    g: complex
    n: int

    def __post_init__(self):
        o1, o2 = self.omega.omega1, self.omega.omega2
        if o2.real < o1.real:
            object.__setattr__(self, "omega", Periods(o2, o1))
        g = complex(self.g)
        object.__setattr__(self, "g", g)
        s = self.omega.total
        if not (0.0 < g.real < s.real):
            raise ValueError("coupling must satisfy 0 < Re g < Re(omega1 + omega2)")
        ghat = g / self.omega.product
        shat = s / self.omega.product
        if not (0.0 < ghat.real < shat.real):
            raise ValueError(
                "coupling must satisfy 0 < Re(g/(omega1 omega2)) < Re((omega1+omega2)/(omega1 omega2))")
        if not (1 <= int(self.n) <= _N_MAX):
            raise ValueError("particle number n must be between 1 and %d" % _N_MAX)
        object.__setattr__(self, "n", int(self.n))

    @property
    def g_star(self) -> complex:
        return self.omega.total - self.g

    @property
    def g_hat(self) -> complex:
        return self.g / self.omega.product

    @property
    def g_hat_star(self) -> complex:
        return self.g_star / self.omega.product

    def with_n(self, n: int) -> "SystemParams":
        return SystemParams(self.omega, self.g, n)

    def with_g(self, g: complex) -> "SystemParams":
        return SystemParams(self.omega, g, self.n)

    def key(self) -> tuple:
        return (self.omega.omega1, self.omega.omega2, self.g, self.n)

    def describe(self) -> dict:
        return {
            "omega1": [self.omega.omega1.real, self.omega.omega1.imag],
            "omega2": [self.omega.omega2.real, self.omega.omega2.imag],
            "g": [self.g.real, self.g.imag],
            "n": self.n,
        }


@dataclass(frozen=True)
class Regime:
    tag: str  # "I" | "II" | "III" | "IV" | "None"
    reasons: tuple[str, ...] = ()


def dual(params: SystemParams) -> SystemParams:
    """Dual parameters ((1/w2, 1/w1), g/(w1 w2))."""
    om = params.omega
    return SystemParams(Periods(1.0 / om.omega2, 1.0 / om.omega1),
                        params.g / om.product, params.n)


def reflect_coupling(params: SystemParams) -> SystemParams:
    """g -> g* = w1 + w2 - g (involutive)."""
    return SystemParams(params.omega, params.g_star, params.n)


def hatted(params: SystemParams) -> SystemParams:
    """Parameter set realizing f_hat(lam) = f(lam; g_hat* | omega_hat)."""
    return reflect_coupling(dual(params))


def _with_swapped_periods(params: SystemParams) -> SystemParams:
    """Params with (w1, w2) roles exchanged, bypassing canonical ordering.

    Only for symmetry diagnostics: downstream evaluators then take genuinely
    different numerical routes (continuation steps use the other period).
    """
    p = object.__new__(SystemParams)
    object.__setattr__(p, "omega", Periods(params.omega.omega2, params.omega.omega1))
    object.__setattr__(p, "g", params.g)
    object.__setattr__(p, "n", params.n)
    return p


# ---------------------------------------------------------------------------
# scalar building blocks


def mu_scalar(x, params: SystemParams):
    """mu(x) = S2(i x) / S2(i x + g); mu(0) = 0 exactly."""
    x = np.asarray(x, dtype=complex)
    return s2(1j * x, params.omega) / s2(1j * x + params.g, params.omega)


def log_mu_scalar(x, params: SystemParams):
    x = np.asarray(x, dtype=complex)
    return log_s2(1j * x, params.omega) - log_s2(1j * x + params.g, params.omega)


def kernel_k(x, params: SystemParams):
    """K(x) = 1 / [S2(i x + g*/2) S2(-i x + g*/2)]; even in x."""
    x = np.asarray(x, dtype=complex)
    half = params.g_star / 2.0
    return 1.0 / (s2(1j * x + half, params.omega) * s2(-1j * x + half, params.omega))


def _eta_pair(d, params: SystemParams):
    d = np.asarray(d, dtype=complex)
    return 1.0 / (s2(1j * d + params.g, params.omega) * s2(-1j * d + params.g, params.omega))


def mu_hat_scalar(lam, params: SystemParams):
    """Dual measure mu_hat(lam) = mu(lam; g_hat* | omega_hat)."""
    return mu_scalar(lam, hatted(params))


# ---------------------------------------------------------------------------
# multivariable measures


def _as_tuple_array(x, n: int) -> np.ndarray:
    arr = np.asarray(x, dtype=complex)
    if arr.shape[-1] != n:
        raise ValueError("tuple length %d does not match n = %d" % (arr.shape[-1], n))
    return arr


def _pair_product(x: np.ndarray, pair_fn) -> np.ndarray:
    n = x.shape[-1]
    out = np.ones(x.shape[:-1], dtype=complex)
    for j in range(n):
        for k in range(j + 1, n):
            out = out * pair_fn(x[..., j] - x[..., k])
    return out


def mu_multi(x, params: SystemParams):
    """(1/n!) prod_{j != k} mu(x_j - x_k)."""
    x = _as_tuple_array(x, params.n)
    val = _pair_product(x, lambda d: mu_scalar(d, params) * mu_scalar(-d, params))
    return val / math.factorial(params.n)


def mu_half(x, params: SystemParams):
    """(1/sqrt(n!)) prod_{j < k} mu(x_j - x_k)."""
    x = _as_tuple_array(x, params.n)
    val = _pair_product(x, lambda d: mu_scalar(d, params))
    return val / math.sqrt(math.factorial(params.n))


def delta_measure(x, params: SystemParams):
    """(1/n!) prod_{j<k} 4 sh(pi(x_j-x_k)/w1) sh(pi(x_j-x_k)/w2)."""
    x = _as_tuple_array(x, params.n)
    o1, o2 = params.omega.omega1, params.omega.omega2
    val = _pair_product(x, lambda d: 4.0 * np.sinh(math.pi * d / o1) * np.sinh(math.pi * d / o2))
    return val / math.factorial(params.n)


def delta_measure_s2_form(x, params: SystemParams):
    """Same measure through the double sine product (cross-check route)."""
    x = _as_tuple_array(x, params.n)
    val = _pair_product(x, lambda d: s2(1j * d, params.omega) * s2(-1j * d, params.omega))
    return val / math.factorial(params.n)


def eta(x, params: SystemParams):
    """prod_{j != k} 1/S2(i(x_j - x_k) + g)."""
    x = _as_tuple_array(x, params.n)
    return _pair_product(x, lambda d: _eta_pair(d, params))


def eta_hat(lam, params: SystemParams):
    """Dual eta: eta(lam; g_hat* | omega_hat)."""
    return eta(lam, hatted(params))


def pairwise_rate(params: SystemParams) -> float:
    """pi Re g_hat: the exponential rate of mu growth / K decay per unit |Re x|."""
    return math.pi * params.g_hat.real


# ---------------------------------------------------------------------------
# regime classification


def _is_zero(v: complex, scale: float) -> bool:
    return abs(v) <= _REGIME_TOL * max(1.0, scale)


def classify_regime(params: SystemParams) -> Regime:
    o1, o2, g = params.omega.omega1, params.omega.omega2, params.g
    scale = max(abs(o1), abs(o2), abs(g))
    periods_real = _is_zero(complex(0, o1.imag), scale) and _is_zero(complex(0, o2.imag), scale)
    periods_conj = _is_zero(np.conj(o1) - o2, scale)
    g_real = _is_zero(complex(0, g.imag), scale)
    g_conj_star = _is_zero(np.conj(g) - params.g_star, scale)
    reasons = (
        "periods real: %s" % periods_real,
        "periods conjugate: %s" % periods_conj,
        "coupling real: %s" % g_real,
        "coupling conjugate to reflection: %s" % g_conj_star,
    )
    if periods_real and g_real:
        return Regime("I", reasons)
    if periods_conj and g_real:
        return Regime("II", reasons)
    if periods_real and g_conj_star:
        return Regime("III", reasons)
    if periods_conj and g_conj_star:
        return Regime("IV", reasons)
    return Regime("None", reasons)


def regime_weight(params: SystemParams):
    """(weight name, weight fn, dual weight fn) for the active unitarity regime."""
    tag = classify_regime(params).tag
    if tag in ("I", "II"):
        return tag, "mu", (lambda x: mu_multi(x, params)), (lambda l: mu_multi(l, hatted(params)))
    if tag in ("III", "IV"):
        return tag, "delta", (lambda x: delta_measure(x, params)), (lambda l: delta_measure(l, hatted(params)))
    raise RegimeError("parameters are not in any unitarity regime")


# ---------------------------------------------------------------------------
# interpolant-backed scalar kernels (hot-path acceleration)

_KERNEL_FNS = {
    "mu": mu_scalar,
    "K": kernel_k,
    "eta_pair": _eta_pair,
}

_kernel_cache: dict = {}
_kernel_lock = threading.Lock()


def cached_kernel(params: SystemParams, kind: str, *, offset: complex = 0.0j,
                  half_range: float = 30.0, tol: float = 1e-12):
    """Vectorized scalar kernel t -> f(t + offset), Chebyshev-accelerated.

    ``kind`` is one of mu | K | eta_pair; dual variants are obtained by
    passing ``hatted(params)`` etc.  The fit is validated against the exact
    function at construction and falls back to it outside the fitted range.
    """
    fn_exact = _KERNEL_FNS[kind]
    off = complex(offset)
    key = (params.key(), kind, round(off.real, 12), round(off.imag, 12),
           float(np.ceil(half_range / 10.0)), tol)
    with _kernel_lock:
        hit = _kernel_cache.get(key)
    if hit is not None:
        return hit

    def exact(t):
        return fn_exact(np.asarray(t, dtype=float) + off, params)

    r = 10.0 * float(np.ceil(half_range / 10.0))
    # cap panel width by the steepest exponential rate any of these kernels
    # can have, so the per-panel dynamic range stays benign
    s_hat = params.omega.total / params.omega.product
    rate = math.pi * abs(s_hat.real)
    line = ChebLine(exact, -r, r, tol=tol, init_width=min(2.0, 6.0 / max(rate, 1.0)))
    probes = np.linspace(-0.83 * r, 0.79 * r, 23) + 0.0043
    ref = exact(probes)
    got = line(probes)
    err = np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-280))
    if err > 200.0 * tol:
        raise RuntimeError("kernel interpolant validation failed (err=%.3g)" % err)
    with _kernel_lock:
        _kernel_cache[key] = line
    return line
