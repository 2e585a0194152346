"""Commuting difference operators, their generating function, and pairings.

The order-s operator acts as

    H_s f(x) = sum_{|J| = s} prod_{j in J, k not in J}
               sh(pi(x_j - x_k - i g)/w2) / sh(pi(x_j - x_k)/w2)
               * f(x - i w1 1_J),

and the generating function combines all orders with symmetric half-step
shifts +- i w1/2 (the inverse half total shift makes the two standard forms
literally equal; both are implemented and cross-checked).  Operators are
applied by evaluating the function at shifted arguments exactly, never by
differentiating an interpolant.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .params import (
    SystemParams,
    RegimeError,
    classify_regime,
    delta_measure,
    eta,
    eta_hat,
    mu_multi,
    reflect_coupling,
)
from .quadrature import QuadratureSpec, IntegralResult, integrate_box
from .testfunctions import AnalyticTestFunction
from .wavefunction import default_spec, psi, psi_batch

__all__ = [
    "ShiftVector",
    "shift_vector",
    "elementary_symmetric",
    "apply_h_s",
    "apply_h_gen",
    "apply_h_gen_halfshift_form",
    "eigen_residual",
    "bilinear_pairing",
    "sesquilinear_pairing",
    "measure_shift_residual",
]

_COEFF_TOL = 1e-12


@dataclass(frozen=True)
class ShiftVector:
    J: tuple[int, ...]
    xi: tuple[complex, ...]


def shift_vector(J, n: int, omega1: complex) -> ShiftVector:
    """xi^J with +i w1/2 on J and -i w1/2 elsewhere."""
    Jt = tuple(sorted(J))
    xi = tuple(0.5j * omega1 if j in Jt else -0.5j * omega1 for j in range(n))
    return ShiftVector(Jt, xi)


def elementary_symmetric(s: int, z) -> complex:
    z = np.asarray(z, dtype=complex)
    n = z.size
    if not 0 <= s <= n:
        raise ValueError("need 0 <= s <= n")
    acc = 0.0 + 0.0j
    for comb in itertools.combinations(range(n), s):
        acc += np.prod(z[list(comb)])
    return complex(acc)


def _coefficient(J, x: np.ndarray, params: SystemParams, omega_roles) -> complex:
    """prod_{j in J, k not in J} sh(pi(x_j-x_k-ig)/w2) / sh(pi(x_j-x_k)/w2)."""
    _, o2 = omega_roles
    c = 1.0 + 0.0j
    for j in J:
        for k in range(params.n):
            if k in J:
                continue
            d = x[j] - x[k]
            den = np.sinh(math.pi * d / o2)
            if abs(den) < _COEFF_TOL:
                raise ValueError("H_s coefficient singular at coincident coordinates")
            c *= np.sinh(math.pi * (d - 1j * params.g) / o2) / den
    return c


def _roles(params: SystemParams, swap_periods: bool):
    om = params.omega
    return (om.omega2, om.omega1) if swap_periods else (om.omega1, om.omega2)


def apply_h_s(s: int, f, x, params: SystemParams, *, swap_periods: bool = False) -> complex:
    """[H_s f](x); f maps a complex tuple to a complex value."""
    if not 1 <= s <= params.n:
        raise ValueError("need 1 <= s <= n")
    x = np.asarray(x, dtype=complex)
    o1, _ = _roles(params, swap_periods)
    acc = 0.0 + 0.0j
    for J in itertools.combinations(range(params.n), s):
        coeff = _coefficient(J, x, params, _roles(params, swap_periods))
        shifted = x.copy()
        for j in J:
            shifted[j] -= 1j * o1
        acc += coeff * f(shifted)
    return complex(acc)


def apply_h_gen(lam: float, f, x, params: SystemParams, *, swap_periods: bool = False) -> complex:
    """Generating function via the half-shift subset sum (all J, shifts -xi^J)."""
    x = np.asarray(x, dtype=complex)
    o1, _ = _roles(params, swap_periods)
    n = params.n
    acc = 0.0 + 0.0j
    for r in range(n + 1):
        for J in itertools.combinations(range(n), r):
            coeff = _coefficient(J, x, params, _roles(params, swap_periods))
            xi = np.asarray(shift_vector(J, n, o1).xi)
            acc += np.exp(2.0 * math.pi * o1 * lam) ** (n - r) * coeff * f(x - xi)
    return complex(np.exp(-math.pi * n * o1 * lam) * acc)


def apply_h_gen_halfshift_form(lam: float, f, x, params: SystemParams,
                               *, swap_periods: bool = False) -> complex:
    """Same operator assembled as exp-prefactor * (inverse half total shift) * sum_s H_s."""
    x = np.asarray(x, dtype=complex)
    o1, _ = _roles(params, swap_periods)
    n = params.n
    up = x + 0.5j * o1
    acc = 0.0 + 0.0j
    for s in range(n + 1):
        if s == 0:
            term = f(up)
        else:
            term = apply_h_s(s, f, up, params, swap_periods=swap_periods)
        acc += np.exp(2.0 * math.pi * o1 * lam) ** (n - s) * term
    return complex(np.exp(-math.pi * n * o1 * lam) * acc)


# ---------------------------------------------------------------------------
# eigenvalue residuals


def eigen_residual(lamvec, x, params: SystemParams, mode: str = "plain",
                   spec: QuadratureSpec | None = None, hvals: tuple[float, ...] = (0.25,)):
    """Relative residuals of the difference equations on the wave function.

    Returns a dict with one entry per order s (full shifts, when they stay
    inside the strip) and one per generating-function point lam in ``hvals``.
    ``mode='plain'`` needs Re g < Re w2; ``mode='eta-conjugated'`` needs
    Re g > Re w1 and checks the eta-conjugated equation through the exact
    similarity to the reflected-coupling system.
    """
    spec = spec or default_spec()
    lamvec = np.asarray(lamvec, dtype=float)
    x = np.asarray(x, dtype=complex)
    om = params.omega
    out = {}
    if mode == "plain":
        if not params.g.real < om.omega2.real:
            raise RegimeError("eigenvalue equation outside proven region (need Re g < Re w2)")
        wave = lambda xt: psi(lamvec, xt, params, spec, force_quadrature=True)
        base = wave(x)
        evs = np.exp(2.0 * math.pi * om.omega1 * lamvec)
        if om.omega1.real < 0.5 * params.g_star.real:  # full shifts stay in the strip
            for s in range(1, params.n + 1):
                lhs = apply_h_s(s, wave, x, params)
                rhs = elementary_symmetric(s, evs) * base
                out[("s", s)] = _rel(lhs, rhs)
        for lam in hvals:
            lhs = apply_h_gen(lam, wave, x, params)
            rhs = np.prod(2.0 * np.cosh(math.pi * om.omega1 * (lam - lamvec))) * base
            out[("H", lam)] = _rel(lhs, complex(rhs))
        return out
    if mode == "eta-conjugated":
        if not params.g.real > om.omega1.real:
            raise RegimeError("eigenvalue equation outside proven region (need Re g > Re w1)")
        # eta(x) H(lam; g) Psi(.; g) equals, by the exact similarity and the
        # coupling reflection symmetry, eta_hat^{-1}(lam) H(lam; g*) Psi(.; g*);
        # the right side below is computed directly at coupling g, so the two
        # routes go through independent quadratures.
        pref = reflect_coupling(params)
        wave_ref = lambda xt: psi(lamvec, xt, pref, spec, force_quadrature=True)
        eh = complex(eta_hat(lamvec.astype(complex), params))
        base = (complex(eta(x, params))
                * psi(lamvec, x, params, spec, force_quadrature=True))
        evs = np.exp(2.0 * math.pi * om.omega1 * lamvec)
        if om.omega1.real < 0.5 * params.g.real:  # strip of the reflected system
            for s in range(1, params.n + 1):
                lhs = apply_h_s(s, wave_ref, x, pref) / eh
                rhs = elementary_symmetric(s, evs) * base
                out[("s", s)] = _rel(lhs, rhs)
        for lam in hvals:
            lhs = apply_h_gen(lam, wave_ref, x, pref) / eh
            rhs = np.prod(2.0 * np.cosh(math.pi * om.omega1 * (lam - lamvec))) * base
            out[("H", lam)] = _rel(lhs, complex(rhs))
        return out
    raise ValueError("mode must be 'plain' or 'eta-conjugated'")


def _rel(a: complex, b: complex) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# ---------------------------------------------------------------------------
# pairings


def _weight_fn(weight: str, params: SystemParams):
    if weight == "mu":
        return lambda xt: mu_multi(xt, params)
    if weight == "delta":
        return lambda xt: delta_measure(xt, params)
    raise ValueError("weight must be 'mu' or 'delta'")


def _pairing(f1, f2, weight, params, spec, *, sesquilinear: bool) -> IntegralResult:
    w = _weight_fn(weight, params)
    n = params.n

    def integrand(*ys):
        t = np.asarray(ys[-1], dtype=complex)
        cols = [np.full(t.shape, complex(v)) for v in ys[:-1]] + [t]
        xt = np.stack(cols, axis=-1)
        if sesquilinear:
            a = np.conj(_eval_rows(f1, xt))
        else:
            a = _eval_rows(f1, -xt)
        return w(xt) * a * _eval_rows(f2, xt)

    return integrate_box(integrand, spec)


def _eval_rows(f, xt: np.ndarray) -> np.ndarray:
    try:
        vals = f(xt)
        vals = np.asarray(vals, dtype=complex)
        if vals.shape == xt.shape[:-1]:
            return vals
    except Exception:
        pass
    flat = xt.reshape(-1, xt.shape[-1])
    out = np.array([f(row) for row in flat], dtype=complex)
    return out.reshape(xt.shape[:-1])


def bilinear_pairing(f1, f2, weight: str, params: SystemParams,
                     spec: QuadratureSpec | None = None) -> IntegralResult:
    """(f1, f2)_w = int w(x) f1(-x) f2(x) dx over R^n."""
    spec = spec or QuadratureSpec(rel_tol=1e-9, abs_tol=1e-11,
                                  truncation_radius=(8.0,) * params.n)
    return _pairing(f1, f2, weight, params, spec, sesquilinear=False)


def sesquilinear_pairing(f1, f2, weight: str, params: SystemParams,
                         spec: QuadratureSpec | None = None,
                         *, require_positive: bool = True) -> IntegralResult:
    """<f1, f2>_w = int w(x) conj(f1(x)) f2(x) dx over R^n."""
    if require_positive and classify_regime(params).tag == "None":
        raise RegimeError("scalar product with a positive weight requires a unitarity regime")
    spec = spec or QuadratureSpec(rel_tol=1e-9, abs_tol=1e-11,
                                  truncation_radius=(8.0,) * params.n)
    return _pairing(f1, f2, weight, params, spec, sesquilinear=True)


# ---------------------------------------------------------------------------
# measure difference equations


def measure_shift_residual(y, J, params: SystemParams, weight: str = "mu") -> float:
    """Residual of the measure difference equation under the half-shift xi^J.

    mu version:   mu(y + xi^J) P(i w1 - i g) = mu(y) P(i g)
    Delta version: same left side with Delta, right side with g -> g*.
    Here P(c) = prod_{j in J, k not in J} sh(pi(y_j - y_k + c)/w2)/sh(pi(y_j - y_k + c0)/w2)
    with the appropriate unshifted denominators.
    """
    y = np.asarray(y, dtype=complex)
    n = params.n
    J = tuple(sorted(J))
    om = params.omega
    xi = np.asarray(shift_vector(J, n, om.omega1).xi)
    if weight == "mu":
        wfun = lambda t: mu_multi(t, params)
        g_right = params.g
    elif weight == "delta":
        wfun = lambda t: delta_measure(t, params)
        g_right = params.g_star
    else:
        raise ValueError("weight must be 'mu' or 'delta'")

    def ratio_prod(shift_num, shift_den):
        c = 1.0 + 0.0j
        for j in J:
            for k in range(n):
                if k in J:
                    continue
                d = y[j] - y[k]
                c *= (np.sinh(math.pi * (d + shift_num) / om.omega2)
                      / np.sinh(math.pi * (d + shift_den) / om.omega2))
        return c

    lhs = wfun(y + xi) * ratio_prod(1j * om.omega1 - 1j * params.g, 1j * om.omega1)
    rhs = wfun(y) * ratio_prod(1j * g_right, 0.0)
    return _rel(complex(lhs), complex(rhs))
