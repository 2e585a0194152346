"""Joint eigenfunctions of the hyperbolic difference operators.

The n-particle wave function is evaluated by the recursive integral
representation: an (n-1)-fold integral of measure x kernel-product x plane
wave against the (n-1)-particle function, with the plane wave e^{2 pi i l x}
as base case.  Truncation radii come from the kernel/measure decay
envelopes (rate pi Re g_hat per coordinate, with a fixed 0.1 margin), never
from sampling.  Inner wave-function values are memoized on rounded
coordinates because the shifted-argument evaluations of the difference
operators revisit the same inner nodes.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .double_sine import Periods, s2
from .params import (
    SystemParams,
    cached_kernel,
    classify_regime,
    delta_measure,
    eta,
    eta_hat,
    hatted,
    mu_multi,
    pairwise_rate,
    reflect_coupling,
    RegimeError,
)
from .quadrature import QuadratureSpec, estimate_truncation_radius, fixed_panel_nodes, integrate_box

__all__ = [
    "StripError",
    "WaveFunctionRequest",
    "PsiResult",
    "normalization_constant",
    "default_spec",
    "psi",
    "psi_result",
    "psi_batch",
    "psi_free",
    "psi_rescaled",
    "symmetry_residual",
    "psi_envelope",
]

_N_CAP = 4
_FREE_TOL = 1e-12
_SEP_TOL = 1e-6


class StripError(ValueError):
    """Spatial argument outside the analyticity strip |Im x_j| < Re g*/2."""


@dataclass(frozen=True)
class PsiResult:
    value: complex
    error_estimate: float
    converged: bool


@dataclass(frozen=True)
class WaveFunctionRequest:
    lam: tuple
    x: tuple
    params: SystemParams
    spec: QuadratureSpec | None = None

    def __post_init__(self):
        lam = tuple(complex(v) for v in self.lam)
        x = tuple(complex(v) for v in self.x)
        n = self.params.n
        if len(lam) != n or len(x) != n:
            raise ValueError("lambda and x must both have length n")
        if any(abs(v.imag) > 1e-12 for v in lam):
            raise ValueError("spectral arguments must be real")
        _check_strip(np.array(x), self.params)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "x", x)


def default_spec() -> QuadratureSpec:
    return QuadratureSpec(rel_tol=1e-9, abs_tol=1e-12, max_nodes_per_dim=60_000,
                          truncation_radius=(10.0,), refinement_limit=2000)


def normalization_constant(params: SystemParams) -> complex:
    """d_{n-1} = [sqrt(w1 w2) S2(g)]^(1-n) for the n of the parameter set."""
    base = np.sqrt(complex(params.omega.product)) * s2(params.g, params.omega)
    return complex(base ** (1 - params.n))


def _check_strip(x: np.ndarray, params: SystemParams):
    bound = 0.5 * params.g_star.real
    if np.any(np.abs(np.asarray(x, dtype=complex).imag) >= bound - 1e-13):
        raise StripError("x outside strip |Im x_j| < Re g*/2 = %.6g" % bound)


def _y_radius(params: SystemParams, x: np.ndarray, spec: QuadratureSpec) -> float:
    rate = pairwise_rate(params)
    rate_eff = max(rate - 0.1, 0.3 * rate)
    tail = estimate_truncation_radius(rate_eff, 50.0, 0.01 * spec.abs_tol)
    return tail + float(np.max(np.abs(x.real), initial=0.0)) + 1.0


# ---------------------------------------------------------------------------
# memo for inner wave-function values (shared across operator shifts)

_inner_memo: dict = {}
_memo_lock = threading.Lock()
_MEMO_CAP = 2_000_000


def _memo_key(params, lam, spec, row):
    return (params.key(), tuple(np.round(lam, 14)), spec.rel_tol,
            tuple(np.round(row.real, 14)) + tuple(np.round(row.imag, 14)))


# ---------------------------------------------------------------------------
# evaluation


def psi_batch(lam, X, params: SystemParams, spec: QuadratureSpec | None = None):
    """Wave function on a batch of spatial tuples (shared quadrature panels).

    ``X`` has shape (m, n); all rows must share the same imaginary parts.
    Returns (values, max_error_estimate, converged).
    """
    spec = spec or default_spec()
    lam = np.asarray(lam, dtype=float)
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[1] != params.n or lam.shape != (params.n,):
        raise ValueError("batch shape must be (m, n) with matching lambda")
    _check_strip(X, params)
    n = params.n
    if n == 1:
        vals = np.exp(2j * math.pi * lam[0] * X[:, 0])
        return vals, 0.0, True
    if n == 2:
        return _psi2_batch(lam, X, params, spec)
    if n > _N_CAP:
        raise ValueError("n > %d not supported by the nested quadrature" % _N_CAP)
    vals = np.empty(X.shape[0], dtype=complex)
    err = 0.0
    conv = True
    for i in range(X.shape[0]):
        r = _psi_general(lam, X[i], params, spec)
        vals[i] = r.value
        err = max(err, r.error_estimate)
        conv = conv and r.converged
    return vals, err, conv


def _psi2_batch(lam, X, params, spec):
    if not np.allclose(X.imag, X.imag[0:1], atol=1e-14):
        out = np.empty(X.shape[0], dtype=complex)
        err, conv = 0.0, True
        for i in range(X.shape[0]):
            v, e, c = _psi2_batch(lam, X[i:i + 1], params, spec)
            out[i] = v[0]
            err, conv = max(err, e), conv and c
        return out, err, conv
    d1 = normalization_constant(params)
    nu = lam[0] - lam[1]
    R = _y_radius(params, X, spec)
    k_lines = [cached_kernel(params, "K", offset=1j * X[0, j].imag,
                             half_range=R + abs(X[0, j].real) + 2.0) for j in range(2)]
    width = min(1.0, 7.0 / (2.0 * math.pi * abs(nu) + 1.0))
    for _ in range(4):
        ts, wk, wg = fixed_panel_nodes(-R, R, width)
        rows = np.ones((X.shape[0], ts.size), dtype=complex)
        for j in range(2):
            args = X[:, j].real[:, None] - ts[None, :]
            rows = rows * k_lines[j](args.ravel()).reshape(args.shape)
        rows = rows * np.exp(2j * math.pi * nu * ts)[None, :]
        vk = rows @ wk
        verr = np.abs(vk - rows @ wg)
        phase = d1 * np.exp(2j * math.pi * lam[1] * (X[:, 0] + X[:, 1]))
        vals = phase * vk
        scale = np.abs(vals)
        tol = np.maximum(spec.abs_tol, spec.rel_tol * scale)
        worst = float(np.max(np.abs(phase) * verr - tol, initial=0.0))
        if worst <= 0.0 or ts.size * 2 > spec.max_nodes_per_dim:
            return vals, float(np.max(np.abs(phase) * verr, initial=0.0)), worst <= 0.0
        width *= 0.5
    return vals, float(np.max(np.abs(phase) * verr, initial=0.0)), False


def _psi_general(lam, x, params, spec):
    n = params.n
    d1 = normalization_constant(params)
    lam_inner = lam[:-1]
    params_inner = params.with_n(n - 1)
    R = _y_radius(params, x, spec)
    mu_line = cached_kernel(params, "eta_pair", offset=0.0j, half_range=2 * R + 2)
    # mu pair = Delta pair * eta pair; assemble from sinh and the eta line
    o1, o2 = params.omega.omega1, params.omega.omega2

    def mu_pair(d):
        return 4.0 * np.sinh(math.pi * d / o1) * np.sinh(math.pi * d / o2) * mu_line(d)

    k_lines = [cached_kernel(params, "K", offset=1j * complex(x[j]).imag,
                             half_range=R + abs(complex(x[j]).real) + 2.0) for j in range(n)]
    sum_x = complex(np.sum(x))
    inner_spec = spec

    def integrand(*ys):
        t = np.asarray(ys[-1], dtype=float)
        cols = [np.full(t.shape, complex(v)) for v in ys[:-1]] + [t.astype(complex)]
        y = np.stack(cols, axis=-1)
        w = np.ones(t.shape, dtype=complex) / math.factorial(n - 1)
        for a in range(n - 1):
            for b in range(a + 1, n - 1):
                w = w * mu_pair((y[..., a] - y[..., b]).real)
        for j in range(n):
            xr, xi = complex(x[j]).real, complex(x[j]).imag
            for k in range(n - 1):
                w = w * k_lines[j](xr - y[..., k].real)
        w = w * np.exp(2j * math.pi * lam[-1] * (sum_x - np.sum(y, axis=-1)))
        inner = _inner_values(lam_inner, y, params_inner, inner_spec)
        return w * inner

    box_spec = spec.with_radius(*([R] * (n - 1)))
    res = integrate_box(integrand, box_spec)
    return PsiResult(d1 * res.value, abs(d1) * res.error_estimate, res.converged)


def _inner_values(lam, Y, params, spec):
    Y = np.asarray(Y, dtype=complex)
    flat = Y.reshape(-1, params.n)
    vals = np.empty(flat.shape[0], dtype=complex)
    missing = []
    keys = []
    for i in range(flat.shape[0]):
        key = _memo_key(params, lam, spec, flat[i])
        keys.append(key)
        with _memo_lock:
            hit = _inner_memo.get(key)
        if hit is None:
            missing.append(i)
        else:
            vals[i] = hit
    if missing:
        got, _, _ = psi_batch(lam, flat[missing], params, spec)
        with _memo_lock:
            if len(_inner_memo) > _MEMO_CAP:
                _inner_memo.clear()
            for i, v in zip(missing, got):
                vals[i] = v
                _inner_memo[keys[i]] = v
    return vals.reshape(Y.shape[:-1])


def psi_result(lam, x, params: SystemParams, spec: QuadratureSpec | None = None,
               *, force_quadrature: bool = False) -> PsiResult:
    """Evaluate the wave function with error estimate and convergence flag."""
    spec = spec or default_spec()
    lam = np.asarray(lam, dtype=complex)
    if np.any(np.abs(lam.imag) > 1e-12):
        raise ValueError("spectral arguments must be real")
    lam = lam.real
    x = np.asarray(x, dtype=complex)
    if lam.shape != (params.n,) or x.shape != (params.n,):
        raise ValueError("lambda and x must have length n")
    if not force_quadrature and _free_candidate(lam, x, params):
        return PsiResult(psi_free(lam, x, params), 0.0, True)
    if params.n == 1:
        return PsiResult(complex(np.exp(2j * math.pi * lam[0] * x[0])), 0.0, True)
    vals, err, conv = psi_batch(lam, x[None, :], params, spec)
    return PsiResult(complex(vals[0]), err, conv)


def psi(lam, x, params: SystemParams, spec: QuadratureSpec | None = None,
        *, force_quadrature: bool = False) -> complex:
    return psi_result(lam, x, params, spec, force_quadrature=force_quadrature).value


def _free_candidate(lam, x, params) -> bool:
    om = params.omega
    if min(abs(params.g - om.omega2), abs(params.g - om.omega1)) >= _FREE_TOL:
        return False
    n = params.n
    if n == 1:
        return True
    seps = [min(abs(lam[j] - lam[k]), abs(x[j] - x[k]))
            for j in range(n) for k in range(j + 1, n)]
    return min(seps) > _SEP_TOL


def psi_free(lam, x, params: SystemParams) -> complex:
    """Closed form at free coupling g = w2 (or g = w1 by period symmetry)."""
    om = params.omega
    if abs(params.g - om.omega2) < _FREE_TOL:
        a = om.omega1
    elif abs(params.g - om.omega1) < _FREE_TOL:
        a = om.omega2
    else:
        raise ValueError("free closed form requires g equal to one of the periods")
    lam = np.asarray(lam, dtype=complex)
    x = np.asarray(x, dtype=complex)
    n = params.n
    if n == 1:
        return complex(np.exp(2j * math.pi * lam[0] * x[0]))
    pref = 1.0 + 0.0j
    for j in range(n):
        for k in range(j + 1, n):
            dx, dl = x[j] - x[k], lam[j] - lam[k]
            if min(abs(dx), abs(dl)) <= _SEP_TOL:
                raise ValueError("free-form singular at coincident arguments; use psi")
            pref = pref / (4j * np.sinh(math.pi * dx / a) * np.sinh(math.pi * a * dl))
    acc = 0.0 + 0.0j
    import itertools
    for sigma in itertools.permutations(range(n)):
        sign = _perm_sign(sigma)
        acc = acc + sign * np.exp(2j * math.pi * np.sum(lam * x[list(sigma)]))
    return complex(pref * acc)


def _perm_sign(sigma) -> int:
    sign = 1
    seen = [False] * len(sigma)
    for i in range(len(sigma)):
        if seen[i]:
            continue
        clen = 0
        j = i
        while not seen[j]:
            seen[j] = True
            j = sigma[j]
            clen += 1
        if clen % 2 == 0:
            sign = -sign
    return sign


def psi_rescaled(lam, x, params: SystemParams, spec: QuadratureSpec | None = None) -> complex:
    """Unitary-normalized wave function sqrt(w(x) w_hat(l/w1w2) / (w1w2)^n) Psi_{l/w1w2}(x)."""
    tag = classify_regime(params).tag
    if tag == "None":
        raise RegimeError("rescaled wave function requires a unitarity regime")
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(x, dtype=float)
    wp = params.omega.product.real
    lam_hat = lam / wp
    if tag in ("I", "II"):
        w = mu_multi(x.astype(complex), params)
        w_hat = mu_multi(lam_hat.astype(complex), hatted(params))
    else:
        w = delta_measure(x.astype(complex), params)
        w_hat = delta_measure(lam_hat.astype(complex), hatted(params))
    # both weights are real nonnegative in a unitarity regime; clip rounding dust
    wr = max(float(np.real(w)), 0.0)
    whr = max(float(np.real(w_hat)), 0.0)
    amp = math.sqrt(wr * whr / wp ** params.n)
    return amp * psi(lam_hat, x, params, spec)


def psi_envelope(lam, x, params: SystemParams, *, delta: float = 0.1, c: float = 1.0,
                 use_min: bool = False) -> float:
    """Decay envelope c exp(-2 pi l_n sum Im x + delta sum |Re x| - pi Re g_hat sum |Re dx|)."""
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(x, dtype=complex)
    ln = float(np.min(lam)) if use_min else float(lam[-1])
    pair = sum(abs((x[j] - x[k]).real) for j in range(params.n) for k in range(j + 1, params.n))
    expo = (-2.0 * math.pi * ln * float(np.sum(x.imag))
            + delta * float(np.sum(np.abs(x.real)))
            - pairwise_rate(params) * pair)
    return c * math.exp(expo)


# ---------------------------------------------------------------------------
# symmetry residuals

_SYMMETRY_KINDS = ("bispectral", "coupling-reflection", "modular", "parity",
                   "shift", "permutation")


def _rel(a: complex, b: complex) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def symmetry_residual(kind: str, lam, x, params: SystemParams,
                      spec: QuadratureSpec | None = None, *, alpha: float = 0.4) -> float:
    """Relative residual of one of the listed wave-function identities."""
    spec = spec or default_spec()
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(x, dtype=complex)
    if kind == "bispectral":
        if np.any(np.abs(x.imag) > 0):
            raise ValueError("bispectral residual requires real x")
        a = psi(lam, x, params, spec, force_quadrature=True)
        b = psi(x.real, lam, hatted(params), spec, force_quadrature=True)
        return _rel(a, b)
    if kind == "coupling-reflection":
        a = psi(lam, x, reflect_coupling(params), spec, force_quadrature=True)
        b = (complex(eta(x, params)) * complex(eta_hat(lam.astype(complex), params))
             * psi(lam, x, params, spec, force_quadrature=True))
        return _rel(a, b)
    if kind == "modular":
        from .params import _with_swapped_periods
        a = psi(lam, x, params, spec, force_quadrature=True)
        b = psi(lam, x, _with_swapped_periods(params), spec, force_quadrature=True)
        return _rel(a, b)
    if kind == "parity":
        a = psi(lam, x, params, spec, force_quadrature=True)
        b = psi(-lam, -x, params, spec, force_quadrature=True)
        return _rel(a, b)
    if kind == "shift":
        a = psi(lam + alpha, x, params, spec, force_quadrature=True)
        b = complex(np.exp(2j * math.pi * alpha * np.sum(x))) * psi(lam, x, params, spec,
                                                                    force_quadrature=True)
        return _rel(a, b)
    if kind == "permutation":
        base = psi(lam, x, params, spec, force_quadrature=True)
        worst = 0.0
        for i in range(params.n):
            for j in range(i + 1, params.n):
                li = lam.copy()
                li[[i, j]] = li[[j, i]]
                xi = x.copy()
                xi[[i, j]] = xi[[j, i]]
                worst = max(worst, _rel(base, psi(li, x, params, spec, force_quadrature=True)))
                worst = max(worst, _rel(base, psi(lam, xi, params, spec, force_quadrature=True)))
        return worst
    raise ValueError("unknown symmetry kind %r (choose from %s)" % (kind, _SYMMETRY_KINDS))
