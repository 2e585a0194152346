"""Adaptive quadrature for smooth, exponentially decaying complex integrands.

The base rule is the embedded Gauss-Kronrod 7/15 pair on each panel; the
error estimate per panel is the difference of the two rules.  Refinement is
plain bisection, always splitting the panel with the worst estimate.
Truncation of infinite tails is never decided here: callers derive a finite
radius from analytic decay envelopes (see ``estimate_truncation_radius``)
and hand it over in the spec.

Integrands are expected to be numpy-vectorized: they receive a float64 array
of nodes and return a complex array of the same shape.  For boxes only the
innermost coordinate is vectorized; outer coordinates arrive as scalars.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadratureSpec",
    "IntegralResult",
    "SingularIntegrandError",
    "estimate_truncation_radius",
    "integrate_line",
    "integrate_box",
]


class SingularIntegrandError(ValueError):
    """Integrand returned NaN/Inf on the contour."""


# Gauss-Kronrod 7/15 abscissas and weights on [-1, 1] (positive half).
_XGK_HALF = np.array([
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
])
_WGK_HALF = np.array([
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
])
_WG_HALF = np.array([
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
])

_XGK = np.concatenate([-_XGK_HALF[:-1], _XGK_HALF[::-1]])
_WGK = np.concatenate([_WGK_HALF[:-1], _WGK_HALF[::-1]])
# Gauss weights aligned with the Kronrod node layout (zeros on Kronrod-only nodes).
_WG = np.zeros_like(_WGK)
_WG[1:-1:2] = np.concatenate([_WG_HALF[:-1], _WG_HALF[::-1]])

_NODES_PER_PANEL = _XGK.size


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerance and budget for one (possibly multi-dimensional) integral.

    ``truncation_radius`` holds one radius per dimension; the integration
    domain is the product of ``[-R_d, R_d]`` intervals unless the caller
    passes explicit intervals.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_nodes_per_dim: int = 200_000
    truncation_radius: tuple[float, ...] = (10.0,)
    refinement_limit: int = 4000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("rel_tol and abs_tol must be positive")
        if self.max_nodes_per_dim < 8:
            raise ValueError("max_nodes_per_dim must be at least 8")
        radii = tuple(float(r) for r in np.atleast_1d(self.truncation_radius))
        if any(r <= 0 for r in radii):
            raise ValueError("truncation_radius must be positive in every dimension")
        object.__setattr__(self, "truncation_radius", radii)
        if self.refinement_limit < 0:
            raise ValueError("refinement_limit must be nonnegative")

    @property
    def ndim(self) -> int:
        return len(self.truncation_radius)

    def with_radius(self, *radii: float) -> "QuadratureSpec":
        return QuadratureSpec(
            rel_tol=self.rel_tol,
            abs_tol=self.abs_tol,
            max_nodes_per_dim=self.max_nodes_per_dim,
            truncation_radius=tuple(radii),
            refinement_limit=self.refinement_limit,
        )


@dataclass(frozen=True)
class IntegralResult:
    value: complex
    error_estimate: float
    nodes_used: int
    converged: bool


def estimate_truncation_radius(decay_rate: float, amplitude: float, abs_tol: float) -> float:
    """Radius R with ``amplitude * exp(-decay_rate*R) / decay_rate <= abs_tol``.

    This is the closed-form bound for the tail of an exponentially decaying
    integrand; it is monotone decreasing in the decay rate (clamped at 0).
    """
    if decay_rate <= 0:
        raise ValueError("non-integrable tail: decay_rate must be positive")
    if amplitude <= 0 or abs_tol <= 0:
        raise ValueError("amplitude and abs_tol must be positive")
    return max(0.0, math.log(amplitude / (abs_tol * decay_rate)) / decay_rate)


def _eval_panel(f, a: float, b: float, vectorized: bool):
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    xs = mid + half * _XGK
    if vectorized:
        vals = np.asarray(f(xs), dtype=complex)
        if vals.shape != xs.shape:
            vals = np.broadcast_to(vals, xs.shape)
    else:
        vals = np.array([f(x) for x in xs], dtype=complex)
    if not np.all(np.isfinite(vals.real) & np.isfinite(vals.imag)):
        raise SingularIntegrandError("integrand singular on contour")
    kron = half * np.sum(_WGK * vals)
    gauss = half * np.sum(_WG * vals)
    return kron, abs(kron - gauss)


def integrate_line(f, spec: QuadratureSpec, *, interval=None, vectorized: bool = True,
                   initial_panels: int = 8) -> IntegralResult:
    """Adaptively integrate ``f`` over ``interval`` (default ``[-R, R]``).

    ``f`` maps a float64 node array to complex values when ``vectorized``;
    otherwise it is called per scalar node.
    """
    if interval is None:
        r = spec.truncation_radius[0]
        interval = (-r, r)
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise ValueError("empty integration interval")

    edges = np.linspace(a, b, max(2, initial_panels + 1))
    heap = []
    total = 0.0 + 0.0j
    total_err = 0.0
    nodes = 0
    counter = 0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = _eval_panel(f, lo, hi, vectorized)
        nodes += _NODES_PER_PANEL
        total += val
        total_err += err
        counter += 1
        heapq.heappush(heap, (-err, counter, lo, hi, val))

    refinements = 0
    while True:
        target = max(spec.abs_tol, spec.rel_tol * abs(total))
        if total_err <= target:
            return IntegralResult(total, total_err, nodes, True)
        if refinements >= spec.refinement_limit or nodes + 2 * _NODES_PER_PANEL > spec.max_nodes_per_dim:
            return IntegralResult(total, total_err, nodes, total_err <= target)
        neg_err, _, lo, hi, val = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        v1, e1 = _eval_panel(f, lo, mid, vectorized)
        v2, e2 = _eval_panel(f, mid, hi, vectorized)
        nodes += 2 * _NODES_PER_PANEL
        total += v1 + v2 - val
        total_err += e1 + e2 - (-neg_err)
        refinements += 1
        counter += 1
        heapq.heappush(heap, (-e1, counter, lo, mid, v1))
        counter += 1
        heapq.heappush(heap, (-e2, counter, mid, hi, v2))


def integrate_box(f, spec: QuadratureSpec, *, intervals=None) -> IntegralResult:
    """Tensorized nested quadrature over a box in R^d (d = spec.ndim).

    The outer dimensions are adaptive scalar loops; the innermost dimension
    is vectorized, so ``f(x0, ..., x_{d-2}, t_array)`` must broadcast over
    the final argument.  The error estimate is the outer rule error plus the
    maximum inner estimate seen, accumulated over dimensions (conservative).
    """
    d = spec.ndim
    if intervals is None:
        intervals = [(-r, r) for r in spec.truncation_radius]
    if len(intervals) != d:
        raise ValueError("one interval per dimension required")

    state = {"nodes": [0] * d, "converged": True, "inner_err": [0.0] * d}

    def rec(prefix: tuple, depth: int) -> complex:
        if depth == d - 1:
            res = integrate_line(lambda ts: f(*prefix, ts), spec,
                                 interval=intervals[depth], vectorized=True)
        else:
            res = integrate_line(lambda t: rec(prefix + (t,), depth + 1), spec,
                                 interval=intervals[depth], vectorized=False)
        state["nodes"][depth] += res.nodes_used
        state["inner_err"][depth] = max(state["inner_err"][depth], res.error_estimate)
        state["converged"] = state["converged"] and res.converged
        if depth > 0:
            return res.value
        return res.value

    value = rec((), 0)
    err = sum(state["inner_err"])
    nodes = max(state["nodes"])
    target = max(spec.abs_tol, spec.rel_tol * abs(value))
    return IntegralResult(value, err, nodes, state["converged"] and err <= target * d * 4)


def fixed_panel_nodes(a: float, b: float, panel_width: float):
    """Shared Gauss-Kronrod nodes/weights on uniform panels over [a, b].

    Returns (nodes, kronrod_weights, gauss_weights); the difference of the
    two weighted sums is the usual embedded error estimate.  Used by grid
    pipelines that reuse one node layout across many integrands.
    """
    n_panels = max(1, int(math.ceil((b - a) / panel_width)))
    edges = np.linspace(a, b, n_panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    halves = 0.5 * (edges[1:] - edges[:-1])
    xs = (mids[:, None] + halves[:, None] * _XGK[None, :]).ravel()
    wk = (halves[:, None] * _WGK[None, :]).ravel()
    wg = (halves[:, None] * _WG[None, :]).ravel()
    return xs, wk, wg
