"""Piecewise-Chebyshev acceleration for scalar kernel functions.

The measure and kernel functions are smooth, non-oscillatory and
exponentially growing/decaying along horizontal lines in the complex plane.
Building one adaptive Chebyshev fit per (function, line) and evaluating the
polynomial afterwards is orders of magnitude cheaper than re-running the
double sine quadrature at every integration node.  Panels are fitted
independently, so relative accuracy survives the large dynamic range of the
tails.  Points outside the fitted range fall back to the exact function.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as _cheb

__all__ = ["ChebLine"]


class ChebLine:
    def __init__(self, fn, lo: float, hi: float, *, tol: float = 1e-12,
                 degree: int = 32, min_width: float = 2e-3, max_panels: int = 8192,
                 init_width: float = 2.0):
        """Fit ``fn`` (vectorized real-array -> complex-array) on [lo, hi]."""
        self.fn = fn
        self.tol = tol
        self.degree = degree
        self.lo = float(lo)
        self.hi = float(hi)
        nodes = np.cos(np.pi * np.arange(degree + 1) / degree)[::-1]  # cheb extrema
        stack = []
        n0 = max(1, int(np.ceil((hi - lo) / init_width)))
        edges = np.linspace(lo, hi, n0 + 1)
        stack.extend(zip(edges[:-1], edges[1:]))
        panels = []
        while stack:
            a, b = stack.pop()
            if len(panels) + len(stack) > max_panels:
                raise RuntimeError("ChebLine: panel budget exceeded")
            xs = 0.5 * (a + b) + 0.5 * (b - a) * nodes
            vals = np.asarray(fn(xs), dtype=complex)
            if not np.all(np.isfinite(vals.view(float))):
                raise ValueError("ChebLine: non-finite kernel value in [%g, %g]" % (a, b))
            coeffs = _chebfit_values(nodes, vals, degree)
            scale = np.max(np.abs(vals))
            tail = np.max(np.abs(coeffs[-3:]))
            if scale == 0.0 or tail <= tol * max(scale, 1e-300) or (b - a) <= min_width:
                panels.append((a, b, coeffs))
            else:
                m = 0.5 * (a + b)
                stack.append((a, m))
                stack.append((m, b))
        panels.sort(key=lambda p: p[0])
        self._edges = np.array([p[0] for p in panels] + [panels[-1][1]])
        self._coeffs = [p[2] for p in panels]

    def __call__(self, t):
        t_in = np.asarray(t, dtype=float)
        ts = np.atleast_1d(t_in)
        out = np.empty(ts.shape, dtype=complex)
        inside = (ts >= self.lo) & (ts <= self.hi)
        if np.any(~inside):
            out[~inside] = self.fn(ts[~inside])
        tin = ts[inside]
        if tin.size:
            idx = np.clip(np.searchsorted(self._edges, tin, side="right") - 1,
                          0, len(self._coeffs) - 1)
            vals = np.empty(tin.shape, dtype=complex)
            for pi in np.unique(idx):
                sel = idx == pi
                a, b = self._edges[pi], self._edges[pi + 1]
                u = (2.0 * tin[sel] - (a + b)) / (b - a)
                vals[sel] = _cheb.chebval(u, self._coeffs[pi])
            out[inside] = vals
        return out if t_in.ndim else complex(out[0])

    @property
    def n_panels(self) -> int:
        return len(self._coeffs)


def _chebfit_values(nodes: np.ndarray, vals: np.ndarray, degree: int) -> np.ndarray:
    # interpolation through Chebyshev extrema (Clenshaw-Curtis points)
    # via the discrete cosine transform written as a matmul; N+1 points.
    n = degree
    k = np.arange(n + 1)
    theta = np.pi * np.outer(k, k) / n
    cosmat = np.cos(theta)
    w = np.full(n + 1, 2.0 / n)
    w[0] = w[-1] = 1.0 / n
    coeffs = cosmat @ (vals[::-1] * w)
    coeffs[0] *= 0.5
    coeffs[-1] *= 0.5
    return coeffs
