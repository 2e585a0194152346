"""Entire symmetric test functions: Gaussian x symmetric polynomial.

These are the dense subset used by the transform theorems: exactly evaluable
at complex-shifted arguments, symmetric under coordinate permutations, and
decaying fast enough on real tuples to dominate every measure growth bound.
An optional Gaussian damping of pairwise separations sharpens the decay in
|x_j - x_k| without breaking entirety.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["AnalyticTestFunction", "monomial_symmetric"]


def monomial_symmetric(partition: tuple[int, ...], x: np.ndarray) -> np.ndarray:
    """m_alpha(x): sum of x^beta over distinct permutations beta of alpha."""
    n = x.shape[-1]
    alpha = tuple(partition) + (0,) * (n - len(partition))
    if len(alpha) != n:
        raise ValueError("partition longer than tuple length")
    out = np.zeros(x.shape[:-1], dtype=complex)
    for beta in set(itertools.permutations(alpha)):
        term = np.ones(x.shape[:-1], dtype=complex)
        for i, b in enumerate(beta):
            if b:
                term = term * x[..., i] ** b
        out = out + term
    return out


@dataclass(frozen=True)
class AnalyticTestFunction:
    """exp(-width sum (x_j - c_j)^2) * P(x) * exp(-damping sum_{j<k} (x_j-x_k)^2).

    ``poly`` maps integer partitions to coefficients in the
    monomial-symmetric basis; the empty partition is the constant term.
    """

    n: int
    width: float = 1.0
    center: tuple[float, ...] = ()
    poly: tuple[tuple[tuple[int, ...], complex], ...] = (((), 1.0),)
    pair_damping: float = 0.0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("Gaussian width must be positive")
        if self.pair_damping < 0:
            raise ValueError("pair damping rate must be nonnegative")
        c = tuple(float(v) for v in self.center) or (0.0,) * self.n
        if len(c) != self.n:
            raise ValueError("center length must equal n")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "poly", tuple((tuple(p), complex(c_)) for p, c_ in self.poly))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        scalar = x.ndim == 1
        xt = x if x.shape[-1] == self.n else None
        if xt is None:
            raise ValueError("argument tuple length must equal n")
        c = np.asarray(self.center, dtype=complex)
        expo = -self.width * np.sum((xt - c) ** 2, axis=-1)
        if self.pair_damping:
            for j in range(self.n):
                for k in range(j + 1, self.n):
                    expo = expo - self.pair_damping * (xt[..., j] - xt[..., k]) ** 2
        pol = np.zeros(xt.shape[:-1], dtype=complex)
        for part, coeff in self.poly:
            pol = pol + coeff * monomial_symmetric(part, xt)
        val = np.exp(expo) * pol
        return complex(val) if scalar else val

    def reflected(self):
        """The function x -> phi(-x) as a plain callable."""
        return lambda x: self(-np.asarray(x, dtype=complex))

    def degree(self) -> int:
        return max((sum(p) for p, _ in self.poly), default=0)

    def box_radius(self, tail_tol: float, growth_rate: float = 0.0) -> float:
        """Radius beyond which |phi| times an exp(growth_rate*|x|) weight is < tail_tol."""
        w = self.width
        shift = max(abs(v) for v in self.center) if self.center else 0.0
        # solve w r^2 - growth r = log(1/tol), slack for the polynomial factor
        logt = math.log(1.0 / tail_tol) + 3.0 + 2.0 * self.degree()
        r = (growth_rate + math.sqrt(growth_rate ** 2 + 4.0 * w * logt)) / (2.0 * w)
        return r + shift


def schwartz_margin(phi, params, *, radius: float = 6.0, n_probe: int = 11) -> float:
    """Empirical membership probe for the transform's test-function space.

    Fits the constant of the required decay envelope on an inner grid and
    returns the worst envelope violation factor on an outer grid (<= 1 means
    the probe passed).  Gaussians pass by a wide margin; this guards against
    user-supplied closures with too little decay.
    """
    from .params import pairwise_rate  # local import to avoid a cycle

    n = params.n
    rate = 2.0 * pairwise_rate(params)
    rng = np.random.default_rng(1234)

    def envelope(xt):
        pair = sum(np.abs(xt[..., j] - xt[..., k])
                   for j in range(n) for k in range(j + 1, n))
        return np.exp(-rate * pair - 0.05 * np.sum(np.abs(xt), axis=-1))

    inner = rng.uniform(-radius / 2, radius / 2, size=(n_probe ** 2, n))
    outer = rng.uniform(-radius, radius, size=(n_probe ** 2, n))
    c_fit = np.max(np.abs(phi(inner)) / envelope(inner))
    if c_fit == 0.0:
        return 0.0
    return float(np.max(np.abs(phi(outer)) / (c_fit * envelope(outer))))
