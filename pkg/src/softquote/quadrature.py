"""Gauss-Legendre action grids and the hard / soft Hamiltonians.

The Hamiltonian is additively separable in the two quote coordinates and the
reference law is a product of uniforms, so the log-sum-exp over the tensor
grid factorises into two one-dimensional log-sum-exps.  The literal 2-D
formula is kept in :func:`soft_hamiltonian_2d` for cross-checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ASK, BID, ModelParams, Quote, hamiltonian_grid, side_gains

_NEWTON_TOL = 1e-15


def _legendre_pair(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(P_n(x), P_n'(x))`` by the three-term recurrence."""
    p0, p1 = np.ones_like(x), x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    return p1, n * (x * p1 - p0) / (x * x - 1.0)


def legendre_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration."""
    if n < 1:
        raise ValueError("node count must be >= 1")
    i = np.arange(1, n + 1)
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(100):
        p, dp = _legendre_pair(n, x)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) < _NEWTON_TOL:
            break
    _, dp = _legendre_pair(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    return x[order], w[order]


@dataclass(frozen=True)
class Quadrature1D:
    nodes: np.ndarray
    weights: np.ndarray
    lo: float
    hi: float

    @property
    def probs(self) -> np.ndarray:
        """Weights of the uniform probability law on ``[lo, hi]``."""
        return self.weights / (self.hi - self.lo)

    def __len__(self):
        return self.nodes.size


def gauss_legendre(n: int, lo: float = -1.0, hi: float = 1.0) -> Quadrature1D:
    x, w = legendre_nodes(n)
    half = 0.5 * (hi - lo)
    return Quadrature1D(nodes=0.5 * (hi + lo) + half * x, weights=half * w, lo=lo, hi=hi)


@dataclass(frozen=True)
class ActionGrid2D:
    """Tensor-product quadrature carrying the uniform reference law on the quote rectangle."""

    quad_a: Quadrature1D
    quad_b: Quadrature1D

    @classmethod
    def build(cls, n: int, params: ModelParams) -> "ActionGrid2D":
        q = gauss_legendre(n, params.quote_lo, params.quote_hi)
        return cls(q, q)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.quad_a), len(self.quad_b)

    @property
    def weights(self) -> np.ndarray:
        """Probability weights ``w_ij``; they sum to one."""
        return np.outer(self.quad_a.probs, self.quad_b.probs)

    def flat_nodes(self) -> np.ndarray:
        """All node pairs in row-major order, shape ``(na*nb, 2)``."""
        a, b = np.meshgrid(self.quad_a.nodes, self.quad_b.nodes, indexing="ij")
        return np.column_stack([a.ravel(), b.ravel()])


def expectation_under_nu(f, grid: ActionGrid2D) -> float:
    """Integrate ``f(delta_a, delta_b)`` against the reference law."""
    a, b = np.meshgrid(grid.quad_a.nodes, grid.quad_b.nodes, indexing="ij")
    vals = np.asarray(np.vectorize(f, otypes=[float])(a, b), dtype=float)
    bad = ~np.isfinite(vals)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise FloatingPointError(
            f"integrand not finite at node ({a[i, j]:.6g}, {b[i, j]:.6g})"
        )
    return float(np.sum(grid.weights * vals))


def _lse_rows(values: np.ndarray, probs: np.ndarray, lam: float) -> np.ndarray:
    """Row-wise ``lam * log sum_j probs_j exp(values_ij / lam)``, max-shifted."""
    m = values.max(axis=1)
    s = np.sum(probs * np.exp((values - m[:, None]) / lam), axis=1)
    return m + lam * np.log(s)


def soft_hamiltonian_all(y, lam: float, grid: ActionGrid2D, params: ModelParams) -> np.ndarray:
    """Entropy-smoothed Hamiltonian for every inventory row."""
    if not lam > 0:
        raise ValueError("temperature must be positive")
    ga = side_gains(y, grid.quad_a.nodes, ASK, params)
    gb = side_gains(y, grid.quad_b.nodes, BID, params)
    return (params.running_penalty()
            + _lse_rows(ga, grid.quad_a.probs, lam)
            + _lse_rows(gb, grid.quad_b.probs, lam))


def soft_hamiltonian(q: int, y, lam: float, grid: ActionGrid2D, params: ModelParams) -> float:
    return float(soft_hamiltonian_all(y, lam, grid, params)[q + params.Q])


def soft_hamiltonian_2d(y, lam: float, grid: ActionGrid2D, params: ModelParams) -> np.ndarray:
    """Same quantity as :func:`soft_hamiltonian_all` by the literal 2-D log-sum-exp."""
    if not lam > 0:
        raise ValueError("temperature must be positive")
    H = hamiltonian_grid(y, grid.quad_a.nodes, grid.quad_b.nodes, params)
    H = H.reshape(params.dim, -1)
    return _lse_rows(H, grid.weights.ravel(), lam)


def _golden_max(f, a: float, b: float, tol: float = 1e-10) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    # compare against the bracket ends, the optimum may sit on the boundary
    cands = [a, b, 0.5 * (a + b)]
    return max(cands, key=f)


def side_argmax(y, side: str, params: ModelParams, search_nodes=None) -> np.ndarray:
    """Maximiser of the one-sided fill term, per inventory row.

    Inactive rows report ``quote_lo``.
    """
    y = np.asarray(y, dtype=float)
    active = params.ask_active if side == ASK else params.bid_active
    if params.is_exponential:
        k = params.k_a if side == ASK else params.k_b
        g = params.gamma
        diff = np.zeros(params.dim)
        if side == ASK:
            diff[1:] = y[:-1] - y[1:]
        else:
            diff[:-1] = y[1:] - y[:-1]
        best = params.clamp(math.log1p(g / k) / g - diff)
    else:
        nodes = (np.sort(np.asarray(search_nodes, dtype=float)) if search_nodes is not None
                 else gauss_legendre(321, params.quote_lo, params.quote_hi).nodes)
        vals = side_gains(y, nodes, side, params)
        best = np.empty(params.dim)
        for i in range(params.dim):
            j = int(np.argmax(vals[i]))
            a = nodes[j - 1] if j > 0 else params.quote_lo
            b = nodes[j + 1] if j + 1 < nodes.size else params.quote_hi

            def f(x, i=i):
                return side_gains(y, [x], side, params)[i, 0]

            best[i] = _golden_max(f, a, b)
    best = np.where(active, best, params.quote_lo)
    return best


def hard_hamiltonian_all(y, params: ModelParams, search_nodes=None) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise supremum of the Hamiltonian and its maximiser.

    Returns ``(values, argmax)`` with ``argmax`` of shape ``(2Q+1, 2)``.
    """
    da = side_argmax(y, ASK, params, search_nodes)
    db = side_argmax(y, BID, params, search_nodes)
    ga = side_gains(y, da[:, None], ASK, params)[:, 0]
    gb = side_gains(y, db[:, None], BID, params)[:, 0]
    return params.running_penalty() + ga + gb, np.column_stack([da, db])


def hard_hamiltonian(q: int, y, grid, params: ModelParams) -> tuple[float, Quote]:
    nodes = None if grid is None else grid.quad_a.nodes
    vals, arg = hard_hamiltonian_all(y, params, nodes)
    i = q + params.Q
    return float(vals[i]), Quote(float(arg[i, 0]), float(arg[i, 1]))
