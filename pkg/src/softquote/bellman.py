"""Exact CE-score Bellman operator via the finite-state Feynman-Kac formula.

For a frozen quote the inventory is a birth-death chain; the exponential
moment of the one-step reward is the action of ``expm(h K)`` on
``exp(-gamma * phi)``, where ``K`` is the tridiagonal matrix built by
:func:`build_generator`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .model import ASK, BID, ModelParams, Quote
from .ode import TimeGrid
from .quadrature import ActionGrid2D

_PADE_DEGREE = 6
_PADE_COEFFS = np.array([
    factorial(2 * _PADE_DEGREE - k) * factorial(_PADE_DEGREE)
    / (factorial(2 * _PADE_DEGREE) * factorial(k) * factorial(_PADE_DEGREE - k))
    for k in range(_PADE_DEGREE + 1)
])
# leading coefficient of the [6/6] Pade remainder, (m!)^2 / ((2m)! (2m+1)!)
_PADE_ERR = factorial(_PADE_DEGREE) ** 2 / (
    factorial(2 * _PADE_DEGREE) * factorial(2 * _PADE_DEGREE + 1))


def build_generator(delta: Quote, params: ModelParams) -> np.ndarray:
    """Matrix ``K`` with ``E[exp(-gamma * one-step reward)] = (expm(hK) u)_q``."""
    q = params.inventories.astype(float)
    g = params.gamma
    lam_a = params.side_intensity(ASK, delta[0]) * params.ask_active
    lam_b = params.side_intensity(BID, delta[1]) * params.bid_active
    diag = 0.5 * g * g * params.sigma**2 * q * q + g * params.eta * q * q - lam_a - lam_b
    K = np.diag(diag)
    K += np.diag((lam_a * np.exp(-g * delta[0]))[1:], -1)
    K += np.diag((lam_b * np.exp(-g * delta[1]))[:-1], 1)
    return K


def _pade_scale(norm: float, tol: float) -> int:
    s = 0
    if norm == 0.0:
        return 0
    while True:
        theta = norm / 2.0**s
        if theta <= 1.0 and _PADE_ERR * theta ** (2 * _PADE_DEGREE + 1) <= tol:
            return s
        s += 1
        if s > 1100:
            raise FloatingPointError("matrix norm too large to scale")


def matrix_exponential(M, tol: float = 1e-12) -> np.ndarray:
    """Dense ``expm(M)`` by scaling and squaring with a [6/6] Pade approximant."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise FloatingPointError("matrix has non-finite entries")
    s = _pade_scale(float(np.max(np.sum(np.abs(M), axis=0))), tol)
    A = M / 2.0**s
    n = A.shape[0]
    eye = np.eye(n)
    powers = [eye, A]
    for _ in range(2, _PADE_DEGREE + 1):
        powers.append(powers[-1] @ A)
    even = sum(_PADE_COEFFS[k] * powers[k] for k in range(0, _PADE_DEGREE + 1, 2))
    odd = sum(_PADE_COEFFS[k] * powers[k] for k in range(1, _PADE_DEGREE + 1, 2))
    E = np.linalg.solve(even - odd, even + odd)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            E = E @ E
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("overflow while squaring the matrix exponential")
    return E


def action_propagators(grid: ActionGrid2D, h: float, params: ModelParams) -> np.ndarray:
    """``expm(h K^delta)`` for every node of the action grid, shape ``(na*nb, d, d)``.

    ``K^delta`` does not depend on time, so one stack serves a whole recursion.
    """
    nodes = grid.flat_nodes()
    return np.stack([matrix_exponential(h * build_generator(d, params)) for d in nodes])


def ce_scores(phi, propagators: np.ndarray, params: ModelParams) -> np.ndarray:
    """One-step certainty equivalents for every action and inventory, ``(n_actions, d)``."""
    phi = np.asarray(phi, dtype=float)
    shift = phi.min()
    u = np.exp(-params.gamma * (phi - shift))
    moments = propagators @ u
    if np.any(moments <= 0):
        raise FloatingPointError("non-positive Feynman-Kac moment")
    return shift - np.log(moments) / params.gamma


def ce_score(phi, delta: Quote, h: float, q: int, params: ModelParams) -> float:
    """Certainty equivalent of ``x + q s + phi`` after one step under a frozen quote."""
    if not h > 0:
        raise ValueError("step must be positive")
    E = matrix_exponential(h * build_generator(delta, params))
    return float(ce_scores(phi, E[None], params)[0, q + params.Q])


def _lse_columns(scores: np.ndarray, weights: np.ndarray, temp: float) -> np.ndarray:
    m = scores.max(axis=0)
    return m + temp * np.log(np.sum(weights[:, None] * np.exp((scores - m) / temp), axis=0))


def bellman_operator(phi, h: float, lam: float, grid: ActionGrid2D, params: ModelParams,
                     propagators: np.ndarray | None = None) -> np.ndarray:
    """``h lam log int exp(C_h^delta phi / (h lam)) nu(d delta)`` for every inventory."""
    if not (h > 0 and lam > 0):
        raise ValueError("step and temperature must be positive")
    if propagators is None:
        propagators = action_propagators(grid, h, params)
    C = ce_scores(phi, propagators, params)
    return _lse_columns(C, grid.weights.ravel(), h * lam)


@dataclass
class BellmanTable:
    grid: TimeGrid
    lam: float
    values: np.ndarray  # (N+1, d)
    propagators: np.ndarray = field(repr=False, default=None)

    @property
    def h(self) -> float:
        return self.grid.h

    def to_csv(self, path, params: ModelParams):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "q", "value"])
            for n, t in enumerate(self.grid.times):
                for i, q in enumerate(params.inventories):
                    w.writerow([n, repr(float(t)), int(q), repr(float(self.values[n, i]))])


def bellman_recursion(h: float, lam: float, grid: ActionGrid2D, params: ModelParams) -> BellmanTable:
    """Exact discrete value, iterated backwards from the terminal penalty."""
    tgrid = TimeGrid.from_step(params.horizon, h)
    E = action_propagators(grid, h, params)
    out = np.empty((tgrid.n_steps + 1, params.dim))
    v = params.terminal_values()
    out[-1] = v
    for n in range(tgrid.n_steps - 1, -1, -1):
        v = bellman_operator(v, h, lam, grid, params, E)
        out[n] = v
    return BellmanTable(tgrid, lam, out, E)


def variational_check(phi, h: float, lam: float, q: int, grid: ActionGrid2D,
                      params: ModelParams, propagators: np.ndarray | None = None) -> float:
    """Gap between the log-sum-exp value and the Gibbs-mean score minus the entropy penalty."""
    if propagators is None:
        propagators = action_propagators(grid, h, params)
    C = ce_scores(phi, propagators, params)[:, q + params.Q]
    w = grid.weights.ravel()
    temp = h * lam
    lse = _lse_columns(C[:, None], w, temp)[0]
    pi = w * np.exp((C - C.max()) / temp)
    pi /= pi.sum()
    return abs(lse - dual_objective(C, pi, w, temp))


def dual_objective(scores, pi, nu, temp: float) -> float:
    """``sum pi * scores - temp * KL(pi || nu)`` on a discrete carrier."""
    pi = np.asarray(pi, dtype=float)
    pos = pi > 0
    kl = float(np.sum(pi[pos] * np.log(pi[pos] / nu[pos])))
    return float(np.sum(pi * scores) - temp * kl)
