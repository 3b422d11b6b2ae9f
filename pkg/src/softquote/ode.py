"""Backward integration of the hard, soft and policy-evaluation systems."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ModelParams, side_gains, ASK, BID
from .quadrature import ActionGrid2D, hard_hamiltonian_all, soft_hamiltonian_all

H_REF = 1e-3


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("a time grid needs at least one step")

    @classmethod
    def from_step(cls, horizon: float, h: float) -> "TimeGrid":
        n = round(horizon / h)
        if n < 1 or abs(n * h - horizon) > 1e-9 * max(1.0, horizon):
            raise ValueError(f"step {h} does not divide horizon {horizon}")
        return cls(horizon, n)

    @property
    def h(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n_steps * factor)

    def index_of(self, t: float) -> int:
        """Index ``n`` with ``t in [t_n, t_{n+1})``; the horizon maps to the last step."""
        n = int(math.floor(t / self.h + 1e-12))
        return min(max(n, 0), self.n_steps - 1)


def substep_factor(h: float, h_max: float = H_REF) -> int:
    """Smallest integer ``m`` with ``h / m <= h_max``."""
    return max(1, math.ceil(h / h_max - 1e-9))


@dataclass
class Trajectory:
    grid: TimeGrid
    values: np.ndarray  # (N+1, 2Q+1); row n is time t_n

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.grid.n_steps + 1:
            raise ValueError("trajectory length does not match its grid")

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    def restrict(self, coarse: TimeGrid) -> "Trajectory":
        """Sample onto a coarser nested grid."""
        ratio = self.grid.n_steps / coarse.n_steps
        m = round(ratio)
        if m < 1 or abs(ratio - m) > 1e-9 or abs(coarse.horizon - self.grid.horizon) > 1e-12:
            raise ValueError("grids are not nested")
        return Trajectory(coarse, self.values[::m])

    def to_csv(self, path, params: ModelParams):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "q", "value"])
            for n, t in enumerate(self.grid.times):
                for i, q in enumerate(params.inventories):
                    w.writerow([n, repr(float(t)), int(q), repr(float(self.values[n, i]))])


def rk4_solve(field: Callable[[np.ndarray], np.ndarray], terminal, grid: TimeGrid,
              substeps: int = 1) -> Trajectory:
    """Integrate ``-v' = field(v)`` backwards from ``v(T) = terminal``.

    Solved forwards in time-to-go. ``substeps`` RK4 steps are taken inside each
    grid interval; only grid times are stored.
    """
    u = np.array(terminal, dtype=float)
    out = np.empty((grid.n_steps + 1, u.size))
    out[grid.n_steps] = u
    hs = grid.h / substeps
    for n in range(grid.n_steps - 1, -1, -1):
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(substeps):
                k1 = field(u)
                k2 = field(u + 0.5 * hs * k1)
                k3 = field(u + 0.5 * hs * k2)
                k4 = field(u + hs * k3)
                u = u + hs / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite state at time index {n}")
        out[n] = u
    return Trajectory(grid, out)


def _grid_for(params: ModelParams, h: float | None) -> tuple[TimeGrid, int]:
    """Comparison grid with step ``h`` and the RK4 substep count keeping steps <= H_REF."""
    if h is None:
        return TimeGrid.from_step(params.horizon, H_REF), 1
    return TimeGrid.from_step(params.horizon, h), substep_factor(h)


def solve_hard(params: ModelParams, h: float | None = None) -> Trajectory:
    """Hard value ``v^0`` by RK4 with step at most ``H_REF``, stored on the ``h`` grid."""
    grid, m = _grid_for(params, h)
    return rk4_solve(lambda y: hard_hamiltonian_all(y, params)[0],
                     params.terminal_values(), grid, m)


def solve_soft(params: ModelParams, lam: float, action_grid: ActionGrid2D,
               h: float | None = None) -> Trajectory:
    grid, m = _grid_for(params, h)
    return rk4_solve(lambda y: soft_hamiltonian_all(y, lam, action_grid, params),
                     params.terminal_values(), grid, m)


def euler_soft_scheme(lam: float, grid: TimeGrid, action_grid: ActionGrid2D,
                      params: ModelParams) -> Trajectory:
    """Explicit backward Euler recursion for the soft system."""
    if not lam > 0:
        raise ValueError("temperature must be positive")
    out = np.empty((grid.n_steps + 1, params.dim))
    v = params.terminal_values()
    out[-1] = v
    h = grid.h
    for n in range(grid.n_steps - 1, -1, -1):
        v = v + h * soft_hamiltonian_all(v, lam, action_grid, params)
        out[n] = v
    return Trajectory(grid, out)


def averaged_hamiltonian(u, marginals, params: ModelParams) -> np.ndarray:
    """``int H_q(u, delta) pi_q(d delta)`` using only the two quote marginals.

    ``marginals`` is ``((nodes_a, probs_a), (nodes_b, probs_b))`` with per-row
    probabilities of shape ``(2Q+1, m)``.
    """
    (na, pa), (nb, pb) = marginals
    return (params.running_penalty()
            + np.sum(side_gains(u, na, ASK, params) * pa, axis=1)
            + np.sum(side_gains(u, nb, BID, params) * pb, axis=1))


def policy_evaluation_ode(policy, params: ModelParams, h_max: float = H_REF) -> Trajectory:
    """Value of a fresh-sampling policy, piecewise constant on its own grid.

    RK4 runs at a step no larger than ``h_max`` inside each policy interval.
    """
    policy.validate()
    grid = policy.grid
    m = substep_factor(grid.h, h_max)
    hs = grid.h / m
    u = params.terminal_values()
    out = np.empty((grid.n_steps + 1, params.dim))
    out[-1] = u
    for n in range(grid.n_steps - 1, -1, -1):
        marg = policy.marginals(n)

        def field(y, marg=marg):
            return averaged_hamiltonian(y, marg, params)

        for _ in range(m):
            k1 = field(u)
            k2 = field(u + 0.5 * hs * k1)
            k3 = field(u + 0.5 * hs * k2)
            k4 = field(u + hs * k3)
            u = u + hs / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite state at time index {n}")
        out[n] = u
    return Trajectory(grid, out)


def grid_sup_error(a: Trajectory, b: Trajectory) -> float:
    """Sup-norm distance over (time, inventory), on ``a``'s grid."""
    if a.values.shape[1] != b.values.shape[1]:
        raise ValueError("inventory dimensions differ")
    if b.grid.n_steps != a.grid.n_steps:
        b = b.restrict(a.grid)
    return float(np.max(np.abs(a.values - b.values)))


def left_riemann(series, h: float) -> float:
    """``sum_n h * series_n`` over ``n = 0..N-1``; extra axes are summed too."""
    return float(h * np.sum(np.asarray(series, dtype=float)))
