"""Quoting policies: Gibbs kernels on the action grid and deterministic feedbacks.

Every policy is piecewise constant in time on its own :class:`TimeGrid` and
exposes the same small surface used by the evaluation ODE and the
simulator: ``grid``, ``marginals(n)``, ``mean_quotes(n)``,
``sample(n, q, u)`` and ``validate()``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .bellman import BellmanTable, action_propagators, ce_scores
from .model import ASK, BID, ModelParams, Quote, side_gains
from .ode import TimeGrid, Trajectory, averaged_hamiltonian
from .quadrature import ActionGrid2D, hard_hamiltonian_all

NORMALIZATION_TOL = 1e-12


class ConfigurationError(ValueError):
    pass


class UnsupportedCertificateError(ValueError):
    pass


@dataclass
class GibbsKernel:
    """Normalised weights on the action grid per (time step, inventory).

    ``joint`` holds full 2-D weights when the kernel is not a product measure
    (exact flavour); Hamiltonian kernels factorise and only keep marginals.
    """

    flavor: str
    grid: TimeGrid
    action_grid: ActionGrid2D
    marg_a: np.ndarray  # (N, d, na)
    marg_b: np.ndarray  # (N, d, nb)
    joint: Optional[np.ndarray] = field(default=None, repr=False)  # (N, d, na, nb)

    @property
    def nodes_a(self):
        return self.action_grid.quad_a.nodes

    @property
    def nodes_b(self):
        return self.action_grid.quad_b.nodes

    def weights(self, n: int, q_index: int) -> np.ndarray:
        if self.joint is not None:
            return self.joint[n, q_index]
        return np.outer(self.marg_a[n, q_index], self.marg_b[n, q_index])

    def marginals(self, n: int):
        return (self.nodes_a, self.marg_a[n]), (self.nodes_b, self.marg_b[n])

    def mean_quotes(self, n: int) -> np.ndarray:
        return np.column_stack([self.marg_a[n] @ self.nodes_a, self.marg_b[n] @ self.nodes_b])

    def sample(self, n: int, q_index: int, u: float) -> Quote:
        """Inverse-CDF draw over the flattened node weights from one uniform."""
        w = self.weights(n, q_index).ravel()
        cdf = np.cumsum(w)
        k = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), w.size - 1)
        i, j = divmod(k, self.nodes_b.size)
        return Quote(float(self.nodes_a[i]), float(self.nodes_b[j]))

    def validate(self):
        for m in (self.marg_a, self.marg_b):
            if np.any(m < 0) or np.max(np.abs(m.sum(axis=-1) - 1.0)) > NORMALIZATION_TOL:
                raise ConfigurationError("kernel weights are not normalised")
        if self.joint is not None:
            s = self.joint.sum(axis=(-1, -2))
            if np.any(self.joint < 0) or np.max(np.abs(s - 1.0)) > NORMALIZATION_TOL:
                raise ConfigurationError("kernel weights are not normalised")

    def to_csv(self, path, params: ModelParams):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "q", "node_i", "node_j", "weight"])
            for n in range(self.grid.n_steps):
                for iq, q in enumerate(params.inventories):
                    W = self.weights(n, iq)
                    for i in range(W.shape[0]):
                        for j in range(W.shape[1]):
                            w.writerow([n, int(q), i, j, repr(float(W[i, j]))])


@dataclass
class DeterministicPolicy:
    """Point-mass policy: one quote per (time step, inventory)."""

    grid: TimeGrid
    quotes: np.ndarray  # (N, d, 2)
    params: ModelParams = field(repr=False)
    name: str = "deterministic"

    def marginals(self, n: int):
        ones = np.ones((self.quotes.shape[1], 1))
        return (self.quotes[n, :, :1], ones), (self.quotes[n, :, 1:], ones)

    def mean_quotes(self, n: int) -> np.ndarray:
        return self.quotes[n]

    def sample(self, n: int, q_index: int, u: float) -> Quote:
        return Quote(float(self.quotes[n, q_index, 0]), float(self.quotes[n, q_index, 1]))

    def validate(self):
        p = self.params
        if not np.all(np.isfinite(self.quotes)):
            raise ConfigurationError("policy undefined at some grid cell")
        if np.any(self.quotes < p.quote_lo - 1e-12) or np.any(self.quotes > p.quote_hi + 1e-12):
            raise ConfigurationError("policy quotes outside the quote rectangle")


def mean_curve_csv(policy, path, params: ModelParams):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t", "q", "mean_a", "mean_b"])
        for n in range(policy.grid.n_steps):
            m = policy.mean_quotes(n)
            t = n * policy.grid.h
            for iq, q in enumerate(params.inventories):
                w.writerow([n, repr(t), int(q), repr(float(m[iq, 0])), repr(float(m[iq, 1]))])


# kernel construction ------------------------------------------------------


def _gibbs_rows(scores: np.ndarray, probs: np.ndarray, temp: float) -> np.ndarray:
    z = probs * np.exp((scores - scores.max(axis=-1, keepdims=True)) / temp)
    return z / z.sum(axis=-1, keepdims=True)


def hamiltonian_gibbs_marginals(v_next, lam: float, grid: ActionGrid2D, params: ModelParams):
    """Ask and bid marginals of the Hamiltonian-Gibbs kernel, each ``(d, n_nodes)``.

    The score is separable, so the kernel is the product of its marginals.
    """
    if not lam > 0:
        raise ValueError("temperature must be positive")
    ga = side_gains(v_next, grid.quad_a.nodes, ASK, params)
    gb = side_gains(v_next, grid.quad_b.nodes, BID, params)
    return _gibbs_rows(ga, grid.quad_a.probs, lam), _gibbs_rows(gb, grid.quad_b.probs, lam)


def hamiltonian_gibbs(v_next, lam: float, grid: ActionGrid2D, params: ModelParams) -> np.ndarray:
    """Full weights ``(d, na, nb)`` proportional to ``w_ij exp(H_q(v_next, delta_ij) / lam)``."""
    pa, pb = hamiltonian_gibbs_marginals(v_next, lam, grid, params)
    return pa[:, :, None] * pb[:, None, :]


def exact_gibbs(v_next, h: float, lam: float, grid: ActionGrid2D, params: ModelParams,
                propagators: np.ndarray | None = None) -> np.ndarray:
    """Weights ``(d, na, nb)`` proportional to ``w_ij exp(C_h^delta(v_next)(q) / (h lam))``."""
    if not (h > 0 and lam > 0):
        raise ValueError("step and temperature must be positive")
    if propagators is None:
        propagators = action_propagators(grid, h, params)
    C = ce_scores(v_next, propagators, params).T  # (d, n_actions)
    W = _gibbs_rows(C, grid.weights.ravel(), h * lam)
    return W.reshape(params.dim, *grid.shape)


def hamiltonian_gibbs_kernel(vhat: Trajectory, lam: float, grid: ActionGrid2D,
                             params: ModelParams) -> GibbsKernel:
    """Kernel on ``[t_n, t_{n+1})`` built from the Euler value at ``t_{n+1}``."""
    N = vhat.grid.n_steps
    ma = np.empty((N, params.dim, len(grid.quad_a)))
    mb = np.empty((N, params.dim, len(grid.quad_b)))
    for n in range(N):
        ma[n], mb[n] = hamiltonian_gibbs_marginals(vhat.values[n + 1], lam, grid, params)
    return GibbsKernel("hamiltonian", vhat.grid, grid, ma, mb)


def exact_gibbs_kernel(table: BellmanTable, grid: ActionGrid2D, params: ModelParams) -> GibbsKernel:
    N = table.grid.n_steps
    E = table.propagators
    if E is None:
        E = action_propagators(grid, table.h, params)
    joint = np.empty((N, params.dim, *grid.shape))
    for n in range(N):
        joint[n] = exact_gibbs(table.values[n + 1], table.h, table.lam, grid, params, E)
    return GibbsKernel("exact", table.grid, grid, joint.sum(axis=3), joint.sum(axis=2), joint)


def mean_quote(kernel, n: int, q: int, params: ModelParams) -> Quote:
    m = kernel.mean_quotes(n)[q + params.Q]
    return Quote(float(m[0]), float(m[1]))


def sample_quote(kernel, n: int, q: int, rng: np.random.Generator, params: ModelParams) -> Quote:
    return kernel.sample(n, q + params.Q, float(rng.random()))


# deterministic policies ---------------------------------------------------


def hard_feedback(v0: Trajectory, params: ModelParams) -> DeterministicPolicy:
    """Hard maximiser of ``H_q(v^0(t_n), .)`` held over ``[t_n, t_{n+1})``."""
    N = v0.grid.n_steps
    quotes = np.empty((N, params.dim, 2))
    for n in range(N):
        quotes[n] = hard_hamiltonian_all(v0.values[n], params)[1]
    return DeterministicPolicy(v0.grid, quotes, params, "hard-feedback")


@dataclass(frozen=True)
class PolicySpec:
    """Which policy to build, with its parameters.

    ``variant`` is one of ``hard-feedback``, ``exact-gibbs``,
    ``hamiltonian-gibbs``, ``constant-spread`` or ``inventory-linear``.
    """

    variant: str
    h: float = 0.005
    lam: float = 0.01
    spread: float = 0.3
    slope: float = 0.04
    n_nodes: int = 61
    exact_nodes: int = 17

    VARIANTS = ("hard-feedback", "exact-gibbs", "hamiltonian-gibbs",
                "constant-spread", "inventory-linear")

    def __post_init__(self):
        if self.variant not in self.VARIANTS:
            raise ValueError(f"unknown policy variant {self.variant!r}; "
                             f"expected one of {', '.join(self.VARIANTS)}")


def baseline(spec: PolicySpec, params: ModelParams, grid: TimeGrid | None = None) -> DeterministicPolicy:
    """Constant-spread or inventory-linear quotes, clamped to the quote interval.

    Inventory-linear quotes widen the side that would push inventory further
    from zero: the bid when long, the ask when short.
    """
    grid = grid or TimeGrid.from_step(params.horizon, spec.h)
    q = params.inventories.astype(float)
    if spec.variant == "constant-spread":
        da = db = np.full(params.dim, spec.spread)
    elif spec.variant == "inventory-linear":
        da = spec.spread - spec.slope * q
        db = spec.spread + spec.slope * q
    else:
        raise ValueError(f"{spec.variant!r} is not a baseline variant")
    row = np.column_stack([params.clamp(da), params.clamp(db)])
    quotes = np.broadcast_to(row, (grid.n_steps, params.dim, 2)).copy()
    return DeterministicPolicy(grid, quotes, params, spec.variant)


def build_policy(spec: PolicySpec, params: ModelParams):
    """Construct any of the five policy variants from scratch."""
    from .ode import euler_soft_scheme, solve_hard
    from .bellman import bellman_recursion

    if spec.variant in ("constant-spread", "inventory-linear"):
        return baseline(spec, params)
    if spec.variant == "hard-feedback":
        return hard_feedback(solve_hard(params, spec.h), params)
    if spec.variant == "hamiltonian-gibbs":
        grid = ActionGrid2D.build(spec.n_nodes, params)
        tg = TimeGrid.from_step(params.horizon, spec.h)
        vhat = euler_soft_scheme(spec.lam, tg, grid, params)
        return hamiltonian_gibbs_kernel(vhat, spec.lam, grid, params)
    grid = ActionGrid2D.build(spec.exact_nodes, params)
    table = bellman_recursion(spec.h, spec.lam, grid, params)
    return exact_gibbs_kernel(table, grid, params)


# diagnostics ---------------------------------------------------------------


def _on_grid(v0: Trajectory, grid: TimeGrid) -> Trajectory:
    return v0 if v0.grid.n_steps == grid.n_steps else v0.restrict(grid)


def local_regret(policy, v0: Trajectory, n: int, q: int, params: ModelParams) -> float:
    """``H_q^0(v^0(t_n)) - int H_q(v^0(t_n), delta) pi_{n,q}(d delta)``."""
    y = _on_grid(v0, policy.grid).values[n]
    i = q + params.Q
    hard = hard_hamiltonian_all(y, params)[0][i]
    avg = averaged_hamiltonian(y, policy.marginals(n), params)[i]
    return float(hard - avg)


def quote_concentration_metrics(policy, v0: Trajectory, params: ModelParams) -> tuple[float, float]:
    """Left-Riemann time integrals, summed over inventory, of the active squared
    mean-quote error and of the local regret against the hard solution."""
    v = _on_grid(v0, policy.grid)
    h = policy.grid.h
    sq = 0.0
    regret = 0.0
    act = np.column_stack([params.ask_active, params.bid_active])
    for n in range(policy.grid.n_steps):
        y = v.values[n]
        hard, star = hard_hamiltonian_all(y, params)
        diff = (policy.mean_quotes(n) - star) * act
        sq += h * float(np.sum(diff * diff))
        regret += h * float(np.sum(hard - averaged_hamiltonian(y, policy.marginals(n), params)))
    return sq, regret


class CurvatureCertificate(NamedTuple):
    D_a: float
    D_b: float
    theta_a: float
    theta_b: float
    mu_a: float
    mu_b: float
    holds: bool


def curvature_certificate(v0: Trajectory, params: ModelParams) -> CurvatureCertificate:
    """Sufficient condition for active-coordinate strong concavity with exponential intensities."""
    if not params.is_exponential:
        raise UnsupportedCertificateError("curvature certificate needs exponential intensities")
    V = v0.values
    g = params.gamma
    D_a = params.quote_hi + float(np.max(V[:, :-1] - V[:, 1:]))
    D_b = params.quote_hi + float(np.max(V[:, 1:] - V[:, :-1]))

    def theta(k):
        return 2.0 / g * math.log1p(g / k)

    def mu(alpha, k, D):
        return alpha / g * math.exp(-k * params.quote_hi) * ((k + g) ** 2 * math.exp(-g * D) - k * k)

    th_a, th_b = theta(params.k_a), theta(params.k_b)
    return CurvatureCertificate(D_a, D_b, th_a, th_b,
                                mu(params.alpha_a, params.k_a, D_a),
                                mu(params.alpha_b, params.k_b, D_b),
                                bool(D_a < th_a and D_b < th_b))
