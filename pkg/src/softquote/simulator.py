"""Fresh-sampling marked-Poisson simulation by thinning, with common random numbers.

Each path owns independent counter-based (Philox) streams keyed by
``(seed, path_index, stream_id)``.  All strategies on a path replay the same
Brownian increments, the same dominating proposal times and the same
mark/acceptance uniforms, indexed by proposal ordinal.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import ASK, BID, ModelParams
from .ode import H_REF

BROWNIAN, ASK_PROPOSALS, BID_PROPOSALS, ASK_MARKS, BID_MARKS = range(5)


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 5000
    seed: int = 12345
    h_sub: float | None = None  # Brownian substep; defaults to min(policy step, 1e-3)
    threads: int = 1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("need at least one path")


@dataclass
class PathOutcome:
    reward: float
    pnl: float
    time_avg_q2: float
    cash: float
    inventory: int
    midprice: float
    fills_a: int = 0
    fills_b: int = 0
    spread_income: float = 0.0
    inventory_pnl: float = 0.0
    running_penalty: float = 0.0


@dataclass
class DiagnosticsRow:
    strategy: str
    ce: float
    mean_reward: float
    std_reward: float
    sharpe: float
    mean_pnl: float
    time_avg_q2: float
    ce_se: float = float("nan")
    mean_fills_a: float = float("nan")
    mean_fills_b: float = float("nan")

    COLUMNS = ("strategy", "ce", "mean_reward", "std_reward", "sharpe", "mean_pnl", "time_avg_q2")


@dataclass
class MonteCarloResult:
    rows: list[DiagnosticsRow]
    rewards: dict[str, np.ndarray] = field(repr=False)
    outcomes: dict[str, list[PathOutcome]] = field(repr=False, default_factory=dict)

    def row(self, name: str) -> DiagnosticsRow:
        for r in self.rows:
            if r.strategy == name:
                return r
        raise KeyError(name)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DiagnosticsRow.COLUMNS)
            for r in self.rows:
                w.writerow([r.strategy] + [repr(float(getattr(r, c))) for c in DiagnosticsRow.COLUMNS[1:]])

    def rewards_to_csv(self, path):
        names = list(self.rewards)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path"] + names)
            for i in range(len(self.rewards[names[0]])):
                w.writerow([i] + [repr(float(self.rewards[n][i])) for n in names])


def stream(seed: int, path_index: int, stream_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, path_index, stream_id])))


def ce_from_samples(rewards, gamma: float) -> float:
    """``-(1/gamma) log mean exp(-gamma R)``, max-shifted."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("certainty equivalent of an empty sample")
    z = -gamma * r
    m = z.max()
    return float(-(m + math.log(np.mean(np.exp(z - m)))) / gamma)


def ce_standard_error(rewards, gamma: float) -> float:
    """Delta-method standard error of :func:`ce_from_samples`."""
    r = np.asarray(rewards, dtype=float)
    z = np.exp(-gamma * (r - r.min()))
    return float(np.std(z, ddof=1) / (math.sqrt(r.size) * np.mean(z)) / gamma)


class _PathNoise:
    """All randomness of one path, shared by every strategy."""

    def __init__(self, params: ModelParams, seed: int, path_index: int, h_sub: float):
        T = params.horizon
        lam_bar = params.max_intensity
        self.times = {}
        self.marks = {}
        for side, sid, mid in ((ASK, ASK_PROPOSALS, ASK_MARKS), (BID, BID_PROPOSALS, BID_MARKS)):
            g = stream(seed, path_index, sid)
            n = int(g.poisson(lam_bar * T))
            self.times[side] = np.sort(g.random(n) * T)
            self.marks[side] = stream(seed, path_index, mid).random((n, 2))
        ev = [(t, ASK, k) for k, t in enumerate(self.times[ASK])]
        ev += [(t, BID, k) for k, t in enumerate(self.times[BID])]
        ev.sort()
        self.events = ev
        n_sub = max(1, round(T / h_sub))
        grid = np.linspace(0.0, T, n_sub + 1)
        ev_t = np.array([e[0] for e in ev])
        merged = np.union1d(grid, ev_t)
        dW = stream(seed, path_index, BROWNIAN).standard_normal(merged.size - 1) * np.sqrt(np.diff(merged))
        W = np.concatenate([[0.0], np.cumsum(dW)])
        self.W_events = W[np.searchsorted(merged, ev_t)] if ev else np.empty(0)
        self.W_T = W[-1]
        self.lam_bar = lam_bar


def _run_strategy(policy, noise: _PathNoise, params: ModelParams, q0: int = 0) -> PathOutcome:
    T = params.horizon
    Q = params.Q
    sig = params.sigma
    q = q0
    X = 0.0
    t_prev = 0.0
    W_prev = 0.0
    q2int = 0.0
    bro = 0.0
    income = 0.0
    fa = fb = 0
    for (t, side, k), W in zip(noise.events, noise.W_events):
        dt = t - t_prev
        q2int += q * q * dt
        bro += q * sig * (W - W_prev)
        t_prev, W_prev = t, W
        if side == ASK and q <= -Q:
            continue
        if side == BID and q >= Q:
            continue
        u_mark, u_acc = noise.marks[side][k]
        n = policy.grid.index_of(t)
        quote = policy.sample(n, q + Q, u_mark)
        S = sig * W
        if side == ASK:
            d = quote[0]
            if u_acc * noise.lam_bar < params.side_intensity(ASK, d):
                X += S + d
                q -= 1
                income += d
                fa += 1
        else:
            d = quote[1]
            if u_acc * noise.lam_bar < params.side_intensity(BID, d):
                X -= S - d
                q += 1
                income += d
                fb += 1
    dt = T - t_prev
    q2int += q * q * dt
    bro += q * sig * (noise.W_T - W_prev)
    S_T = sig * noise.W_T
    pnl = X + q * S_T
    pen = params.eta * q2int
    reward = pnl - params.phi * q * q - pen
    return PathOutcome(reward, pnl, q2int / T, X, q, S_T, fa, fb, income, bro, pen)


def _sub_step(policies, params: ModelParams, config: SimConfig) -> float:
    if config.h_sub is not None:
        return config.h_sub
    h = min(p.grid.h for p in policies)
    return min(h, H_REF)


def simulate_path(policy, params: ModelParams, config: SimConfig, path_index: int) -> PathOutcome:
    policy.validate()
    noise = _PathNoise(params, config.seed, path_index, _sub_step([policy], params, config))
    return _run_strategy(policy, noise, params)


def _simulate_block(policies, params, config, h_sub, indices):
    out = []
    for i in indices:
        noise = _PathNoise(params, config.seed, i, h_sub)
        out.append([_run_strategy(p, noise, params) for p in policies])
    return out


def run_monte_carlo(strategies, params: ModelParams, config: SimConfig,
                    keep_outcomes: bool = False) -> MonteCarloResult:
    """Simulate every strategy on common paths; ``strategies`` is a list of (name, policy)."""
    if not strategies:
        raise ValueError("need at least one strategy")
    names = [s[0] for s in strategies]
    policies = [s[1] for s in strategies]
    for p in policies:
        p.validate()
    h_sub = _sub_step(policies, params, config)
    idx = np.arange(config.n_paths)
    if config.threads > 1:
        blocks = np.array_split(idx, config.threads)
        with ThreadPoolExecutor(config.threads) as ex:
            parts = list(ex.map(lambda b: _simulate_block(policies, params, config, h_sub, b), blocks))
        per_path = [row for part in parts for row in part]
    else:
        per_path = _simulate_block(policies, params, config, h_sub, idx)

    rows = []
    rewards = {}
    outcomes = {}
    for j, name in enumerate(names):
        res = [pp[j] for pp in per_path]
        R = np.array([r.reward for r in res])
        pnl = np.array([r.pnl for r in res])
        q2 = np.array([r.time_avg_q2 for r in res])
        mean = float(np.mean(R))
        std = float(np.std(R, ddof=1)) if R.size > 1 else 0.0
        rows.append(DiagnosticsRow(
            strategy=name,
            ce=ce_from_samples(R, params.gamma),
            mean_reward=mean,
            std_reward=std,
            sharpe=mean / std if std > 0 else float("nan"),
            mean_pnl=float(np.mean(pnl)),
            time_avg_q2=float(np.mean(q2)),
            ce_se=ce_standard_error(R, params.gamma) if R.size > 1 else float("nan"),
            mean_fills_a=float(np.mean([r.fills_a for r in res])),
            mean_fills_b=float(np.mean([r.fills_b for r in res])),
        ))
        rewards[name] = R
        if keep_outcomes:
            outcomes[name] = res
    return MonteCarloResult(rows, rewards, outcomes)
