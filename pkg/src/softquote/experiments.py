"""Convergence experiments, log-log slope fitting and report emission."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .bellman import action_propagators, bellman_operator, bellman_recursion
from .model import ModelParams
from .ode import (TimeGrid, euler_soft_scheme, grid_sup_error, policy_evaluation_ode,
                  solve_hard, solve_soft)
from .policies import (PolicySpec, baseline, curvature_certificate, exact_gibbs_kernel,
                       hamiltonian_gibbs_kernel, hard_feedback, mean_curve_csv,
                       quote_concentration_metrics)
from .quadrature import ActionGrid2D, soft_hamiltonian_all
from .simulator import SimConfig, run_monte_carlo

EXPERIMENTS = ("value-convergence", "entropy-bias", "policy-gap", "quote-convergence",
               "exact-consistency", "exact-vs-proxy", "curvature-check", "quadrature-check",
               "gamma-sweep", "simulate")


class UsageError(ValueError):
    pass


# slopes ---------------------------------------------------------------------


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two matching 1-D arrays with at least two points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log slope needs strictly positive data")
    lx, ly = np.log(x), np.log(y)
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def leave_one_out_range(x, y) -> tuple[float, float]:
    """Min and max slope over fits that each drop one grid point."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        s = fit_loglog_slope(x, y)
        return s, s
    s = [fit_loglog_slope(np.delete(x, i), np.delete(y, i)) for i in range(x.size)]
    return min(s), max(s)


def error_scale(h: float, lam: float) -> float:
    return h + lam * (1.0 + abs(math.log(lam)))


# configuration ----------------------------------------------------------------

# Reference values the acceptance checks compare against, keyed by grid point.
DEFAULT_TOLERANCES = {
    "value-convergence": {
        "values": {"0.02": 8.28e-4, "0.01": 4.13e-4, "0.005": 2.06e-4,
                   "0.0025": 1.03e-4, "0.00125": 5.15e-5},
        "rel": 0.02, "slope": 1.0017, "slope_tol": 0.03,
    },
    "entropy-bias": {"max_ratio": 0.8432, "rel": 0.03, "ratio_bound": 1.0},
    "policy-gap": {
        "values": {"0.02,0.05": 0.038608, "0.01,0.02": 0.015652, "0.005,0.01": 0.007809,
                   "0.0025,0.005": 0.003891, "0.00125,0.002": 0.001577},
        "rel": 0.02, "slope": 1.2093, "slope_tol": 0.05,
    },
    "quote-convergence": {
        "sq_error": {"0.02,0.05": 0.238605, "0.01,0.02": 0.088551, "0.005,0.01": 0.039221,
                     "0.0025,0.005": 0.016583, "0.00125,0.002": 0.004985},
        "regret": {"0.02,0.05": 0.418369, "0.01,0.02": 0.188497, "0.005,0.01": 0.102124,
                   "0.0025,0.005": 0.054804, "0.00125,0.002": 0.023593},
        "rel": 0.03, "sq_slope": 1.4627, "regret_slope": 1.0853, "slope_tol": 0.05,
    },
    "exact-consistency": {
        "ratio_lo": 0.085, "ratio_hi": 0.095, "slope": 1.9873, "slope_tol": 0.05,
        "random_slope": 2.0, "random_slope_tol": 0.1,
    },
    "exact-vs-proxy": {
        "value_gap": {"0.05": 7.13e-4, "0.025": 3.50e-4, "0.0125": 1.73e-4, "0.00625": 8.60e-5},
        "rel": 0.03, "value_slope": 1.0154, "quote_slope": 2.1205, "ce_slope": 0.9836,
        "slope_tol": 0.1, "ce_diff_max": 1.1e-5, "ce_diff_at": 0.05,
    },
    "curvature-check": {"D": 1.0654, "theta": 1.2908, "mu": 0.2692, "abs": 1e-3},
    "quadrature-check": {"max_dev": 1e-10},
    "gamma-sweep": {"max_value_constant": 0.8726, "rel": 0.03},
    "simulate": {"n_se": 3.0},
}


@dataclass
class ExperimentConfig:
    name: str = "value-convergence"
    params: dict = field(default_factory=dict)
    h_list: tuple = (0.02, 0.01, 0.005, 0.0025, 0.00125)
    value_lam: float = 0.005
    lam_list: tuple = (0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 0.0005)
    coupled_path: tuple = ((0.02, 0.05), (0.01, 0.02), (0.005, 0.01), (0.0025, 0.005),
                           (0.00125, 0.002))
    exact_h_list: tuple = (0.05, 0.025, 0.0125, 0.00625)
    exact_lam: float = 0.02
    consistency_phi: str = "terminal"  # "terminal", "euler-step" or "zero"
    random_phi_count: int = 5
    exact_vs_proxy_horizon: float | None = 0.25
    gamma_list: tuple = (0.01, 0.02, 0.05, 0.10, 0.20, 0.50, 1.0, 2.0, 5.0, 10.0)
    gamma_h: float = 0.0025
    gamma_lam: float = 0.005
    n_nodes: int = 61
    exact_nodes: int = 17
    quad_nodes: tuple = (21, 41, 81, 161)
    quad_ref_nodes: int = 321
    quad_lam: float = 0.005
    sim_h: float = 0.005
    sim_lam: float = 0.01
    paths: int = 5000
    seed: int = 12345
    threads: int = 1
    out: str | None = None
    tolerances: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_TOLERANCES)))

    def __post_init__(self):
        for name in ("h_list", "lam_list", "coupled_path", "exact_h_list", "gamma_list", "quad_nodes"):
            val = getattr(self, name)
            if len(val) == 0:
                raise ValueError(f"{name} must be nonempty")
            setattr(self, name, tuple(tuple(v) if isinstance(v, list) else v for v in val))
        if len(set(self.coupled_path)) != len(self.coupled_path):
            raise ValueError("coupled path entries must be distinct")
        if self.consistency_phi not in ("terminal", "euler-step", "zero"):
            raise ValueError(f"unknown consistency_phi {self.consistency_phi!r}")

    @classmethod
    def from_dict(cls, data: dict, name: str | None = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if "tolerances" in data:
            tol = json.loads(json.dumps(DEFAULT_TOLERANCES))
            for exp, over in data["tolerances"].items():
                tol.setdefault(exp, {}).update(over)
            data["tolerances"] = tol
        if name is not None:
            data["name"] = name
        return cls(**data)

    def model(self) -> ModelParams:
        return ModelParams.from_dict(self.params)

    def tol(self, key: str | None = None) -> dict:
        return self.tolerances.get(key or self.name, {})


# reports ----------------------------------------------------------------------


@dataclass
class ReportTable:
    name: str
    caption: str
    columns: list
    rows: list = field(default_factory=list)

    def __post_init__(self):
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError("table rows must match the column count")

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError("table rows must match the column count")
        self.rows.append(list(row))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_dict(self) -> dict:
        return {"name": self.name, "caption": self.caption, "columns": list(self.columns),
                "data": [[_jsonable(v) for v in r] for r in self.rows]}


@dataclass
class Check:
    name: str
    value: object
    tolerance: dict
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "value": _jsonable(self.value),
                "tolerance": self.tolerance, "pass": bool(self.passed)}


@dataclass
class ExperimentReport:
    experiment: str
    params: dict
    tables: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)  # (filename, writer(path))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def table(self, name: str) -> ReportTable:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def add_slope(self, name: str, table: ReportTable, xcol: str, ycol: str) -> float:
        x = table.column(xcol)
        y = table.column(ycol)
        s = fit_loglog_slope(x, y)
        lo, hi = leave_one_out_range(x, y)
        self.slopes[name] = {"value": s, "table": table.name, "x": xcol, "y": ycol,
                             "x_values": [float(v) for v in x], "y_values": [float(v) for v in y],
                             "leave_one_out": [lo, hi]}
        return s

    def check(self, name, value, tolerance: dict, passed: bool):
        self.checks.append(Check(name, value, tolerance, bool(passed)))

    def check_rel(self, name, value, target, rel):
        self.check(name, value, {"target": target, "rel": rel},
                   abs(value - target) <= rel * abs(target))

    def check_abs(self, name, value, target, tol):
        self.check(name, value, {"target": target, "abs": tol}, abs(value - target) <= tol)

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "params": self.params,
                "tables": [t.to_dict() for t in self.tables],
                "slopes": self.slopes, "checks": [c.to_dict() for c in self.checks],
                "pass": self.passed}


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    return v


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit_report(report: ExperimentReport, out_dir) -> list[str]:
    """Write one CSV per table, any extra artifacts and ``summary.json``."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for t in report.tables:
        path = os.path.join(out_dir, f"{t.name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(t.columns)
            for r in t.rows:
                w.writerow([_fmt(v) for v in r])
        written.append(path)
    for fname, writer in report.artifacts:
        path = os.path.join(out_dir, fname)
        writer(path)
        written.append(path)
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    written.append(path)
    return written


# helpers ------------------------------------------------------------------------


def _pmap(fn: Callable, items, threads: int) -> list:
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _ref(refs: dict, *xs):
    """Reference value for a grid point, matching keys numerically."""
    for k, v in refs.items():
        ks = [float(s) for s in k.split(",")]
        if len(ks) == len(xs) and all(abs(a - b) <= 1e-12 for a, b in zip(ks, xs)):
            return v
    return None


def _center(params: ModelParams, traj) -> float:
    return float(traj.initial[params.Q])


# experiment branches -------------------------------------------------------------


def _value_convergence(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    lam = cfg.value_lam
    grid = ActionGrid2D.build(cfg.n_nodes, p)
    tol = cfg.tol()
    t = ReportTable("value_convergence", f"sup-norm error of the Euler soft scheme, lambda={lam}",
                    ["h", "lambda", "error"])

    def point(h):
        ref = solve_soft(p, lam, grid, h)
        vhat = euler_soft_scheme(lam, TimeGrid.from_step(p.horizon, h), grid, p)
        return vhat, grid_sup_error(vhat, ref)

    results = _pmap(point, cfg.h_list, cfg.threads)
    for h, (_, e) in zip(cfg.h_list, results):
        t.add(h, lam, e)
        target = _ref(tol.get("values", {}), h)
        if target is not None:
            rep.check_rel(f"error h={h}", e, target, tol["rel"])
    rep.tables.append(t)
    finest_h = cfg.h_list[-1]
    vhat = results[-1][0]
    rep.artifacts.append((f"trajectory_h{finest_h}.csv", lambda path: vhat.to_csv(path, p)))
    if len(cfg.h_list) >= 2:
        s = rep.add_slope("h", t, "h", "error")
        rep.check_abs("slope", s, tol["slope"], tol["slope_tol"])


def _entropy_bias(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    grid = ActionGrid2D.build(cfg.n_nodes, p)
    tol = cfg.tol()
    v0 = solve_hard(p)
    t = ReportTable("entropy_bias", "soft-to-hard value bias and its normalised ratio",
                    ["lambda", "error", "ratio"])

    def point(lam):
        return grid_sup_error(solve_soft(p, lam, grid), v0)

    for lam, e in zip(cfg.lam_list, _pmap(point, cfg.lam_list, cfg.threads)):
        t.add(lam, e, e / (lam * (1.0 + abs(math.log(lam)))))
    rep.tables.append(t)
    ratios = t.column("ratio")
    rep.check_rel("max ratio", max(ratios), tol["max_ratio"], tol["rel"])
    rep.check("ratio bounded", max(ratios), {"max": tol["ratio_bound"]},
              all(np.isfinite(ratios)) and max(ratios) <= tol["ratio_bound"])
    if len(cfg.lam_list) >= 2:
        rep.add_slope("lambda", t, "lambda", "error")


def _hamiltonian_policy(p, h, lam, grid):
    vhat = euler_soft_scheme(lam, TimeGrid.from_step(p.horizon, h), grid, p)
    return hamiltonian_gibbs_kernel(vhat, lam, grid, p)


def _policy_gap(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    grid = ActionGrid2D.build(cfg.n_nodes, p)
    tol = cfg.tol()
    v_star = _center(p, solve_hard(p))

    def point(hl):
        h, lam = hl
        return v_star - _center(p, policy_evaluation_ode(_hamiltonian_policy(p, h, lam, grid), p))

    t = ReportTable("policy_gap", "certainty-equivalent gap of the Hamiltonian-Gibbs policy",
                    ["h", "lambda", "scale", "ce_gap"])
    for (h, lam), g in zip(cfg.coupled_path, _pmap(point, cfg.coupled_path, cfg.threads)):
        t.add(h, lam, error_scale(h, lam), g)
        target = _ref(tol.get("values", {}), h, lam)
        if target is not None:
            rep.check_rel(f"gap h={h} lambda={lam}", g, target, tol["rel"])
    rep.tables.append(t)
    if len(t.rows) >= 2:
        s = rep.add_slope("scale", t, "scale", "ce_gap")
        rep.check_abs("slope", s, tol["slope"], tol["slope_tol"])


def _quote_convergence(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    grid = ActionGrid2D.build(cfg.n_nodes, p)
    tol = cfg.tol()

    def point(hl):
        h, lam = hl
        pol = _hamiltonian_policy(p, h, lam, grid)
        return pol, quote_concentration_metrics(pol, solve_hard(p, h), p)

    t = ReportTable("quote_convergence", "active squared mean-quote error and Hamiltonian regret",
                    ["h", "lambda", "scale", "sq_error", "regret"])
    results = _pmap(point, cfg.coupled_path, cfg.threads)
    for (h, lam), (pol, (sq, rg)) in zip(cfg.coupled_path, results):
        t.add(h, lam, error_scale(h, lam), sq, rg)
        for col, val in (("sq_error", sq), ("regret", rg)):
            target = _ref(tol.get(col, {}), h, lam)
            if target is not None:
                rep.check_rel(f"{col} h={h} lambda={lam}", val, target, tol["rel"])
        rep.artifacts.append((f"mean_quotes_h{h}_lam{lam}.csv",
                              lambda path, pol=pol: mean_curve_csv(pol, path, p)))
    rep.tables.append(t)
    if len(t.rows) >= 2:
        s1 = rep.add_slope("sq_error", t, "scale", "sq_error")
        s2 = rep.add_slope("regret", t, "scale", "regret")
        rep.check_abs("sq_error slope", s1, tol["sq_slope"], tol["slope_tol"])
        rep.check_abs("regret slope", s2, tol["regret_slope"], tol["slope_tol"])


def consistency_error(phi, h: float, lam: float, grid: ActionGrid2D, params: ModelParams,
                      propagators=None) -> float:
    """``|| T_h phi - phi - h H^lam(phi) ||_inf``."""
    phi = np.asarray(phi, dtype=float)
    T = bellman_operator(phi, h, lam, grid, params, propagators)
    return float(np.max(np.abs(T - phi - h * soft_hamiltonian_all(phi, lam, grid, params))))


def _consistency_phi(cfg, p, h, lam, grid):
    if cfg.consistency_phi == "terminal":
        return p.terminal_values()
    if cfg.consistency_phi == "zero":
        return np.zeros(p.dim)
    return p.terminal_values() + h * soft_hamiltonian_all(p.terminal_values(), lam, grid, p)


def _exact_consistency(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    lam = cfg.exact_lam
    grid = ActionGrid2D.build(cfg.exact_nodes, p)
    tol = cfg.tol()
    rng = np.random.default_rng(cfg.seed)
    random_phis = [-rng.random(p.dim) for _ in range(cfg.random_phi_count)]
    t = ReportTable("exact_consistency", f"one-step consistency of the exact operator, lambda={lam}",
                    ["h", "error", "error_over_h2"])
    tr = ReportTable("exact_consistency_random_phi", "same check on random bounded test vectors",
                     ["phi_index", "h", "error"])

    def point(h):
        E = action_propagators(grid, h, p)
        e = consistency_error(_consistency_phi(cfg, p, h, lam, grid), h, lam, grid, p, E)
        return e, [consistency_error(phi, h, lam, grid, p, E) for phi in random_phis]

    results = _pmap(point, cfg.exact_h_list, cfg.threads)
    for h, (e, _) in zip(cfg.exact_h_list, results):
        r = e / h**2
        t.add(h, e, r)
        rep.check(f"error/h^2 h={h}", r, {"min": tol["ratio_lo"], "max": tol["ratio_hi"]},
                  tol["ratio_lo"] <= r <= tol["ratio_hi"])
    rep.tables.append(t)
    for i in range(len(random_phis)):
        for h, (_, es) in zip(cfg.exact_h_list, results):
            tr.add(i, h, es[i])
    rep.tables.append(tr)
    if len(cfg.exact_h_list) >= 2:
        s = rep.add_slope("h", t, "h", "error")
        rep.check_abs("slope", s, tol["slope"], tol["slope_tol"])
        hs = list(cfg.exact_h_list)
        for i in range(len(random_phis)):
            es = [r[1][i] for r in results]
            si = fit_loglog_slope(hs, es)
            rep.slopes[f"random_phi_{i}"] = {"value": si, "table": tr.name, "x": "h", "y": "error",
                                             "x_values": hs, "y_values": es,
                                             "leave_one_out": list(leave_one_out_range(hs, es))}
            rep.check_abs(f"random phi {i} slope", si, tol["random_slope"], tol["random_slope_tol"])


def _exact_vs_proxy(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    if cfg.exact_vs_proxy_horizon is not None:
        p = p.with_(horizon=cfg.exact_vs_proxy_horizon)
        rep.params = p.to_dict()
    lam = cfg.exact_lam
    grid = ActionGrid2D.build(cfg.exact_nodes, p)
    tol = cfg.tol()
    v_star = _center(p, solve_hard(p))
    act = np.column_stack([p.ask_active, p.bid_active])

    def point(h):
        table = bellman_recursion(h, lam, grid, p)
        vhat = euler_soft_scheme(lam, table.grid, grid, p)
        exact = exact_gibbs_kernel(table, grid, p)
        proxy = hamiltonian_gibbs_kernel(vhat, lam, grid, p)
        value_gap = float(np.max(np.abs(table.values - vhat.values)))
        quote_gap = 0.0
        for n in range(table.grid.n_steps):
            d = (exact.mean_quotes(n) - proxy.mean_quotes(n)) * act
            quote_gap += h * float(np.sum(d * d))
        ce_exact = _center(p, policy_evaluation_ode(exact, p))
        ce_proxy = _center(p, policy_evaluation_ode(proxy, p))
        return table, exact, proxy, value_gap, quote_gap, ce_exact, ce_proxy

    t = ReportTable("exact_vs_proxy", f"exact Bellman Gibbs policy versus Hamiltonian-Gibbs proxy, "
                    f"lambda={lam}, horizon={p.horizon}",
                    ["h", "value_gap", "quote_gap_sq", "exact_ce_gap", "proxy_ce_gap", "exact_proxy_ce_gap"])
    results = _pmap(point, cfg.exact_h_list, cfg.threads)
    for h, (table, exact, proxy, vg, qg, ce_e, ce_p) in zip(cfg.exact_h_list, results):
        t.add(h, vg, qg, v_star - ce_e, v_star - ce_p, ce_e - ce_p)
        target = _ref(tol.get("value_gap", {}), h)
        if target is not None:
            rep.check_rel(f"value gap h={h}", vg, target, tol["rel"])
        if abs(h - tol["ce_diff_at"]) <= 1e-12:
            rep.check("exact-proxy ce gap h={}".format(h), ce_e - ce_p, {"max": tol["ce_diff_max"]},
                      abs(ce_e - ce_p) <= tol["ce_diff_max"])
    rep.tables.append(t)
    table, exact, proxy = results[0][:3]
    h0 = cfg.exact_h_list[0]
    rep.artifacts.append((f"bellman_table_h{h0}.csv", lambda path: table.to_csv(path, p)))
    rep.artifacts.append((f"exact_kernel_h{h0}.csv", lambda path: exact.to_csv(path, p)))
    rep.artifacts.append((f"proxy_kernel_h{h0}.csv", lambda path: proxy.to_csv(path, p)))
    if len(t.rows) >= 2:
        for name, col, key in (("value_gap", "value_gap", "value_slope"),
                               ("quote_gap", "quote_gap_sq", "quote_slope"),
                               ("ce_gap", "exact_proxy_ce_gap", "ce_slope")):
            s = rep.add_slope(name, t, "h", col)
            rep.check_abs(f"{name} slope", s, tol[key], tol["slope_tol"])


def _curvature_check(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    tol = cfg.tol()
    c = curvature_certificate(solve_hard(p), p)
    t = ReportTable("curvature", "curvature certificate for active-coordinate concavity",
                    ["side", "D", "theta", "mu", "holds"])
    t.add("ask", c.D_a, c.theta_a, c.mu_a, c.holds)
    t.add("bid", c.D_b, c.theta_b, c.mu_b, c.holds)
    rep.tables.append(t)
    for side, D, th, mu in (("ask", c.D_a, c.theta_a, c.mu_a), ("bid", c.D_b, c.theta_b, c.mu_b)):
        rep.check_abs(f"D {side}", D, tol["D"], tol["abs"])
        rep.check_abs(f"theta {side}", th, tol["theta"], tol["abs"])
        rep.check_abs(f"mu {side}", mu, tol["mu"], tol["abs"])
    rep.check("holds", c.holds, {"equals": True}, c.holds)


def _quadrature_check(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    lam = cfg.quad_lam
    tol = cfg.tol()
    states = solve_soft(p, lam, ActionGrid2D.build(cfg.n_nodes, p)).values
    ref_grid = ActionGrid2D.build(cfg.quad_ref_nodes, p)
    ref = np.array([soft_hamiltonian_all(y, lam, ref_grid, p) for y in states])
    t = ReportTable("quadrature", f"soft Hamiltonian deviation from {cfg.quad_ref_nodes} nodes "
                    f"along the soft value trajectory, lambda={lam}", ["nodes", "max_deviation"])
    for n in cfg.quad_nodes:
        g = ActionGrid2D.build(n, p)
        dev = float(np.max(np.abs(np.array([soft_hamiltonian_all(y, lam, g, p) for y in states]) - ref)))
        t.add(n, dev)
    rep.tables.append(t)
    worst = max(t.column("max_deviation"))
    rep.check("max deviation", worst, {"max": tol["max_dev"]}, worst <= tol["max_dev"])


def _gamma_sweep(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    h, lam = cfg.gamma_h, cfg.gamma_lam
    tol = cfg.tol()
    scale = error_scale(h, lam)

    def point(g):
        pg = p.with_(gamma=g)
        grid = ActionGrid2D.build(cfg.n_nodes, pg)
        v0 = solve_hard(pg, h)
        vhat = euler_soft_scheme(lam, v0.grid, grid, pg)
        pol = hamiltonian_gibbs_kernel(vhat, lam, grid, pg)
        gap = _center(pg, v0) - _center(pg, policy_evaluation_ode(pol, pg))
        return grid_sup_error(vhat, v0) / scale, gap / scale

    t = ReportTable("gamma_sweep", f"empirical error constants over risk aversion, h={h}, lambda={lam}",
                    ["gamma", "value_constant", "policy_constant"])
    for g, (cv, cp) in zip(cfg.gamma_list, _pmap(point, cfg.gamma_list, cfg.threads)):
        t.add(g, cv, cp)
    rep.tables.append(t)
    rep.check_rel("max value constant", max(t.column("value_constant")),
                  tol["max_value_constant"], tol["rel"])


def _simulate(cfg: ExperimentConfig, rep: ExperimentReport, p: ModelParams):
    tol = cfg.tol()
    h, lam = cfg.sim_h, cfg.sim_lam
    grid = ActionGrid2D.build(cfg.n_nodes, p)
    v0 = solve_hard(p, h)
    hard = hard_feedback(v0, p)
    proxy = _hamiltonian_policy(p, h, lam, grid)
    strategies = [("hard-feedback", hard), ("hamiltonian-gibbs", proxy),
                  ("constant-spread", baseline(PolicySpec("constant-spread", h=h), p)),
                  ("inventory-linear", baseline(PolicySpec("inventory-linear", h=h), p))]
    mc = run_monte_carlo(strategies, p, SimConfig(n_paths=cfg.paths, seed=cfg.seed, threads=cfg.threads))
    t = ReportTable("diagnostics", f"fresh-sampling Monte Carlo, {cfg.paths} paths, seed {cfg.seed}",
                    ["strategy", "ce", "mean_reward", "std_reward", "sharpe", "mean_pnl",
                     "time_avg_q2", "ce_se", "ode_value"])
    ode = {"hard-feedback": _center(p, v0),
           "hamiltonian-gibbs": _center(p, policy_evaluation_ode(proxy, p))}
    for r in mc.rows:
        t.add(r.strategy, r.ce, r.mean_reward, r.std_reward, r.sharpe, r.mean_pnl,
              r.time_avg_q2, r.ce_se, ode.get(r.strategy, float("nan")))
    rep.tables.append(t)
    rep.artifacts.append(("rewards.csv", mc.rewards_to_csv))
    n_se = tol["n_se"]
    for name, val in ode.items():
        r = mc.row(name)
        z = abs(r.ce - val) / r.ce_se
        rep.check(f"{name} ce vs ode", z, {"max_standard_errors": n_se}, z <= n_se)
    hard_q2 = mc.row("hard-feedback").time_avg_q2
    for name in ("constant-spread", "inventory-linear"):
        r = mc.row(name)
        rep.check(f"{name} ce <= mean reward", r.ce - r.mean_reward, {"max": 0.0}, r.ce <= r.mean_reward)
        rep.check(f"{name} time-avg q2 above hard", r.time_avg_q2 - hard_q2, {"min": 0.0},
                  r.time_avg_q2 > hard_q2)


_BRANCHES = {
    "value-convergence": _value_convergence,
    "entropy-bias": _entropy_bias,
    "policy-gap": _policy_gap,
    "quote-convergence": _quote_convergence,
    "exact-consistency": _exact_consistency,
    "exact-vs-proxy": _exact_vs_proxy,
    "curvature-check": _curvature_check,
    "quadrature-check": _quadrature_check,
    "gamma-sweep": _gamma_sweep,
    "simulate": _simulate,
}


def run_experiment(name: str, config: ExperimentConfig | None = None) -> ExperimentReport:
    if name not in _BRANCHES:
        raise UsageError(f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")
    cfg = replace(config, name=name) if config is not None else ExperimentConfig(name=name)
    p = cfg.model()
    rep = ExperimentReport(name, p.to_dict())
    _BRANCHES[name](cfg, rep, p)
    return rep
