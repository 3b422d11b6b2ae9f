"""Finite-inventory market-making model: parameters, intensities and the
deterministic-action Hamiltonian.

Value vectors are plain float arrays of length ``2Q + 1``; entry ``i``
holds inventory ``q = i - Q``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

ASK = "ask"
BID = "bid"
SIDES = (ASK, BID)


class Quote(NamedTuple):
    delta_a: float
    delta_b: float


@dataclass(frozen=True)
class ModelParams:
    """Market and penalty parameters.

    Defaults are the baseline configuration used throughout the experiments.
    ``intensity_fns`` optionally replaces the exponential family by a pair of
    vectorised callables ``(ask, bid)``; the exponential parameters are then
    ignored for intensity evaluation.
    """

    horizon: float = 1.0
    inventory_bound: int = 5
    sigma: float = 0.20
    gamma: float = 0.10
    phi: float = 0.02
    eta: float = 0.005
    quote_lo: float = 0.01
    quote_hi: float = 0.70
    alpha_a: float = 1.5
    alpha_b: float = 1.5
    k_a: float = 1.5
    k_b: float = 1.5
    intensity_fns: Optional[tuple[Callable, Callable]] = field(
        default=None, compare=False, repr=False
    )

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.inventory_bound) != self.inventory_bound or self.inventory_bound < 1:
            raise ValueError("inventory_bound must be an integer >= 1")
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.phi < 0 or self.eta < 0:
            raise ValueError("penalties must be nonnegative")
        if not self.quote_lo < self.quote_hi:
            raise ValueError("quote_lo must be below quote_hi")
        for name in ("alpha_a", "alpha_b", "k_a", "k_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    # construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        known = {f.name for f in fields(cls)} - {"intensity_fns"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model parameters: {sorted(unknown)}")
        kwargs = dict(data)
        if "inventory_bound" in kwargs:
            kwargs["inventory_bound"] = int(kwargs["inventory_bound"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("intensity_fns")
        return d

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    # derived quantities -----------------------------------------------

    @property
    def Q(self) -> int:
        return int(self.inventory_bound)

    @property
    def dim(self) -> int:
        return 2 * self.Q + 1

    @property
    def inventories(self) -> np.ndarray:
        return np.arange(-self.Q, self.Q + 1)

    @property
    def is_exponential(self) -> bool:
        return self.intensity_fns is None

    @property
    def ask_active(self) -> np.ndarray:
        """Rows where an ask fill (q -> q-1) is possible."""
        return self.inventories > -self.Q

    @property
    def bid_active(self) -> np.ndarray:
        return self.inventories < self.Q

    def terminal_values(self) -> np.ndarray:
        q = self.inventories
        return -self.phi * q.astype(float) ** 2

    def running_penalty(self) -> np.ndarray:
        """The quote-independent part of the Hamiltonian, per inventory."""
        q2 = self.inventories.astype(float) ** 2
        return -self.eta * q2 - 0.5 * self.gamma * self.sigma**2 * q2

    def side_intensity(self, side: str, delta):
        """Vectorised intensity without range checks."""
        delta = np.asarray(delta, dtype=float)
        if self.intensity_fns is not None:
            fn = self.intensity_fns[0 if side == ASK else 1]
            return np.asarray(fn(delta), dtype=float)
        if side == ASK:
            return self.alpha_a * np.exp(-self.k_a * delta)
        if side == BID:
            return self.alpha_b * np.exp(-self.k_b * delta)
        raise ValueError(f"side must be 'ask' or 'bid', got {side!r}")

    @property
    def max_intensity(self) -> float:
        """Dominating rate over the quote interval, both sides."""
        if self.is_exponential:
            return float(max(self.alpha_a * np.exp(-self.k_a * self.quote_lo),
                             self.alpha_b * np.exp(-self.k_b * self.quote_lo)))
        grid = np.linspace(self.quote_lo, self.quote_hi, 4001)
        return float(max(self.side_intensity(ASK, grid).max(),
                         self.side_intensity(BID, grid).max()))

    def clamp(self, delta):
        return np.clip(delta, self.quote_lo, self.quote_hi)


def _check_index(q: int, params: ModelParams) -> int:
    if int(q) != q or abs(q) > params.Q:
        raise IndexError(f"inventory {q} outside [-{params.Q}, {params.Q}]")
    return int(q) + params.Q


def _check_values(y, params: ModelParams) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (params.dim,):
        raise ValueError(f"value vector must have length {params.dim}, got shape {y.shape}")
    return y


def intensity(side: str, delta: float, params: ModelParams) -> float:
    """Arrival intensity of fills on ``side`` for quote offset ``delta``."""
    if side not in SIDES:
        raise ValueError(f"side must be 'ask' or 'bid', got {side!r}")
    if not params.quote_lo <= delta <= params.quote_hi:
        raise ValueError(
            f"quote {delta} outside [{params.quote_lo}, {params.quote_hi}]"
        )
    return float(params.side_intensity(side, delta))


def neighbour_differences(y: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(y_{q-1} - y_q, y_{q+1} - y_q)`` with zeros on masked rows."""
    d_a = np.zeros(params.dim)
    d_b = np.zeros(params.dim)
    d_a[1:] = y[:-1] - y[1:]
    d_b[:-1] = y[1:] - y[:-1]
    return d_a, d_b


def jump_increments(q: int, y, delta: Quote, params: ModelParams) -> tuple[float, float]:
    i = _check_index(q, params)
    y = _check_values(y, params)
    da = delta[0] + y[i - 1] - y[i] if q > -params.Q else 0.0
    db = delta[1] + y[i + 1] - y[i] if q < params.Q else 0.0
    return float(da), float(db)


def side_gains(y, nodes, side: str, params: ModelParams) -> np.ndarray:
    """Fill term of the Hamiltonian on one side, for every inventory row.

    Returns an array of shape ``(2Q+1, len(nodes))``; masked rows are zero.
    ``nodes`` may also be 2-D with one row of quotes per inventory.
    """
    y = np.asarray(y, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    d_a, d_b = neighbour_differences(y, params)
    diff, active = (d_a, params.ask_active) if side == ASK else (d_b, params.bid_active)
    if nodes.ndim == 1:
        nodes = np.broadcast_to(nodes, (params.dim, nodes.size))
    lam = params.side_intensity(side, nodes)
    g = params.gamma
    out = lam / g * -np.expm1(-g * (nodes + diff[:, None]))
    out[~active] = 0.0
    return out


def hamiltonian(q: int, y, delta: Quote, params: ModelParams) -> float:
    """Deterministic-action Hamiltonian ``H_q(y, delta)``."""
    i = _check_index(q, params)
    y = _check_values(y, params)
    ga = side_gains(y, [delta[0]], ASK, params)[i, 0]
    gb = side_gains(y, [delta[1]], BID, params)[i, 0]
    return float(params.running_penalty()[i] + ga + gb)


def hamiltonian_grid(y, nodes_a, nodes_b, params: ModelParams) -> np.ndarray:
    """``H_q(y, (a_i, b_j))`` for every row and node pair, shape ``(2Q+1, na, nb)``."""
    ga = side_gains(y, nodes_a, ASK, params)
    gb = side_gains(y, nodes_b, BID, params)
    return params.running_penalty()[:, None, None] + ga[:, :, None] + gb[:, None, :]


def active_sq_distance(q: int, delta: Quote, ref: Quote, params: ModelParams) -> float:
    """``|P_q(delta - ref)|^2``: inactive coordinates at the inventory bounds drop out."""
    _check_index(q, params)
    da = (delta[0] - ref[0]) if q > -params.Q else 0.0
    db = (delta[1] - ref[1]) if q < params.Q else 0.0
    return float(da * da + db * db)
