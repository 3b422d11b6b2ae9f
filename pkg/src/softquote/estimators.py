"""scikit-learn style wrapper around policy construction.

The model is solved, not learned from data, so ``fit`` ignores ``X``.
``predict`` maps rows of ``(t, q)`` to mean quotes under the fitted policy.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .model import ModelParams
from .ode import policy_evaluation_ode
from .policies import PolicySpec, build_policy


class QuotingPolicy(BaseEstimator):
    """Quoting policy for the finite-inventory market-making model.

    Parameters mirror :class:`PolicySpec`; ``model`` is a :class:`ModelParams`
    or a dict of its fields (``None`` gives the baseline model).
    """

    def __init__(self, variant="hamiltonian-gibbs", h=0.005, lam=0.01, spread=0.3,
                 slope=0.04, n_nodes=61, exact_nodes=17, model=None):
        self.variant = variant
        self.h = h
        self.lam = lam
        self.spread = spread
        self.slope = slope
        self.n_nodes = n_nodes
        self.exact_nodes = exact_nodes
        self.model = model

    def _model(self) -> ModelParams:
        if self.model is None:
            return ModelParams()
        if isinstance(self.model, ModelParams):
            return self.model
        return ModelParams.from_dict(dict(self.model))

    def fit(self, X=None, y=None):
        params = self._model()
        spec = PolicySpec(self.variant, h=self.h, lam=self.lam, spread=self.spread,
                          slope=self.slope, n_nodes=self.n_nodes, exact_nodes=self.exact_nodes)
        self.model_ = params
        self.policy_ = build_policy(spec, params)
        self.value_ = policy_evaluation_ode(self.policy_, params)
        return self

    def _rows(self, X):
        check_is_fitted(self, "policy_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: time and inventory")
        p = self.model_
        t, q = X[:, 0], X[:, 1]
        if np.any(t < 0) or np.any(t > p.horizon):
            raise ValueError("times must lie in [0, horizon]")
        if np.any(q != np.round(q)) or np.any(np.abs(q) > p.Q):
            raise ValueError(f"inventories must be integers in [-{p.Q}, {p.Q}]")
        n = np.array([self.policy_.grid.index_of(ti) for ti in t])
        return n, q.astype(int) + p.Q

    def predict(self, X) -> np.ndarray:
        """Mean ask and bid quotes, shape ``(n_samples, 2)``."""
        n, iq = self._rows(X)
        return np.array([self.policy_.mean_quotes(ni)[qi] for ni, qi in zip(n, iq)])

    def sample(self, X, random_state=None) -> np.ndarray:
        """One quote draw per row from the fitted kernel."""
        n, iq = self._rows(X)
        rng = check_random_state(random_state)
        return np.array([self.policy_.sample(ni, qi, rng.random_sample()) for ni, qi in zip(n, iq)])

    def value(self, X) -> np.ndarray:
        """Policy value ``u(t_n, q)`` at the grid time at or before each ``t``."""
        n, iq = self._rows(X)
        return self.value_.values[n, iq]

    def score(self, X=None, y=None) -> float:
        """Certainty equivalent from flat inventory at time zero."""
        check_is_fitted(self, "policy_")
        return float(self.value_.initial[self.model_.Q])
