"""Ridge linear-Gaussian transition model fitted from batch data.

Used to sample states from the discounted visitation distribution of a
candidate policy when the environment itself is unavailable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearGaussianModel:
    """s' ~ N(W [s; a; 1], diag(noise_std^2)) fitted per state coordinate."""

    weights: np.ndarray  # (dS, dS + dA + 1)
    noise_std: np.ndarray  # (dS,)

    def step(self, states, actions, rng) -> np.ndarray:
        x = np.hstack([states, actions, np.ones((len(states), 1))])
        mean = x @ self.weights.T
        return mean + self.noise_std * rng.standard_normal(mean.shape)


def fit_linear_gaussian(dataset, ridge: float = 1e-6) -> LinearGaussianModel:
    x = np.hstack([dataset.states, dataset.actions, np.ones((dataset.nt, 1))])
    g = x.T @ x + ridge * np.eye(x.shape[1])
    w = np.linalg.solve(g, x.T @ dataset.next_states).T
    resid = dataset.next_states - x @ w.T
    std = resid.std(axis=0, ddof=min(x.shape[1], dataset.nt - 1))
    std = np.maximum(std, 1e-8)
    return LinearGaussianModel(weights=w, noise_std=std)


def visitation_sample(model: LinearGaussianModel, policy, init_states, gamma: float,
                      seed: int = 0, horizon: int | None = None):
    """Weighted (state, action) draws approximating the discounted visitation
    measure of the policy under the fitted model.

    Each rollout step t contributes its (s_t, pi(s_t)) pair with geometric
    weight gamma^t; weights are normalized over the returned sample.
    """
    init_states = np.atleast_2d(np.asarray(init_states, dtype=float))
    act = getattr(policy, "act", policy)
    if gamma == 0.0:
        actions = np.atleast_2d(np.asarray(act(init_states), dtype=float))
        n = len(init_states)
        return init_states, actions, np.full(n, 1.0 / n)

    if horizon is None:
        horizon = max(1, int(math.ceil(math.log(0.01) / math.log(gamma))))
    rng = np.random.default_rng(seed)
    s = init_states
    states_acc, actions_acc, weights_acc = [], [], []
    for t in range(horizon):
        a = np.atleast_2d(np.asarray(act(s), dtype=float))
        states_acc.append(s)
        actions_acc.append(a)
        weights_acc.append(np.full(len(s), gamma**t))
        s = model.step(s, a, rng)
    states = np.vstack(states_acc)
    actions = np.vstack(actions_acc)
    weights = np.concatenate(weights_acc)
    return states, actions, weights / weights.sum()


def visitation_states(model: LinearGaussianModel, policy, init_states, gamma: float,
                      seed: int = 0) -> np.ndarray:
    states, _, _ = visitation_sample(model, policy, init_states, gamma, seed=seed)
    return states
