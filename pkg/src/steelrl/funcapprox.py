"""Parametric Q-functions and deterministic policies with analytic gradients.

Both classes are linear in smooth nonlinear features (polynomial or random
Fourier), which keeps every gradient used by the saddle-point optimizer in
closed form.  Q-functions are clipped to enforce a hard sup-norm bound and
policies are squashed into an action box, so boundedness holds for every
parameter vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from scipy.special import expit


def _monomial_exponents(input_dim: int, degree: int) -> np.ndarray:
    """Exponent rows for all monomials of total degree <= degree."""
    rows = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(input_dim), d):
            e = np.zeros(input_dim, dtype=int)
            for c in combo:
                e[c] += 1
            rows.append(e)
    return np.asarray(rows, dtype=int)


@dataclass(frozen=True)
class FeatureMap:
    """Deterministic feature expansion, polynomial or random Fourier.

    Random Fourier features are sqrt(2/m) * cos(W x + b) with W, b frozen at
    construction from the seed; equal fields give bit-identical features.
    """

    kind: str
    input_dim: int
    degree: int = 1
    n_features: int = 64
    bandwidth: float = 1.0
    seed: int = 0
    _frozen: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "polynomial":
            exps = _monomial_exponents(self.input_dim, self.degree)
            object.__setattr__(self, "_frozen", (exps,))
        elif self.kind == "random_fourier":
            rng = np.random.default_rng(self.seed)
            w = rng.standard_normal((self.n_features, self.input_dim)) / self.bandwidth
            b = rng.uniform(0.0, 2.0 * np.pi, size=self.n_features)
            object.__setattr__(self, "_frozen", (w, b))
        else:
            raise ValueError(f"unknown feature map kind: {self.kind!r}")

    @property
    def output_dim(self) -> int:
        if self.kind == "polynomial":
            return self._frozen[0].shape[0]
        return self.n_features

    def features(self, x: np.ndarray) -> np.ndarray:
        """Feature matrix (n, p) for input rows (n, input_dim)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.input_dim:
            raise ValueError(f"input dim {x.shape[1]} != {self.input_dim}")
        if self.kind == "polynomial":
            exps = self._frozen[0]
            return np.prod(x[:, None, :] ** exps[None, :, :], axis=2)
        w, b = self._frozen
        return np.sqrt(2.0 / self.n_features) * np.cos(x @ w.T + b)

    def jacobian(self, x: np.ndarray, coords) -> np.ndarray:
        """Partials of each feature w.r.t. the given input coordinates.

        Returns an array (n, p, len(coords)).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        coords = list(coords)
        n = x.shape[0]
        out = np.zeros((n, self.output_dim, len(coords)))
        if self.kind == "polynomial":
            exps = self._frozen[0]
            for j, c in enumerate(coords):
                active = exps[:, c] > 0
                if not active.any():
                    continue
                reduced = exps[active].copy()
                reduced[:, c] -= 1
                prod = np.prod(x[:, None, :] ** reduced[None, :, :], axis=2)
                out[:, active, j] = exps[active, c] * prod
            return out
        w, b = self._frozen
        s = -np.sqrt(2.0 / self.n_features) * np.sin(x @ w.T + b)
        for j, c in enumerate(coords):
            out[:, :, j] = s * w[:, c]
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "input_dim": self.input_dim}
        if self.kind == "polynomial":
            d["degree"] = self.degree
        else:
            d.update(n_features=self.n_features, bandwidth=self.bandwidth, seed=self.seed)
        return d

    @staticmethod
    def from_dict(d: dict) -> "FeatureMap":
        return FeatureMap(**d)


@dataclass
class ParamQ:
    """Clipped linear-in-features Q-function over (s, a).

    ``action_scaled`` switches to the demand-structured form a * g(s, a)
    with g the clipped linear score (scalar actions only); the action factor
    enters the gradients by the product rule.
    """

    feature_map: FeatureMap
    theta: np.ndarray
    clip_bound: float
    state_dim: int
    action_scaled: bool = False

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.feature_map.output_dim,):
            raise ValueError("theta shape does not match the feature map")
        if self.clip_bound <= 0:
            raise ValueError("clip bound must be positive")
        if self.action_scaled and self.feature_map.input_dim - self.state_dim != 1:
            raise ValueError("action-scaled Q requires a scalar action")

    @property
    def action_dim(self) -> int:
        return self.feature_map.input_dim - self.state_dim

    def _inputs(self, s, a):
        s = np.atleast_2d(np.asarray(s, dtype=float))
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if s.shape[1] != self.state_dim or a.shape[1] != self.action_dim:
            raise ValueError("state/action dimension mismatch")
        return np.hstack([s, a]), a

    def value(self, s, a) -> np.ndarray:
        x, a = self._inputs(s, a)
        g = np.clip(self.feature_map.features(x) @ self.theta, -self.clip_bound, self.clip_bound)
        return a[:, 0] * g if self.action_scaled else g

    def value_and_grads(self, s, a):
        """Value plus dQ/dtheta (n, p) and dQ/da (n, dA).

        The clip is flat outside the band, so both gradients carry the
        inside-band indicator (subgradient 0 at the boundary).
        """
        x, a = self._inputs(s, a)
        phi = self.feature_map.features(x)
        raw = phi @ self.theta
        inband = (np.abs(raw) < self.clip_bound).astype(float)
        g = np.clip(raw, -self.clip_bound, self.clip_bound)
        action_cols = range(self.state_dim, self.feature_map.input_dim)
        jac = self.feature_map.jacobian(x, action_cols)
        dg_da = np.einsum("npk,p->nk", jac, self.theta) * inband[:, None]
        if self.action_scaled:
            val = a[:, 0] * g
            d_theta = a[:, 0, None] * phi * inband[:, None]
            d_a = g[:, None] + a[:, 0, None] * dg_da
        else:
            val = g
            d_theta = phi * inband[:, None]
            d_a = dg_da
        return val, d_theta, d_a

    def to_dict(self) -> dict:
        return {
            "type": "q",
            "feature_map": self.feature_map.to_dict(),
            "theta": self.theta.tolist(),
            "clip_bound": self.clip_bound,
            "state_dim": self.state_dim,
            "action_scaled": self.action_scaled,
        }

    @staticmethod
    def from_dict(d: dict) -> "ParamQ":
        return ParamQ(
            feature_map=FeatureMap.from_dict(d["feature_map"]),
            theta=np.asarray(d["theta"], dtype=float),
            clip_bound=d["clip_bound"],
            state_dim=d["state_dim"],
            action_scaled=d.get("action_scaled", False),
        )


@dataclass
class ParamPolicy:
    """Deterministic policy squashed into a per-coordinate action box:
    pi(s) = lo + (hi - lo) * sigmoid(psi^T phi(s))."""

    feature_map: FeatureMap
    psi: np.ndarray
    action_low: np.ndarray
    action_high: np.ndarray

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        self.action_low = np.asarray(self.action_low, dtype=float)
        self.action_high = np.asarray(self.action_high, dtype=float)
        d_a = self.action_low.shape[0]
        if self.action_high.shape != (d_a,) or np.any(self.action_high <= self.action_low):
            raise ValueError("action box must have low < high per coordinate")
        if self.psi.shape != (self.feature_map.output_dim, d_a):
            raise ValueError("psi shape does not match feature map / action dim")

    @property
    def action_dim(self) -> int:
        return self.action_low.shape[0]

    def act(self, s) -> np.ndarray:
        phi = self.feature_map.features(s)
        sig = expit(phi @ self.psi)
        return self.action_low + (self.action_high - self.action_low) * sig

    def act_and_grad(self, s):
        """Actions (n, dA) and dpi/dpsi (n, p, dA); saturated coordinates
        have vanishing gradient through the sigmoid."""
        phi = self.feature_map.features(s)
        sig = expit(phi @ self.psi)
        actions = self.action_low + (self.action_high - self.action_low) * sig
        dsig = sig * (1.0 - sig) * (self.action_high - self.action_low)
        grad = phi[:, :, None] * dsig[:, None, :]
        return actions, grad

    def to_dict(self) -> dict:
        return {
            "type": "policy",
            "feature_map": self.feature_map.to_dict(),
            "psi": self.psi.tolist(),
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ParamPolicy":
        return ParamPolicy(
            feature_map=FeatureMap.from_dict(d["feature_map"]),
            psi=np.asarray(d["psi"], dtype=float),
            action_low=np.asarray(d["action_low"], dtype=float),
            action_high=np.asarray(d["action_high"], dtype=float),
        )


def q_eval(q: ParamQ, s, a) -> float:
    return float(q.value(np.atleast_2d(s), np.atleast_2d(a))[0])


def q_grad(q: ParamQ, s, a):
    _, d_theta, d_a = q.value_and_grads(np.atleast_2d(s), np.atleast_2d(a))
    return d_theta[0], d_a[0]


def policy_eval(policy: ParamPolicy, s) -> np.ndarray:
    return policy.act(np.atleast_2d(s))[0]


def policy_grad(policy: ParamPolicy, s) -> np.ndarray:
    _, grad = policy.act_and_grad(np.atleast_2d(s))
    return grad[0]


def save_params(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj.to_dict(), fh, indent=1)


def load_params(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return ParamQ.from_dict(d) if d["type"] == "q" else ParamPolicy.from_dict(d)


def finite_diff_check(f, grad, point, h: float = 1e-5) -> float:
    """Max abs difference between central differences of f and grad(point)."""
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=float)
    g = np.asarray(grad(point), dtype=float)
    worst = 0.0
    for i in range(point.size):
        step = np.zeros_like(point)
        step.flat[i] = h
        est = (f(point + step) - f(point - step)) / (2.0 * h)
        worst = max(worst, abs(est - g.flat[i]))
    return worst
