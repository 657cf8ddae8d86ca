"""Bellman residuals, kernel ridge regression of the residual operator,
RKHS-norm and weighted-ball closed forms, and the evaluation error bound.

Ridge convention: the regression objective averages the squared loss over
the NT transitions, so the dual coefficients solve (K + NT*zeta*I) alpha = Y.
Every RKHS-norm computation below uses the same effective ridge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .kernels import GramMatrix, KernelSpec, cross_gram


def effective_ridge(nt: int, zeta: float) -> float:
    return nt * zeta


def _factor_with_jitter(m: np.ndarray):
    """Cholesky with escalating diagonal jitter, 1e-12..1e-6 of trace/n."""
    n = m.shape[0]
    scale = np.trace(m) / n
    try:
        return cho_factor(m, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * scale
    while jitter <= 1e-6 * scale:
        try:
            return cho_factor(m + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError("Cholesky failed after jitter escalation to 1e-6*trace/n")


@dataclass(frozen=True)
class RidgeContext:
    """Gram matrix with a cached factorization of (K + NT*zeta*I).

    Read-only after construction; the optimizer reuses one context for all
    solves within a run.
    """

    gram: GramMatrix
    zeta: float
    _factor: tuple

    @staticmethod
    def build(gram: GramMatrix, zeta: float) -> "RidgeContext":
        if zeta <= 0:
            raise ValueError("zeta must be positive")
        nt = gram.n
        reg = gram.entries + effective_ridge(nt, zeta) * np.eye(nt)
        return RidgeContext(gram=gram, zeta=zeta, _factor=_factor_with_jitter(reg))

    def solve(self, y: np.ndarray) -> np.ndarray:
        """(K + NT*zeta*I)^-1 y."""
        return cho_solve(self._factor, y)

    def smoothed(self, y: np.ndarray) -> np.ndarray:
        """(K + ridge)^-1 K (K + ridge)^-1 y, the RKHS-norm quadratic kernel."""
        return self.solve(self.gram.entries @ self.solve(y))


def _actions_of(policy, states):
    act = getattr(policy, "act", policy)
    return np.atleast_2d(np.asarray(act(states), dtype=float))


def _q_values(q, states, actions):
    val = getattr(q, "value", q)
    return np.asarray(val(states, actions), dtype=float).ravel()


def residual_vector(dataset, policy, q, gamma: float) -> np.ndarray:
    """Empirical Bellman residuals r + gamma*Q(s', pi(s')) - Q(s, a),
    ordered to match the dataset's Gram-matrix row order."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    y = dataset.rewards - _q_values(q, dataset.states, dataset.actions)
    if gamma > 0.0:
        next_actions = _actions_of(policy, dataset.next_states)
        y = y + gamma * _q_values(q, dataset.next_states, next_actions)
    return y


@dataclass(frozen=True)
class KrrFit:
    """Kernel ridge fit of a target vector on the Gram context's points."""

    alpha: np.ndarray
    zeta: float
    gram: GramMatrix
    spec: KernelSpec


def krr_fit(gram: GramMatrix, y: np.ndarray, zeta: float, spec: KernelSpec) -> KrrFit:
    y = np.asarray(y, dtype=float)
    if y.shape != (gram.n,):
        raise ValueError("target length does not match the Gram matrix")
    ctx = RidgeContext.build(gram, zeta)
    return KrrFit(alpha=ctx.solve(y), zeta=zeta, gram=gram, spec=spec)


def krr_eval(fit: KrrFit, z) -> float | np.ndarray:
    """Evaluate the fitted function sum_i alpha_i k(z_i, z)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    k = cross_gram(fit.spec, np.atleast_2d(z), fit.gram.points)
    out = k @ fit.alpha
    return float(out[0]) if single else out


def rkhs_norm_sq(gram: GramMatrix, y: np.ndarray, zeta: float) -> float:
    """Squared RKHS norm of the ridge fit,
    Y^T (K + ridge)^-1 K (K + ridge)^-1 Y."""
    y = np.asarray(y, dtype=float)
    ctx = RidgeContext.build(gram, zeta)
    return max(0.0, float(y @ ctx.smoothed(y)))


def wball_sup(gram: GramMatrix, y: np.ndarray, c: float) -> float:
    """Closed-form supremum of the empirical weighted residual mean over the
    RKHS ball of radius c: (c / NT) * sqrt(Y^T K Y)."""
    if c <= 0:
        raise ValueError("ball radius must be positive")
    y = np.asarray(y, dtype=float)
    quad = float(y @ (gram.entries @ y))
    return (c / gram.n) * np.sqrt(max(0.0, quad))


def ope_error_bound(sup_w: float, lambda2_mass: float, mmd: float, rkhs_norm: float) -> float:
    """Evaluation-error bound: sup_w + lambda2_mass * mmd * rkhs_norm."""
    for name, v in (("sup_w", sup_w), ("lambda2_mass", lambda2_mass), ("mmd", mmd), ("rkhs_norm", rkhs_norm)):
        if v < 0:
            raise ValueError(f"{name} must be nonnegative")
    if lambda2_mass > 1.0 + 1e-12:
        raise ValueError("lambda2_mass must be at most 1")
    return float(sup_w + lambda2_mass * mmd * rkhs_norm)
