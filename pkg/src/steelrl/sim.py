"""Synthetic environments with known ground truth, Monte Carlo evaluation,
the tabular value-iteration oracle and regret computation.

The quadratic-peak reward family r(s, a) = clip(1 - ||a - mu(s)||^2, -1, 1)
with mu affine in s is used throughout because its in-class optimum is
cheap to characterize.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .data import BanditDataset, TransitionDataset

log = logging.getLogger(__name__)

SINGULARITY_MODES = ("none", "deterministicTarget", "disjointSupport")


def _mat(t) -> np.ndarray:
    return np.asarray(t, dtype=float)


@dataclass(frozen=True)
class BanditEnvSpec:
    """Single-decision environment: gaussian behavior policy around a
    state-linear mean, quadratic-peak reward with known optimum."""

    state_dim: int = 1
    action_dim: int = 1
    target_slope: tuple = ((0.5,),)
    target_intercept: tuple = (0.0,)
    action_low: tuple = (-2.0,)
    action_high: tuple = (2.0,)
    behavior_slope: tuple = ((0.0,),)
    behavior_intercept: tuple = (0.0,)
    behavior_std: float = 1.0
    noise_std: float = 0.3
    nu_mean: tuple = (0.0,)
    nu_std: tuple = (1.0,)
    singularity_mode: str = "deterministicTarget"
    reward_jump: bool = False
    disjoint_split: tuple = (0.0,)

    def __post_init__(self):
        if self.singularity_mode not in SINGULARITY_MODES:
            raise ValueError(f"unknown singularity mode {self.singularity_mode!r}")

    def target_mean(self, states) -> np.ndarray:
        return states @ _mat(self.target_slope).T + _mat(self.target_intercept)

    def reward_mean(self, states, actions) -> np.ndarray:
        gap = actions - self.target_mean(states)
        r = 1.0 - np.sum(gap * gap, axis=1)
        if self.reward_jump:
            r = r + 0.5 * (states[:, 0] > 1.0)
        return np.clip(r, -1.0, 1.0)

    def nu_sample(self, n: int, rng) -> np.ndarray:
        return rng.normal(_mat(self.nu_mean), _mat(self.nu_std), size=(n, self.state_dim))

    def behavior_actions(self, states, rng) -> np.ndarray:
        if self.singularity_mode == "disjointSupport":
            lo, split = _mat(self.action_low), _mat(self.disjoint_split)
            return rng.uniform(lo, split, size=(len(states), self.action_dim))
        mean = states @ _mat(self.behavior_slope).T + _mat(self.behavior_intercept)
        return mean + self.behavior_std * rng.standard_normal(mean.shape)

    def behavior_density(self, states, actions) -> np.ndarray:
        """Conditional density of the behavior action given the state
        (defined for the gaussian modes)."""
        if self.singularity_mode == "disjointSupport":
            raise ValueError("disjointSupport behavior has no gaussian density")
        mean = states @ _mat(self.behavior_slope).T + _mat(self.behavior_intercept)
        z = (actions - mean) / self.behavior_std
        norm = (2.0 * np.pi * self.behavior_std**2) ** (-0.5 * self.action_dim)
        return norm * np.exp(-0.5 * np.sum(z * z, axis=1))


@dataclass(frozen=True)
class MdpEnvSpec:
    """Linear-Gaussian dynamics s' = A s + B a + eta with the quadratic-peak
    reward clipped to r_max.  The transition matrix must be stable."""

    state_dim: int = 1
    action_dim: int = 1
    a_matrix: tuple = ((0.7,),)
    b_matrix: tuple = ((0.3,),)
    trans_std: float = 0.2
    gamma: float = 0.9
    target_slope: tuple = ((0.4,),)
    target_intercept: tuple = (0.0,)
    r_max: float = 1.0
    action_low: tuple = (-2.0,)
    action_high: tuple = (2.0,)
    state_low: tuple = (-3.0,)
    state_high: tuple = (3.0,)
    behavior_slope: tuple = ((0.2,),)
    behavior_intercept: tuple = (0.0,)
    behavior_std: float = 0.8
    noise_std: float = 0.1
    nu_mean: tuple = (0.0,)
    nu_std: tuple = (1.0,)

    def __post_init__(self):
        rho = np.max(np.abs(np.linalg.eigvals(_mat(self.a_matrix))))
        if rho >= 1.0:
            raise ValueError(f"unstable dynamics: spectral radius {rho:.3f} >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    def reward_mean(self, states, actions) -> np.ndarray:
        gap = actions - (states @ _mat(self.target_slope).T + _mat(self.target_intercept))
        return np.clip(1.0 - np.sum(gap * gap, axis=1), -self.r_max, self.r_max)

    def nu_sample(self, n: int, rng) -> np.ndarray:
        return rng.normal(_mat(self.nu_mean), _mat(self.nu_std), size=(n, self.state_dim))

    def behavior_actions(self, states, rng) -> np.ndarray:
        mean = states @ _mat(self.behavior_slope).T + _mat(self.behavior_intercept)
        return mean + self.behavior_std * rng.standard_normal(mean.shape)

    def step(self, states, actions, rng) -> np.ndarray:
        drift = states @ _mat(self.a_matrix).T + actions @ _mat(self.b_matrix).T
        return drift + self.trans_std * rng.standard_normal(drift.shape)


def generate(spec, n: int, horizon: int | None = None, seed: int = 0):
    """Draw a seeded batch dataset under the behavior policy.

    Bandit specs return a BanditDataset (horizon ignored); MDP specs return a
    TransitionDataset with ``horizon`` transitions per trajectory.
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    rng = np.random.default_rng(seed)
    if isinstance(spec, BanditEnvSpec):
        states = spec.nu_sample(n, rng)
        actions = spec.behavior_actions(states, rng)
        rewards = spec.reward_mean(states, actions)
        if spec.noise_std > 0:
            rewards = rewards + spec.noise_std * rng.standard_normal(n)
        if spec.singularity_mode == "disjointSupport":
            if np.any(actions >= _mat(spec.disjoint_split)):
                raise AssertionError("disjoint-support certification failed")
        return BanditDataset(states=states, actions=actions, rewards=rewards)

    if horizon is None or horizon < 1:
        raise ValueError("MDP generation needs a positive horizon")
    s = spec.nu_sample(n, rng)
    states, actions, rewards, next_states = [], [], [], []
    for _ in range(horizon):
        a = spec.behavior_actions(s, rng)
        r = spec.reward_mean(s, a)
        if spec.noise_std > 0:
            r = np.clip(r + spec.noise_std * rng.standard_normal(n), -spec.r_max, spec.r_max)
        s_next = spec.step(s, a, rng)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        next_states.append(s_next)
        s = s_next

    def traj_major(parts):
        # stack (horizon, n, ...) steps into trajectory-major flat rows
        arr = np.stack(parts, axis=1)
        return arr.reshape(n * horizon, *arr.shape[2:])

    return TransitionDataset(
        states=traj_major(states),
        actions=traj_major(actions),
        rewards=traj_major(rewards),
        next_states=traj_major(next_states),
        n_trajectories=n,
        horizon=horizon,
        r_max=spec.r_max,
    )


def _policy_actions(policy, states):
    act = getattr(policy, "act", policy)
    return np.atleast_2d(np.asarray(act(states), dtype=float))


def truncation_horizon(gamma: float, tail: float = 0.001) -> int:
    if gamma == 0.0:
        return 1
    return int(math.ceil(math.log(tail) / math.log(gamma)))


def mc_policy_value(spec, policy, gamma: float, horizon: int | None = None,
                    rollouts: int = 2000, seed: int = 0):
    """Monte Carlo policy value (1 - gamma) * mean discounted return.

    Each rollout's random stream is derived from (seed, rollout index), so a
    parallel evaluation order reproduces the serial one bit-exactly.
    """
    if isinstance(spec, BanditEnvSpec):
        if gamma != 0.0:
            raise ValueError("bandit environments are evaluated at gamma 0")
        horizon = 1
    elif horizon is None:
        horizon = truncation_horizon(gamma)
    elif gamma > 0.0 and horizon < truncation_horizon(gamma):
        raise ValueError(f"horizon too short for gamma={gamma}; need >= {truncation_horizon(gamma)}")

    returns = np.empty(rollouts)
    for i in range(rollouts):
        rng = np.random.default_rng((seed, i))
        s = spec.nu_sample(1, rng)
        total = 0.0
        for t in range(horizon):
            a = _policy_actions(policy, s)
            r = float(spec.reward_mean(s, a)[0])
            if spec.noise_std > 0:
                r += spec.noise_std * float(rng.standard_normal())
                if isinstance(spec, MdpEnvSpec):
                    r = float(np.clip(r, -spec.r_max, spec.r_max))
            total += gamma**t * r
            if isinstance(spec, BanditEnvSpec):
                break
            s = spec.step(s, a, rng)
        returns[i] = (1.0 - gamma) * total
    value = float(returns.mean())
    stderr = float(returns.std(ddof=1) / np.sqrt(rollouts)) if rollouts > 1 else 0.0
    return value, stderr


@dataclass(frozen=True)
class TabularQ:
    """Q^pi on a product grid, with multilinear interpolation off the grid."""

    state_grids: tuple
    action_grids: tuple
    table: np.ndarray

    def value(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        grids = [*self.state_grids, *self.action_grids]
        pts = np.hstack([states, actions])
        for j, g in enumerate(grids):
            pts[:, j] = np.clip(pts[:, j], g[0], g[-1])
        interp = RegularGridInterpolator(grids, self.table)
        return interp(pts)

    def snapped_policy(self, policy):
        """The policy with actions snapped to the oracle's action grid, i.e.
        the policy whose Q this table actually solves."""
        grids = self.action_grids

        def act(states):
            a = _policy_actions(policy, states)
            out = np.empty_like(a)
            for j, g in enumerate(grids):
                idx = np.abs(a[:, j][:, None] - g[None, :]).argmin(axis=1)
                out[:, j] = g[idx]
            return out

        return act


def _product_grid(lows, highs, res):
    axes = [np.linspace(lo, hi, res) for lo, hi in zip(lows, highs)]
    pts = np.asarray(list(product(*axes)), dtype=float)
    return axes, pts


MAX_VALUE_ITERATIONS = 100_000


def tabular_q_oracle(spec: MdpEnvSpec, policy, grid_resolution=(81, 41), tol: float = 1e-8) -> TabularQ:
    """Value iteration for Q^pi on a uniform (state x action) grid.

    Transition probabilities come from the gaussian step density evaluated at
    the state grid and row-normalized; the policy is snapped to the nearest
    action grid point.  Desk-scale only (state/action dims at most 2).
    """
    if spec.state_dim > 2 or spec.action_dim > 2:
        raise ValueError("tabular oracle supports at most 2-d states and actions")
    n_s, n_a = grid_resolution
    state_axes, s_pts = _product_grid(spec.state_low, spec.state_high, n_s)
    action_axes, a_pts = _product_grid(spec.action_low, spec.action_high, n_a)
    ns, na = len(s_pts), len(a_pts)

    # transition kernel: rows (s, a) pairs, columns next-state grid points
    drift = s_pts @ _mat(spec.a_matrix).T  # (ns, dS)
    push = a_pts @ _mat(spec.b_matrix).T  # (na, dS)
    mean = drift[:, None, :] + push[None, :, :]  # (ns, na, dS)
    z = (s_pts[None, None, :, :] - mean[:, :, None, :]) / spec.trans_std
    logp = -0.5 * np.sum(z * z, axis=3)
    p = np.exp(logp - logp.max(axis=2, keepdims=True))
    p /= p.sum(axis=2, keepdims=True)

    rewards = spec.reward_mean(
        np.repeat(s_pts, na, axis=0), np.tile(a_pts, (ns, 1))
    ).reshape(ns, na)

    pi_a = _policy_actions(policy, s_pts)
    pi_idx = np.abs(pi_a[:, None, :] - a_pts[None, :, :]).sum(axis=2).argmin(axis=1)

    q = np.zeros((ns, na))
    for it in range(MAX_VALUE_ITERATIONS):
        q_pi = q[np.arange(ns), pi_idx]  # Q(s', pi(s')) on the grid
        q_new = rewards + spec.gamma * (p @ q_pi)
        change = float(np.abs(q_new - q).max())
        q = q_new
        if change < tol:
            break
    else:
        raise RuntimeError(f"value iteration did not converge in {MAX_VALUE_ITERATIONS} sweeps")

    shape = tuple(len(ax) for ax in state_axes) + tuple(len(ax) for ax in action_axes)
    return TabularQ(
        state_grids=tuple(state_axes),
        action_grids=tuple(action_axes),
        table=q.reshape(shape),
    )


def regret(spec, policy, reference_value: float, gamma: float,
           horizon: int | None = None, rollouts: int = 2000, seed: int = 0) -> float:
    """Reference value minus the Monte Carlo value of the policy, clamped at
    0 (the raw value is logged)."""
    value, stderr = mc_policy_value(spec, policy, gamma, horizon=horizon, rollouts=rollouts, seed=seed)
    raw = reference_value - value
    log.debug("regret raw=%.6f (value=%.6f +- %.6f, reference=%.6f)", raw, value, stderr, reference_value)
    return max(0.0, raw)


_REFERENCE_CACHE: dict = {}


def _cf_value_fn(spec, template, gamma, horizon, eval_seed, n_eval):
    """Deterministic value of psi using common random numbers.

    For bandits the conditional-mean reward is evaluated on a fixed nu
    sample; for MDPs a fixed set of rollout noise streams is reused.
    """
    from .funcapprox import ParamPolicy

    if isinstance(spec, BanditEnvSpec):
        states = spec.nu_sample(n_eval, np.random.default_rng(eval_seed))

        def value(psi):
            pol = ParamPolicy(template.feature_map, psi, template.action_low, template.action_high)
            return float(spec.reward_mean(states, pol.act(states)).mean())

        return value

    horizon = horizon or truncation_horizon(gamma)

    def value(psi):
        pol = ParamPolicy(template.feature_map, psi, template.action_low, template.action_high)
        v, _ = mc_policy_value(spec, pol, gamma, horizon=horizon, rollouts=n_eval, seed=eval_seed)
        return v

    return value


def reference_value(spec, template, gamma: float = 0.0, horizon: int | None = None,
                    restarts: int = 512, polish_steps: int = 40, n_eval: int = 4000,
                    seed: int = 1234, minimize: bool = False) -> float:
    """Best (or worst) in-class policy value: dense random search over the
    policy weights followed by a finite-difference gradient polish.

    The result is cached per (spec, policy class, evaluation setup).
    """
    key = (repr(spec), repr(template.to_dict()), gamma, horizon, restarts,
           polish_steps, n_eval, seed, minimize)
    if key in _REFERENCE_CACHE:
        return _REFERENCE_CACHE[key]

    sign = -1.0 if minimize else 1.0
    value_fn = _cf_value_fn(spec, template, gamma, horizon, eval_seed=seed, n_eval=n_eval)
    rng = np.random.default_rng(seed)
    shape = template.psi.shape
    best_psi, best_val = np.zeros(shape), sign * value_fn(np.zeros(shape))
    for scale in (0.5, 1.5, 4.0):
        for _ in range(restarts // 3):
            psi = scale * rng.standard_normal(shape)
            v = sign * value_fn(psi)
            if v > best_val:
                best_psi, best_val = psi, v

    # finite-difference ascent polish with a fixed evaluation sample
    h, lr = 1e-4, 0.5
    psi = best_psi.copy()
    for _ in range(polish_steps):
        g = np.zeros(shape)
        for idx in np.ndindex(shape):
            step = np.zeros(shape)
            step[idx] = h
            g[idx] = (sign * value_fn(psi + step) - sign * value_fn(psi - step)) / (2 * h)
        psi_new = psi + lr * g
        v_new = sign * value_fn(psi_new)
        if v_new <= best_val:
            lr *= 0.5
            if lr < 1e-3:
                break
            continue
        psi, best_val = psi_new, v_new

    _REFERENCE_CACHE[key] = sign * best_val
    return sign * best_val


TERM_CHOICES = (36, 48, 60, 72)

# population location/scale used to define the synthetic demand on a stable
# standardized scale (independent of any particular sample)
_LOAN_POP = {
    "fico": (690.0, 60.0),
    "amount": (16000.0, 7000.0),
    "prime": (0.006, 0.0023),
    "competitor": (0.0085, 0.0025),
    "term": (54.0, 13.4),
}


@dataclass(frozen=True)
class LoanEnvSpec:
    """Synthetic stand-in for the auto-loan pricing data.

    Acceptance probability is linear in standardized covariates and decreases
    linearly in price; reward is price times acceptance.  The base-effect
    signs make the optimal price fall with the credit score and rise with the
    loan term.
    """

    base_intercept: float = 0.55
    coef_fico: float = -0.25
    coef_amount: float = 0.05
    coef_prime: float = 0.05
    coef_competitor: float = 0.03
    coef_term: float = 0.30
    price_slope: float = 0.12  # acceptance drop per $1000 of price
    price_low_k: float = 0.3
    price_high_k: float = 4.0

    def _standardize(self, raw: np.ndarray) -> np.ndarray:
        cols = []
        for j, name in enumerate(("fico", "amount", "prime", "competitor", "term")):
            mu, sd = _LOAN_POP[name]
            cols.append((raw[:, j] - mu) / sd)
        return np.column_stack(cols)

    def accept_probability(self, raw_features: np.ndarray, price_k: np.ndarray) -> np.ndarray:
        z = self._standardize(np.atleast_2d(raw_features))
        base = (
            self.base_intercept
            + self.coef_fico * z[:, 0]
            + self.coef_amount * z[:, 1]
            + self.coef_prime * z[:, 2]
            + self.coef_competitor * z[:, 3]
            + self.coef_term * z[:, 4]
        )
        return np.clip(base - self.price_slope * np.asarray(price_k, dtype=float), 0.0, 1.0)

    def expected_reward_k(self, raw_features: np.ndarray, price_k: np.ndarray) -> np.ndarray:
        """Expected reward in $1000 units: price * acceptance probability."""
        price_k = np.asarray(price_k, dtype=float)
        return price_k * self.accept_probability(raw_features, price_k)


def generate_loan_records(spec: LoanEnvSpec, n: int, seed: int = 0):
    """Draw synthetic loan records with uniformly-priced behavior offers."""
    from .data import LoanRecord

    rng = np.random.default_rng(seed)
    fico = np.clip(rng.normal(690.0, 60.0, n), 500.0, 850.0)
    amount = np.clip(rng.lognormal(np.log(15000.0), 0.45, n), 2000.0, 60000.0)
    prime = rng.uniform(0.002, 0.010, n)
    competitor = prime + rng.uniform(0.0, 0.005, n)
    term = rng.choice(TERM_CHOICES, size=n)
    price_k = rng.uniform(spec.price_low_k, spec.price_high_k, n)

    raw = np.column_stack([fico, amount, prime, competitor, term.astype(float)])
    p_accept = spec.accept_probability(raw, price_k)
    accepted = rng.uniform(size=n) < p_accept

    records = []
    for i in range(n):
        annuity = sum((1.0 + prime[i]) ** (-t) for t in range(1, int(term[i]) + 1))
        payment = (1000.0 * price_k[i] + amount[i]) / annuity
        records.append(
            LoanRecord(
                fico=float(fico[i]),
                loan_amount_approved=float(amount[i]),
                prime_rate=float(prime[i]),
                competitor_rate=float(competitor[i]),
                term=int(term[i]),
                monthly_payment=float(payment),
                accepted=bool(accepted[i]),
            )
        )
    return records


def loan_policy_value_k(spec: LoanEnvSpec, policy, raw_features: np.ndarray,
                        standardized_states: np.ndarray) -> float:
    """True expected per-customer reward ($1000 units) of a pricing policy
    that maps standardized feature rows to prices in $1000 units."""
    price_k = _policy_actions(policy, standardized_states)[:, 0]
    return float(spec.expected_reward_k(raw_features, price_k).mean())
