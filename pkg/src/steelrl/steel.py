"""Uncertainty sets, the Lagrangian and the primal-dual saddle-point solver.

The solver alternates a few gradient-descent steps on the Q weights
(pessimistic inner minimization) with projected gradient-ascent steps on the
dual variables and one ascent step on the policy weights.  All quantities
are full-batch closed forms, so runs are deterministic per seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import TransitionDataset
from .funcapprox import FeatureMap, ParamPolicy, ParamQ
from .kernels import GramMatrix, KernelSpec, gram, median_heuristic, mmd2
from .residual import RidgeContext, residual_vector, rkhs_norm_sq, wball_sup


def default_radii(nt: int, scale1: float = 1.0, scale2: float = 1.0) -> tuple[float, float]:
    """Radius schedule: eps1 ~ log(NT) sqrt(1/NT), eps2 its cube root shape."""
    base = math.log(nt) * math.sqrt(1.0 / nt)
    return scale1 * base, scale2 * base ** (1.0 / 3.0)


@dataclass(frozen=True)
class SteelConfig:
    """Everything a solver run needs besides the dataset itself."""

    gamma: float
    init_state_sample: np.ndarray
    q_features: FeatureMap
    policy_features: FeatureMap
    action_low: tuple
    action_high: tuple
    zeta: float = 1e-3
    eps1: float | None = None  # None -> default schedule
    eps2: float | None = None
    eps_scale1: float = 1.0
    eps_scale2: float = 1.0
    cball: float = 1.0
    q_bound: float | None = None  # None -> r_max / (1 - gamma)
    demand_reward: bool = False
    lr_q: float = 0.3
    lr_pi: float = 0.1
    lr_rho1: float = 1.0
    lr_rho2: float = 1.0
    inner_q_steps: int = 5
    max_outer_iters: int = 200
    tol: float = 1e-6
    rho_max: float = 100.0
    nystrom_cap: int = 2000
    seed: int = 0
    kernel_bandwidth: float | None = None  # None -> median heuristic
    rho1_fixed: bool = False
    two_phase_c: bool = False
    omega_cap: float = 20.0  # density-ratio truncation in the adaptive variant

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("zeta", "cball", "lr_q", "lr_pi", "lr_rho1", "lr_rho2", "rho_max"):
            v = getattr(self, name)
            if v < 0 or (v == 0 and name not in ("lr_rho1", "lr_rho2")):
                raise ValueError(f"{name} must be positive")
        for name in ("eps1", "eps2"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive when given")
        sample = np.atleast_2d(np.asarray(self.init_state_sample, dtype=float))
        if sample.shape[0] == 0:
            raise ValueError("init_state_sample must be nonempty")
        object.__setattr__(self, "init_state_sample", sample)


@dataclass(frozen=True)
class DualVars:
    rho1: float
    rho2: float


@dataclass
class SteelResult:
    policy: ParamPolicy
    q: ParamQ
    duals: DualVars
    trace: list
    pessimistic_value: float

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.to_dict(),
            "q": self.q.to_dict(),
            "duals": [self.duals.rho1, self.duals.rho2],
            "trace": self.trace,
            "pessimistic_value": self.pessimistic_value,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def policy_value_estimate(q, policy, init_state_sample, gamma: float) -> float:
    """(1 - gamma) * mean_{s0} Q(s0, pi(s0)) over the reference sample."""
    states = np.atleast_2d(np.asarray(init_state_sample, dtype=float))
    actions = np.atleast_2d(np.asarray(getattr(policy, "act", policy)(states), dtype=float))
    values = np.asarray(getattr(q, "value", q)(states, actions), dtype=float)
    return float((1.0 - gamma) * values.mean())


def omega1_value(dataset, gram_matrix: GramMatrix, policy, q, c: float, gamma: float) -> float:
    """Supremum of the weighted empirical residual over the c-ball;
    membership in the first uncertainty set means value <= eps1."""
    y = residual_vector(dataset, policy, q, gamma)
    if len(y) != gram_matrix.n:
        raise ValueError("dataset and Gram matrix orderings are inconsistent")
    return wball_sup(gram_matrix, y, c)


def omega2_value(dataset, gram_matrix: GramMatrix, policy, q, zeta: float, gamma: float) -> float:
    """RKHS norm of the ridge-regressed residual operator;
    membership in the second uncertainty set means value <= eps2."""
    y = residual_vector(dataset, policy, q, gamma)
    if len(y) != gram_matrix.n:
        raise ValueError("dataset and Gram matrix orderings are inconsistent")
    return math.sqrt(rkhs_norm_sq(gram_matrix, y, zeta))


@dataclass
class _Problem:
    """Precomputed views shared by every Lagrangian evaluation in a run."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    ctx: RidgeContext
    nu_states: np.ndarray
    gamma: float
    cball: float
    eps1: float
    eps2: float

    @property
    def nt(self) -> int:
        return len(self.rewards)


def base_parts(problem: _Problem, q: ParamQ, policy: ParamPolicy) -> dict:
    """Value term, residual vector and the chain rule through Y, at the
    current (theta, psi).  Constraint-specific terms are layered on top."""
    gamma = problem.gamma

    a_nu, dpi_nu = policy.act_and_grad(problem.nu_states)
    v_nu, dv_dtheta, dv_da = q.value_and_grads(problem.nu_states, a_nu)
    scale = (1.0 - gamma) / len(v_nu)
    value = scale * v_nu.sum()
    dvalue_dtheta = scale * dv_dtheta.sum(axis=0)
    dvalue_dpsi = scale * np.einsum("nk,npk->pk", dv_da, dpi_nu)

    q_cur, dqc_dtheta, _ = q.value_and_grads(problem.states, problem.actions)
    y = problem.rewards - q_cur
    dy_dtheta = -dqc_dtheta
    if gamma > 0.0:
        a_next, dpi_next = policy.act_and_grad(problem.next_states)
        q_next, dqn_dtheta, dqn_da = q.value_and_grads(problem.next_states, a_next)
        y = y + gamma * q_next
        dy_dtheta = dy_dtheta + gamma * dqn_dtheta

    def chain(dl_dy):
        dtheta = dy_dtheta.T @ dl_dy
        if gamma > 0.0:
            dpsi = gamma * np.einsum("n,nk,npk->pk", dl_dy, dqn_da, dpi_next)
        else:
            dpsi = np.zeros_like(dvalue_dpsi)
        return dtheta, dpsi

    return {
        "value": value,
        "dvalue": (dvalue_dtheta, dvalue_dpsi),
        "y": y,
        "chain": chain,
    }


def _evaluate(problem: _Problem, q: ParamQ, policy: ParamPolicy) -> dict:
    """Lagrangian building blocks with the two squared constraint gaps."""
    parts = base_parts(problem, q, policy)
    y, nt = parts["y"], problem.nt
    ky = problem.ctx.gram.entries @ y
    my = problem.ctx.smoothed(y)
    c1 = (problem.cball**2 / nt**2) * float(y @ ky) - problem.eps1**2
    c2 = float(y @ my) - problem.eps2**2
    parts["cons"] = (c1, c2)
    parts["dcons_dy"] = ((2.0 * problem.cball**2 / nt**2) * ky, 2.0 * my)
    return parts


def _lagrangian_from_parts(parts, rho):
    total = parts["value"]
    for r, c in zip(rho, parts["cons"]):
        if r > 0.0:  # keep 0 * (-inf) out of the sum
            total += r * c
    return total


def _grads_from_parts(parts, rho):
    dl_dy = None
    for r, dc in zip(rho, parts["dcons_dy"]):
        if r > 0.0:
            dl_dy = r * dc if dl_dy is None else dl_dy + r * dc
    dtheta, dpsi = parts["dvalue"]
    if dl_dy is not None:
        ct, cp = parts["chain"](dl_dy)
        dtheta = dtheta + ct
        dpsi = dpsi + cp
    return dtheta, dpsi


def lagrangian(dataset, gram_matrix: GramMatrix, q: ParamQ, rho, policy: ParamPolicy,
               cfg: SteelConfig):
    """Lagrangian value and its gradients w.r.t. (theta, psi, rho).

    Uses the squared constraint forms; rho gradients are the constraint gaps
    themselves.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("dual variables must be nonnegative")
    eps1, eps2 = _resolve_radii(cfg, gram_matrix.n)
    problem = _Problem(
        states=dataset.states,
        actions=dataset.actions,
        rewards=dataset.rewards,
        next_states=dataset.next_states,
        ctx=RidgeContext.build(gram_matrix, cfg.zeta),
        nu_states=cfg.init_state_sample,
        gamma=cfg.gamma,
        cball=cfg.cball,
        eps1=eps1,
        eps2=eps2,
    )
    parts = _evaluate(problem, q, policy)
    value = _lagrangian_from_parts(parts, rho)
    dtheta, dpsi = _grads_from_parts(parts, rho)
    return value, dtheta, dpsi, np.asarray(parts["cons"])


def _resolve_radii(cfg: SteelConfig, nt: int) -> tuple[float, float]:
    d1, d2 = default_radii(nt, cfg.eps_scale1, cfg.eps_scale2)
    return (cfg.eps1 if cfg.eps1 is not None else d1,
            cfg.eps2 if cfg.eps2 is not None else d2)


def _subsample(dataset: TransitionDataset, cap: int, seed: int):
    """Seeded uniform transition subsample defining the Gram context and Y."""
    if dataset.nt <= cap:
        return dataset.states, dataset.actions, dataset.rewards, dataset.next_states
    idx = np.sort(np.random.default_rng(seed).choice(dataset.nt, size=cap, replace=False))
    return (dataset.states[idx], dataset.actions[idx],
            dataset.rewards[idx], dataset.next_states[idx])


def _build_problem(dataset: TransitionDataset, cfg: SteelConfig) -> _Problem:
    s, a, r, s_next = _subsample(dataset, cfg.nystrom_cap, cfg.seed)
    z = np.hstack([s, a])
    bandwidth = cfg.kernel_bandwidth or median_heuristic(z, seed=cfg.seed)
    ctx = RidgeContext.build(gram(KernelSpec(bandwidth=bandwidth), z), cfg.zeta)
    eps1, eps2 = _resolve_radii(cfg, len(r))
    return _Problem(
        states=s, actions=a, rewards=r, next_states=s_next, ctx=ctx,
        nu_states=cfg.init_state_sample, gamma=cfg.gamma,
        cball=cfg.cball, eps1=eps1, eps2=eps2,
    )


def _init_members(dataset: TransitionDataset, cfg: SteelConfig):
    bound = cfg.q_bound
    if bound is None:
        bound = dataset.reward_bound() / (1.0 - cfg.gamma)
        bound = max(bound, 1e-12)
    q = ParamQ(
        feature_map=cfg.q_features,
        theta=np.zeros(cfg.q_features.output_dim),
        clip_bound=bound,
        state_dim=dataset.state_dim,
        action_scaled=cfg.demand_reward,
    )
    policy = ParamPolicy(
        feature_map=cfg.policy_features,
        psi=np.zeros((cfg.policy_features.output_dim, len(cfg.action_low))),
        action_low=np.asarray(cfg.action_low, dtype=float),
        action_high=np.asarray(cfg.action_high, dtype=float),
    )
    return q, policy


STALL_WINDOW = 10


def saddle_loop(eval_fn, q, policy, cfg: SteelConfig, lr_rho: np.ndarray):
    """Primal-dual iteration shared by the two-set and single-set solvers.

    ``eval_fn(q, policy)`` supplies the Lagrangian building blocks.  Returns
    (best iterate, trace): the outer iterate with the largest Lagrangian,
    i.e. the best pessimistic value seen.
    """
    rho = np.zeros(len(lr_rho))
    trace, history = [], []
    best = None
    for it in range(cfg.max_outer_iters):
        for _ in range(cfg.inner_q_steps):
            parts = eval_fn(q, policy)
            dtheta, _ = _grads_from_parts(parts, rho)
            q.theta = q.theta - cfg.lr_q * dtheta

        parts = eval_fn(q, policy)
        cons = np.asarray(parts["cons"], dtype=float)
        rho = np.clip(rho + lr_rho * cons, 0.0, cfg.rho_max)

        _, dpsi = _grads_from_parts(parts, rho)
        policy.psi = policy.psi + cfg.lr_pi * dpsi

        parts = eval_fn(q, policy)
        lag = _lagrangian_from_parts(parts, rho)
        if not np.isfinite(lag):
            raise FloatingPointError(f"non-finite objective at outer iteration {it}")
        trace.append(
            {
                "iter": it,
                "lagrangian": lag,
                "cons": [float(c) for c in parts["cons"]],
                "rho": rho.tolist(),
            }
        )
        if best is None or lag > best[0]:
            best = (lag, q.theta.copy(), policy.psi.copy(), rho.copy())
        history.append(lag)
        if len(history) > STALL_WINDOW:
            prev = history[-1 - STALL_WINDOW]
            if abs(lag - prev) / max(1.0, abs(prev)) < cfg.tol:
                break
    return best, trace


def steel_optimize(dataset: TransitionDataset, cfg: SteelConfig) -> SteelResult:
    """Primal-dual pessimistic policy search over both uncertainty sets."""
    if cfg.two_phase_c:
        cfg = replace(cfg, cball=_two_phase_cball(dataset, cfg), two_phase_c=False)
    problem = _build_problem(dataset, cfg)
    q, policy = _init_members(dataset, cfg)
    lr_rho = np.asarray([0.0 if cfg.rho1_fixed else cfg.lr_rho1, cfg.lr_rho2])
    best, trace = saddle_loop(lambda qq, pp: _evaluate(problem, qq, pp), q, policy, cfg, lr_rho)
    lag, theta, psi, rho = best
    q.theta = theta
    policy.psi = psi
    return SteelResult(
        policy=policy,
        q=q,
        duals=DualVars(rho1=float(rho[0]), rho2=float(rho[1])),
        trace=trace,
        pessimistic_value=float(lag),
    )


def _two_phase_cball(dataset: TransitionDataset, cfg: SteelConfig) -> float:
    """Pre-run with the weighted-residual constraint off, then set the ball
    radius to the estimated MMD between the batch and the distribution the
    pre-run policy induces."""
    pre = steel_optimize(dataset, replace(cfg, two_phase_c=False, rho1_fixed=True))
    batch = dataset.state_actions()
    if cfg.gamma == 0.0:
        states = cfg.init_state_sample
    else:
        from ._models import fit_linear_gaussian, visitation_states

        model = fit_linear_gaussian(dataset)
        states = visitation_states(model, pre.policy, cfg.init_state_sample,
                                   cfg.gamma, seed=cfg.seed)
    target = np.hstack([states, pre.policy.act(states)])
    bandwidth = cfg.kernel_bandwidth or median_heuristic(batch, seed=cfg.seed)
    c = math.sqrt(mmd2(batch, target, KernelSpec(bandwidth=bandwidth), "biased"))
    return max(c, 1e-6)
