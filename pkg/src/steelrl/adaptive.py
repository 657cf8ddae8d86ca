"""Two-step adaptive variant: a constraint-light pilot run, estimation of the
absolutely-continuous / singular decomposition of the pilot policy's
visitation measure, and a second run with a single self-calibrated
constraint set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import qmc

from . import _core
from ._models import fit_linear_gaussian, visitation_sample
from .kernels import KernelSpec, gram, median_heuristic, mmd2_weighted
from .residual import residual_vector, rkhs_norm_sq
from .steel import (
    DualVars,
    SteelConfig,
    SteelResult,
    _build_problem,
    _init_members,
    base_parts,
    saddle_loop,
    steel_optimize,
)

KDE_GRID_SIZE = 4096  # scrambled low-discrepancy evaluation grid
GRID_ENLARGE = 0.10
LARGE_EPS2_FACTOR = 10.0
EPS0_FLOOR_FACTOR = 1e-6


@dataclass(frozen=True)
class DecompositionEstimate:
    """Estimated split of the pilot policy's visitation measure into a part
    covered by the batch and a singular remainder."""

    lambda1_mass: float
    lambda2_mass: float
    omega_hat: object  # callable over stacked (s, a) rows
    lambda1_points: np.ndarray
    lambda1_weights: np.ndarray
    lambda2_points: np.ndarray
    lambda2_weights: np.ndarray
    delta_hat: float
    kernel_spec: KernelSpec

    def __post_init__(self):
        if not (0.0 <= self.lambda1_mass <= 1.0):
            raise ValueError("lambda1 mass must lie in [0, 1]")
        if abs(self.lambda1_mass + self.lambda2_mass - 1.0) > 1e-9:
            raise ValueError("masses must sum to 1")
        if self.delta_hat < 0:
            raise ValueError("delta must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "lambda1_mass": self.lambda1_mass,
            "lambda2_mass": self.lambda2_mass,
            "delta_hat": self.delta_hat,
            "n_lambda1": len(self.lambda1_points),
            "n_lambda2": len(self.lambda2_points),
            "bandwidth": self.kernel_spec.bandwidth,
        }


def stage0_eps2(dataset, cfg: SteelConfig) -> float:
    """A deliberately slack radius for the pilot run: a multiple of the
    residual-operator norm of the all-zero Q-function."""
    from .steel import _subsample

    s, a, r, _ = _subsample(dataset, cfg.nystrom_cap, cfg.seed)
    z = np.hstack([s, a])
    bandwidth = cfg.kernel_bandwidth or median_heuristic(z, seed=cfg.seed)
    g = gram(KernelSpec(bandwidth=bandwidth), z)
    return max(LARGE_EPS2_FACTOR * math.sqrt(rkhs_norm_sq(g, r, cfg.zeta)), 1e-6)


def stage0(dataset, cfg: SteelConfig) -> SteelResult:
    """Pilot run: weighted-residual constraint off, slack RKHS radius."""
    return steel_optimize(
        dataset, replace(cfg, rho1_fixed=True, two_phase_c=False, eps2=stage0_eps2(dataset, cfg))
    )


def _sobol_grid(points: np.ndarray, seed: int) -> tuple[np.ndarray, float]:
    """Scrambled low-discrepancy grid over the 10%-enlarged bounding box."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    lo = lo - 0.5 * GRID_ENLARGE * span
    hi = hi + 0.5 * GRID_ENLARGE * span
    sampler = qmc.Sobol(d=points.shape[1], scramble=True, seed=seed)
    unit = sampler.random_base2(int(math.log2(KDE_GRID_SIZE)))
    volume = float(np.prod(hi - lo))
    return lo + unit * (hi - lo), volume


def estimate_decomposition(dataset, policy, gamma: float, nu_sample, cfg: SteelConfig) -> DecompositionEstimate:
    """Estimate the covered mass, the density-ratio weight function, the
    singular remainder sample and its discrepancy from the batch.

    The weight function is the truncated ratio of kernel density estimates of
    the policy-induced and batch state-action distributions; the covered mass
    integrates weight times batch density over a quasi-random grid.
    """
    batch = dataset.state_actions()
    nu_sample = np.atleast_2d(np.asarray(nu_sample, dtype=float))

    if gamma == 0.0:
        t_states, t_actions, t_weights = visitation_sample(None, policy, nu_sample, 0.0)
    else:
        model = fit_linear_gaussian(dataset)
        t_states, t_actions, t_weights = visitation_sample(
            model, policy, nu_sample, gamma, seed=cfg.seed
        )
    target = np.hstack([t_states, t_actions])

    bandwidth = cfg.kernel_bandwidth or median_heuristic(batch, seed=cfg.seed)
    spec = KernelSpec(bandwidth=bandwidth)
    grid, volume = _sobol_grid(np.vstack([batch, target]), seed=cfg.seed)

    batch_c = np.ascontiguousarray(batch)
    target_c = np.ascontiguousarray(target)
    uniform = np.full(len(batch), 1.0 / len(batch))
    t_weights = np.ascontiguousarray(t_weights)

    def density_batch(z):
        return _core.gaussian_kde(np.ascontiguousarray(z), batch_c, uniform, bandwidth)

    def density_target(z):
        return _core.gaussian_kde(np.ascontiguousarray(z), target_c, t_weights, bandwidth)

    db_grid = density_batch(grid)
    dg_grid = density_target(grid)
    if db_grid.max() <= 0.0 or dg_grid.max() <= 0.0:
        raise ValueError("degenerate density estimate")

    tiny = 1e-300

    def omega_hat(z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.minimum(density_target(z) / np.maximum(density_batch(z), tiny), cfg.omega_cap)

    lambda1_mass = float(np.clip(volume * np.mean(
        np.minimum(dg_grid / np.maximum(db_grid, tiny), cfg.omega_cap) * db_grid
    ), 0.0, 1.0))
    lambda2_mass = 1.0 - lambda1_mass

    w_batch = omega_hat(batch)
    lam1_weights = w_batch / w_batch.sum() if w_batch.sum() > 0 else uniform

    db_t = density_batch(target)
    dg_t = np.maximum(density_target(target), tiny)
    resid_w = t_weights * np.maximum(0.0, 1.0 - np.minimum(dg_t / np.maximum(db_t, tiny), cfg.omega_cap) * db_t / dg_t)
    total = resid_w.sum()
    if lambda2_mass < 1e-12 or total <= 0.0:
        lambda2_points = np.empty((0, target.shape[1]))
        lambda2_weights = np.empty(0)
        delta_hat = 0.0
    else:
        lambda2_points = target
        lambda2_weights = resid_w / total
        delta_hat = math.sqrt(mmd2_weighted(lambda2_points, lambda2_weights, batch, uniform, spec))

    return DecompositionEstimate(
        lambda1_mass=lambda1_mass,
        lambda2_mass=lambda2_mass,
        omega_hat=omega_hat,
        lambda1_points=batch,
        lambda1_weights=lam1_weights,
        lambda2_points=lambda2_points,
        lambda2_weights=lambda2_weights,
        delta_hat=delta_hat,
        kernel_spec=spec,
    )


def epsilon0(dataset, policy, q, decomp: DecompositionEstimate, zeta: float, gamma: float) -> float:
    """Self-calibrated radius: the adaptive constraint functional evaluated
    at the pilot pair, floored at a small positive value so the feasible set
    cannot be empty."""
    y = residual_vector(dataset, policy, q, gamma)
    g = gram(decomp.kernel_spec, dataset.state_actions())
    raw = _constraint_functional(
        y, decomp.lambda1_weights, decomp.lambda1_mass, decomp.lambda2_mass,
        decomp.delta_hat, g, zeta,
    )
    floor = EPS0_FLOOR_FACTOR * dataset.reward_bound() / (1.0 - gamma)
    return max(raw, floor)


def _constraint_functional(y, lam1_weights, lam1_mass, lam2_mass, delta, gram_matrix, zeta) -> float:
    t1 = lam1_mass * float(lam1_weights @ y)
    t2 = lam2_mass * float(np.mean(y))
    t3 = lam2_mass * delta * math.sqrt(rkhs_norm_sq(gram_matrix, y, zeta))
    return t1 + t2 + t3


def adaptive_steel(dataset, cfg: SteelConfig) -> SteelResult:
    """Pilot run, decomposition estimate, self-calibrated radius, then a
    second saddle-point run with the single adaptive constraint."""
    pilot = stage0(dataset, cfg)
    decomp = estimate_decomposition(dataset, pilot.policy, cfg.gamma, cfg.init_state_sample, cfg)
    eps0 = epsilon0(dataset, pilot.policy, pilot.q, decomp, cfg.zeta, cfg.gamma)

    problem = _build_problem(dataset, replace(cfg, kernel_bandwidth=decomp.kernel_spec.bandwidth))
    q, policy = _init_members(dataset, cfg)

    # omega weights on the (possibly subsampled) rows backing the problem
    z_rows = np.hstack([problem.states, problem.actions])
    w = decomp.omega_hat(z_rows)
    lam1_w = w / w.sum() if w.sum() > 0 else np.full(len(z_rows), 1.0 / len(z_rows))
    lam1, lam2, delta = decomp.lambda1_mass, decomp.lambda2_mass, decomp.delta_hat
    nt = problem.nt

    def eval_fn(qq, pp):
        parts = base_parts(problem, qq, pp)
        y = parts["y"]
        my = problem.ctx.smoothed(y)
        norm = math.sqrt(max(float(y @ my), 0.0))
        g = lam1 * float(lam1_w @ y) + lam2 * float(np.mean(y)) + lam2 * delta * norm
        dg_dy = lam1 * lam1_w + (lam2 / nt) * np.ones(nt)
        if norm > 1e-15:
            dg_dy = dg_dy + lam2 * delta * (my / norm)
        parts["cons"] = (g - eps0,)
        parts["dcons_dy"] = (dg_dy,)
        return parts

    best, trace = saddle_loop(eval_fn, q, policy, cfg, np.asarray([cfg.lr_rho2]))
    lag, theta, psi, rho = best
    q.theta = theta
    policy.psi = psi
    return SteelResult(
        policy=policy,
        q=q,
        duals=DualVars(rho1=float(rho[0]), rho2=0.0),
        trace=trace,
        pessimistic_value=float(lag),
    )
