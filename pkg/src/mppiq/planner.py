"""Sampling-based open-loop planner with a learned terminal value.

Each refinement round draws N zero-mean Gaussian noise sequences around the
current plan, rolls them out under the (ensemble) dynamics model while
accumulating discounted running cost plus a terminal Q value, and shifts the
plan by the exponentially cost-weighted average of the noises. The log of
the mean unnormalized weight gives a free-energy value estimate of the
start state, which doubles as the fitted-Q target value.

All core routines are batched over a leading axis of independent planning
problems so that a replay batch of value targets is refined in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PlannerError(RuntimeError):
    pass


@dataclass
class PlannerConfig:
    n_samples: int = 512
    horizon: int = 8
    lam: float = 1.0
    gamma: float = 0.99
    sigma: np.ndarray = field(default_factory=lambda: np.array([0.3]))
    iterations: int = 2
    action_low: np.ndarray = field(default_factory=lambda: np.array([-1.0]))
    action_high: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    member_resample: str = "step"  # or "trajectory"
    antithetic: bool = False  # mirrored noise pairs (variance reduction)

    def __post_init__(self):
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        self.action_low = np.atleast_1d(np.asarray(self.action_low, dtype=float))
        self.action_high = np.atleast_1d(np.asarray(self.action_high, dtype=float))
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma entries must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.member_resample not in ("step", "trajectory"):
            raise ValueError("member_resample must be 'step' or 'trajectory'")
        if self.antithetic and self.n_samples % 2 != 0:
            raise ValueError("antithetic sampling needs an even n_samples")

    @property
    def action_dim(self) -> int:
        return self.sigma.shape[0]


@dataclass
class PlanResult:
    plan: np.ndarray  # (H+1, action_dim)
    v_mppi: float
    ess: float
    min_cost: float
    mean_cost: float


def zero_plan(cfg: PlannerConfig) -> np.ndarray:
    return np.zeros((cfg.horizon + 1, cfg.action_dim))


def shift_plan(plan: np.ndarray) -> np.ndarray:
    """Drop the executed first action; pad with a zero action at the end."""
    return np.concatenate([plan[1:], np.zeros((1, plan.shape[1]))])


def rollout_costs(s0, plans, noises, model, q_fn, cost_fn, cfg: PlannerConfig, rng):
    """Discounted rollout costs, shape (B, N).

    s0: (B, state_dim); plans: (B, H+1, adim); noises: (B, N, H+1, adim).
    Each of the B*N samples steps t = 0..H-1 under a freshly drawn ensemble
    member, accumulating gamma^t * cost(s_t, a_t), then adds
    gamma^H * Q(s_H, a_H). Samples whose state goes non-finite get cost +inf.
    """
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    b, n = noises.shape[0], noises.shape[1]
    h = cfg.horizon
    states = np.broadcast_to(s0[:, None, :], (b, n, s0.shape[1])).reshape(b * n, -1).copy()
    costs = np.zeros((b, n))
    alive = np.ones(b * n, dtype=bool)

    if cfg.member_resample == "trajectory":
        traj_members = rng.integers(0, model.n_members, size=b * n)

    all_alive = True
    discount = 1.0
    for t in range(h):
        actions = np.clip(
            plans[:, None, t, :] + noises[:, :, t, :], cfg.action_low, cfg.action_high
        ).reshape(b * n, -1)
        step_cost = cost_fn(states, actions)
        if not all_alive:
            step_cost = np.where(alive, step_cost, 0.0)
        costs += (discount * step_cost).reshape(b, n)
        if cfg.member_resample == "step":
            members = rng.integers(0, model.n_members, size=b * n)
        else:
            members = traj_members
        states = model.predict_mixed(members, states, actions)
        if not np.isfinite(states).all():
            bad = ~np.all(np.isfinite(states), axis=-1)
            alive &= ~bad
            all_alive = False
            states[~alive] = 0.0
        discount *= cfg.gamma

    terminal_actions = np.clip(
        plans[:, None, h, :] + noises[:, :, h, :], cfg.action_low, cfg.action_high
    ).reshape(b * n, -1)
    terminal = q_fn(states, terminal_actions)
    if not all_alive:
        terminal = np.where(alive, terminal, 0.0)
    costs += (discount * terminal).reshape(b, n)
    if not all_alive:
        costs = costs.reshape(b * n)
        costs[~alive] = np.inf
        costs = costs.reshape(b, n)
    return costs


def compute_weights(costs, plans, noises, lam, sigma):
    """Stabilized importance weights.

    The exponent argument of sample n is
        arg_n = J_n + (lam/2) * sum_t u_t' Sigma^-1 (u_t + 2 eps_t^(n))
    with the control-effort sum running over all H+1 timesteps. Weights are
    exp(-(arg_n - shift)/lam) with shift = min over finite args, so that
    shift - lam*log(mean weight) reconstructs -lam*log(eta) exactly.

    Returns (weights (B,N), eta (B,), shift (B,)).
    """
    costs = np.asarray(costs, dtype=float)
    inv_var = 1.0 / (np.asarray(sigma, dtype=float) ** 2)
    u_term = np.einsum("btd,d->b", plans**2, inv_var)
    cross = 2.0 * np.einsum("btd,d,bntd->bn", plans, inv_var, noises)
    effort = 0.5 * lam * (u_term[:, None] + cross)
    args = costs + effort

    finite = np.isfinite(args)
    if not np.all(np.any(finite, axis=1)):
        raise PlannerError("all rollout samples diverged (every weight is zero)")
    shift = np.min(np.where(finite, args, np.inf), axis=1)
    weights = np.where(finite, np.exp(-(args - shift[:, None]) / lam), 0.0)
    eta = weights.mean(axis=1)
    return weights, eta, shift


def update_controls(plans, noises, weights, eta, cfg: PlannerConfig):
    """u_t <- u_t + sum_n w_n eps_t^(n) / (eta N), clamped to bounds."""
    if np.any(eta <= 0):
        raise PlannerError("zero normalization constant")
    n = weights.shape[1]
    shift = np.einsum("bn,bntd->btd", weights, noises) / (eta[:, None, None] * n)
    return np.clip(plans + shift, cfg.action_low, cfg.action_high)


def plan_batch(s0, warm_plans, model, q_fn, cost_fn, cfg: PlannerConfig, rng):
    """Refine B plans simultaneously; returns a list of PlanResult.

    With iterations=0 the warm plans are returned untouched and the value
    estimate comes from a single weight evaluation of them.
    """
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    b = s0.shape[0]
    plans = np.array(warm_plans, dtype=float).reshape(b, cfg.horizon + 1, cfg.action_dim)
    rounds = max(cfg.iterations, 1)
    do_update = cfg.iterations > 0

    for _ in range(rounds):
        if cfg.antithetic:
            half = rng.standard_normal(
                (b, cfg.n_samples // 2, cfg.horizon + 1, cfg.action_dim)
            )
            noises = np.concatenate([half, -half], axis=1)
        else:
            noises = rng.standard_normal(
                (b, cfg.n_samples, cfg.horizon + 1, cfg.action_dim)
            )
        noises *= cfg.sigma
        costs = rollout_costs(s0, plans, noises, model, q_fn, cost_fn, cfg, rng)
        weights, eta, shift = compute_weights(costs, plans, noises, cfg.lam, cfg.sigma)
        if do_update:
            plans = update_controls(plans, noises, weights, eta, cfg)

    v_mppi = shift - cfg.lam * np.log(eta)
    norm_w = weights / weights.sum(axis=1, keepdims=True)
    ess = 1.0 / np.sum(norm_w**2, axis=1)
    finite_costs = np.where(np.isfinite(costs), costs, np.nan)
    return [
        PlanResult(
            plan=plans[i],
            v_mppi=float(v_mppi[i]),
            ess=float(ess[i]),
            min_cost=float(np.nanmin(finite_costs[i])),
            mean_cost=float(np.nanmean(finite_costs[i])),
        )
        for i in range(b)
    ]


def plan(s0, warm_plan, model, q_fn, cost_fn, cfg: PlannerConfig, rng) -> PlanResult:
    """Single-problem convenience wrapper around plan_batch."""
    return plan_batch(
        np.asarray(s0)[None, :], np.asarray(warm_plan)[None], model, q_fn, cost_fn, cfg, rng
    )[0]
