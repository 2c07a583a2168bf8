"""Terminal soft Q-function and its fitted-iteration update.

Also provides a tabular soft-value fixed-point solver used as an
independent oracle in the tests: on a finite MDP the soft value satisfies

    V(s) = -lam * log sum_a prior(a) * exp(-(cost(s,a) + g * E[V(s')]) / lam)

which is the log-sum-exp ("soft-min") analogue of value iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .nets import (
    MlpParams,
    OptimizerState,
    backward,
    forward,
    init_mlp,
    optimizer_step,
)


@dataclass
class SoftQFunction:
    """Q(s,a) approximator with an optional Polyak-averaged target copy."""

    params: MlpParams
    opt: OptimizerState
    target_params: MlpParams | None = None
    polyak: float = 0.995

    @classmethod
    def create(
        cls,
        state_dim: int,
        action_dim: int,
        rng,
        hidden=(64, 64),
        lr=3e-4,
        use_target=True,
        polyak=0.995,
        optimizer="adam",
        activation="relu",
    ) -> "SoftQFunction":
        params = init_mlp([state_dim + action_dim, *hidden, 1], rng, activation)
        return cls(
            params=params,
            opt=OptimizerState.for_params(params, lr=lr, method=optimizer),
            target_params=params.copy() if use_target else None,
            polyak=polyak,
        )


def q_value(q: SoftQFunction, s, a, use_target=False) -> np.ndarray:
    """Q(s,a) for a single pair or a batch; returns scalar(s)."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise ValueError("non-finite input to q_value")
    x = np.concatenate([s, a], axis=-1)
    params = q.target_params if (use_target and q.target_params is not None) else q.params
    return forward(params, x)[..., 0]


def build_targets(costs, dones, v_mppi, gamma):
    """Fitted-iteration targets y = cost + gamma * V(s'), cut at termination."""
    costs = np.asarray(costs, dtype=float)
    v_mppi = np.asarray(v_mppi, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if not np.all(np.isfinite(v_mppi)):
        raise ValueError("non-finite value estimate in targets")
    return np.where(dones, costs, costs + gamma * v_mppi)


def q_update(q: SoftQFunction, s, a, targets) -> float:
    """One MSE regression step of Q onto targets; returns the pre-step loss."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    targets = np.asarray(targets, dtype=float)
    x = np.concatenate([s, a], axis=-1)
    pred = forward(q.params, x)[:, 0]
    err = pred - targets
    loss = float(np.mean(err**2))
    if not np.isfinite(loss):
        raise ValueError("non-finite Q loss")
    upstream = (2.0 * err / err.size)[:, None]
    grads, _ = backward(q.params, x, upstream)
    optimizer_step(q.opt, q.params, grads)
    if q.target_params is not None:
        rho = q.polyak
        for tw, w in zip(q.target_params.weights, q.params.weights):
            tw *= rho
            tw += (1.0 - rho) * w
        for tb, b in zip(q.target_params.biases, q.params.biases):
            tb *= rho
            tb += (1.0 - rho) * b
    return loss


def discrete_soft_value_oracle(
    costs,
    transitions,
    prior,
    lam,
    gamma,
    tol=1e-10,
    max_sweeps=1_000_000,
):
    """Soft value table of a finite MDP by fixed-point iteration.

    costs: (S, A) stage costs; transitions: (S, A, S) row-stochastic;
    prior: (A,) action pmf. Returns V of shape (S,).
    """
    costs = np.asarray(costs, dtype=float)
    transitions = np.asarray(transitions, dtype=float)
    prior = np.asarray(prior, dtype=float)
    if lam <= 0 or not (0 < gamma < 1):
        raise ValueError("need lam > 0 and 0 < gamma < 1")
    n_states = costs.shape[0]
    log_prior = np.log(prior)
    v = np.zeros(n_states)
    for _ in range(max_sweeps):
        q = costs + gamma * transitions @ v  # (S, A)
        v_next = -lam * logsumexp(log_prior[None, :] - q / lam, axis=1)
        if np.max(np.abs(v_next - v)) < tol:
            return v_next
        v = v_next
    raise RuntimeError("soft value iteration did not converge")


def discrete_soft_q(costs, transitions, v, gamma):
    """Q(s,a) = cost(s,a) + gamma * E[V(s')] for a tabular MDP."""
    return np.asarray(costs, dtype=float) + gamma * np.asarray(transitions) @ v
