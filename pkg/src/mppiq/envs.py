"""Desk-scale continuous-control tasks and an LQR oracle.

Two tasks with known quadratic-style costs:

* "double-integrator": exact discrete-time linear point mass, dt=0.05,
  force in [-1, 1]. The optimum is checkable against the discounted LQR
  solution.
* "pendulum": torque-limited swing-up, semi-implicit Euler, dt=0.05,
  torque in [-2, 2]. Nonlinear and exploration-requiring.

Dynamics and costs are vectorized over a leading batch axis so planner
rollouts can step many states at once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

DT = 0.05
EPISODE_HORIZON = 200


class UnknownEnvError(KeyError):
    pass


@dataclass
class EnvState:
    x: np.ndarray
    t: int = 0


@dataclass
class StepResult:
    next_x: np.ndarray
    cost: float
    done: bool


class DoubleIntegrator:
    """Point mass on a line: s = (position, velocity), a = force."""

    env_id = "double-integrator"
    state_dim = 2
    action_dim = 1
    action_low = np.array([-1.0])
    action_high = np.array([1.0])

    # exact zero-order-hold discretization of \ddot{p} = a
    A = np.array([[1.0, DT], [0.0, 1.0]])
    B = np.array([[0.5 * DT * DT], [DT]])
    Q = np.eye(2)
    R = 0.1 * np.eye(1)

    def reset(self, rng) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=2)

    def dynamics(self, x, a):
        return x @ self.A.T + a @ self.B.T

    def cost(self, x, a):
        # Q = I, R = 0.1 I; spelled out for rollout speed
        return (x * x).sum(axis=-1) + 0.1 * (a * a).sum(axis=-1)


class Pendulum:
    """Torque-limited pendulum swing-up; theta=0 is upright."""

    env_id = "pendulum"
    state_dim = 2
    action_dim = 1
    action_low = np.array([-2.0])
    action_high = np.array([2.0])

    g = 10.0
    m = 1.0
    length = 1.0
    max_speed = 8.0

    def reset(self, rng) -> np.ndarray:
        theta = rng.uniform(-np.pi, np.pi)
        theta_dot = rng.uniform(-1.0, 1.0)
        return np.array([theta, theta_dot])

    def dynamics(self, x, a):
        theta = x[..., 0]
        theta_dot = x[..., 1]
        torque = a[..., 0]
        acc = (
            3.0 * self.g / (2.0 * self.length) * np.sin(theta)
            + 3.0 / (self.m * self.length**2) * torque
        )
        new_dot = np.clip(theta_dot + DT * acc, -self.max_speed, self.max_speed)
        new_theta = wrap_angle(theta + DT * new_dot)
        return np.stack([new_theta, new_dot], axis=-1)

    def cost(self, x, a):
        theta = wrap_angle(x[..., 0])
        return theta**2 + 0.1 * x[..., 1] ** 2 + 0.001 * a[..., 0] ** 2


def wrap_angle(theta):
    return (theta + np.pi) % (2.0 * np.pi) - np.pi


_ENVS = {
    DoubleIntegrator.env_id: DoubleIntegrator(),
    Pendulum.env_id: Pendulum(),
}


def get_env(env_id: str):
    try:
        return _ENVS[env_id]
    except KeyError:
        raise UnknownEnvError(f"unknown env '{env_id}'") from None


def env_reset(env_id: str, seed: int) -> EnvState:
    env = get_env(env_id)
    rng = np.random.default_rng(seed)
    return EnvState(env.reset(rng), 0)


def env_step(env_id: str, state: EnvState, action) -> StepResult:
    env = get_env(env_id)
    a = np.asarray(action, dtype=float)
    if a.shape != (env.action_dim,):
        raise ValueError(f"action shape {a.shape} != ({env.action_dim},)")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite action")
    a = np.clip(a, env.action_low, env.action_high)
    cost = float(env.cost(state.x, a))
    next_x = env.dynamics(state.x, a)
    done = state.t + 1 >= EPISODE_HORIZON
    return StepResult(next_x, cost, done)


def dump_trajectory(path, states, actions, costs) -> None:
    """CSV dump with columns t, s..., a..., cost."""
    states = np.asarray(states)
    actions = np.asarray(actions)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        s_cols = [f"s{i}" for i in range(states.shape[1])]
        a_cols = [f"a{i}" for i in range(actions.shape[1])]
        writer.writerow(["t"] + s_cols + a_cols + ["cost"])
        for t, (s, a, c) in enumerate(zip(states, actions, costs)):
            writer.writerow([t] + list(s) + list(a) + [c])


@dataclass
class LqrSolution:
    K: np.ndarray
    P: np.ndarray


def solve_lqr(A, B, Q, R, gamma=1.0, tol=1e-10, max_iter=100_000) -> LqrSolution:
    """Discounted discrete-time Riccati fixed point.

    Iterates P <- Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA until the
    sup-norm residual drops below tol. Gain K satisfies the greedy action
    a = -K s for value s'Ps.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        BtPA = B.T @ P @ A
        gain_core = np.linalg.solve(R + gamma * B.T @ P @ B, BtPA)
        P_next = Q + gamma * A.T @ P @ A - gamma**2 * A.T @ P @ B @ gain_core
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            break
        P = P_next
    else:
        raise RuntimeError("Riccati iteration did not converge")
    K = gamma * np.linalg.solve(R + gamma * B.T @ P @ B, B.T @ P @ A)
    return LqrSolution(K=K, P=P)


def riccati_residual(P, A, B, Q, R, gamma=1.0) -> float:
    BtPA = B.T @ P @ A
    rhs = Q + gamma * A.T @ P @ A - gamma**2 * A.T @ P @ B @ np.linalg.solve(
        R + gamma * B.T @ P @ B, BtPA
    )
    return float(np.max(np.abs(P - rhs)))
