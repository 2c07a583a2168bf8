"""Ensemble of one-step dynamics models trained on observed transitions.

Each member predicts a normalized next-state delta from normalized (s, a).
Members are independently initialized and each training step fits every
member to its own bootstrap resample of the batch, which keeps the ensemble
diverse. Planner rollouts sample a member uniformly at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import (
    MlpParams,
    OptimizerState,
    backward,
    forward,
    init_mlp,
    optimizer_step,
)

STD_FLOOR = 1e-6


@dataclass
class Normalizer:
    """Running per-dimension mean/std (Welford, batched updates)."""

    dim: int
    count: float = 0.0
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros(self.dim)

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(batch)
        n = batch.shape[0]
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * n / tot
        self.m2 = self.m2 + b_m2 + delta**2 * self.count * n / tot
        self.count = tot
        self._std_cache = None

    @property
    def std(self) -> np.ndarray:
        cached = getattr(self, "_std_cache", None)
        if cached is None:
            if self.count < 2:
                cached = np.ones(self.dim)
            else:
                cached = np.maximum(np.sqrt(self.m2 / self.count), STD_FLOOR)
            self._std_cache = cached
        return cached

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, z):
        return z * self.std + self.mean

    def to_dict(self):
        return {
            "dim": self.dim,
            "count": self.count,
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            dim=d["dim"],
            count=d["count"],
            mean=np.array(d["mean"], dtype=float),
            m2=np.array(d["m2"], dtype=float),
        )


@dataclass
class DynamicsEnsemble:
    """K independent next-state-delta predictors sharing normalizers."""

    members: list[MlpParams]
    opts: list[OptimizerState]
    in_norm: Normalizer
    out_norm: Normalizer
    bootstrap: bool = True

    @classmethod
    def create(
        cls,
        state_dim: int,
        action_dim: int,
        n_members: int,
        rng,
        hidden=(64, 64),
        lr=3e-4,
        optimizer="adam",
        bootstrap=True,
        activation="relu",
    ) -> "DynamicsEnsemble":
        if n_members < 1:
            raise ValueError("need at least one ensemble member")
        members = [
            init_mlp([state_dim + action_dim, *hidden, state_dim], rng, activation)
            for _ in range(n_members)
        ]
        opts = [
            OptimizerState.for_params(m, lr=lr, method=optimizer) for m in members
        ]
        return cls(
            members=members,
            opts=opts,
            in_norm=Normalizer(state_dim + action_dim),
            out_norm=Normalizer(state_dim),
            bootstrap=bootstrap,
        )

    @property
    def n_members(self) -> int:
        return len(self.members)

    def update_normalizers(self, s, a, s_next) -> None:
        s = np.atleast_2d(s)
        a = np.atleast_2d(a)
        s_next = np.atleast_2d(s_next)
        self.in_norm.update(np.concatenate([s, a], axis=-1))
        self.out_norm.update(s_next - s)

    def predict(self, member: int, s, a) -> np.ndarray:
        """s' = s + predicted delta, for one member (batched over rows)."""
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
            raise ValueError("non-finite input to predict")
        return self._predict(member, s, a)

    def _predict(self, member: int, s, a) -> np.ndarray:
        x = self.in_norm.normalize(np.concatenate([s, a], axis=-1))
        delta = self.out_norm.denormalize(forward(self.members[member], x))
        return s + delta

    def predict_mixed(self, member_idx: np.ndarray, s, a) -> np.ndarray:
        """Per-row member assignment; rows are grouped per member internally."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if self.n_members == 1:
            return self._predict(0, s, a)
        # group rows per member: one gather + one scatter instead of K masks
        order = np.argsort(member_idx, kind="stable")
        counts = np.bincount(member_idx, minlength=self.n_members)
        s_ord = s[order]
        a_ord = a[order]
        out_ord = np.empty_like(s_ord)
        start = 0
        for k, c in enumerate(counts):
            if c:
                sl = slice(start, start + c)
                out_ord[sl] = self._predict(k, s_ord[sl], a_ord[sl])
                start += c
        out = np.empty_like(s)
        out[order] = out_ord
        return out


def sample_member(rng, n_members: int) -> int:
    if n_members < 1:
        raise ValueError("n_members must be >= 1")
    return int(rng.integers(0, n_members))


def ensemble_train_step(ensemble: DynamicsEnsemble, s, a, s_next, rng) -> float:
    """One optimizer step per member; returns the pre-step mean raw-space MSE."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    s_next = np.atleast_2d(np.asarray(s_next, dtype=float))
    n = s.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    x_all = ensemble.in_norm.normalize(np.concatenate([s, a], axis=-1))
    z_all = ensemble.out_norm.normalize(s_next - s)

    mse_raw = 0.0
    for params in ensemble.members:
        pred = s + ensemble.out_norm.denormalize(forward(params, x_all))
        mse_raw += float(np.mean((pred - s_next) ** 2))
    mse_raw /= ensemble.n_members

    for params, opt in zip(ensemble.members, ensemble.opts):
        if ensemble.bootstrap:
            idx = rng.integers(0, n, size=n)
            x, z = x_all[idx], z_all[idx]
        else:
            x, z = x_all, z_all
        err = forward(params, x) - z
        loss = float(np.mean(err**2))
        if not np.isfinite(loss):
            raise ValueError("non-finite model loss")
        upstream = 2.0 * err / err.size
        grads, _ = backward(params, x, upstream)
        optimizer_step(opt, params, grads)
    return mse_raw


class ExactModel:
    """Single-'member' model backed by the true env dynamics (for oracles)."""

    def __init__(self, env):
        self.env = env
        self.n_members = 1

    def predict(self, member: int, s, a):
        return self.env.dynamics(np.asarray(s, dtype=float), np.asarray(a, dtype=float))

    def predict_mixed(self, member_idx, s, a):
        return self.predict(0, s, a)
