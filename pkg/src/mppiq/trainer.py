"""Training orchestration: online planner control, fitted-Q updates with
warm-started value targets, ensemble model learning, metrics, checkpoints,
and the steps-per-second benchmark."""

from __future__ import annotations

import csv
import json
import math
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import envs
from .buffer import ReplayBuffer, Transition
from .ensemble import DynamicsEnsemble, ExactModel, ensemble_train_step
from .planner import PlannerConfig, plan, plan_batch, shift_plan, zero_plan
from .softq import SoftQFunction, build_targets, q_update, q_value

ARTIFACT_VERSION = "0.1.0"


@dataclass
class TrainConfig:
    env_id: str = "pendulum"
    total_steps: int = 50_000
    updates_per_step: int = 1
    batch_size: int = 16
    warmup_steps: int = 1000
    buffer_capacity: int = 100_000
    gamma: float = 0.99
    seed: int = 0
    metrics_every: int = 200
    hidden: tuple = (64, 64)
    activation: str = "relu"
    q_lr: float = 3e-4
    # final/initial Q learning-rate ratio, interpolated linearly over the
    # run; 1.0 means a flat rate. Annealing lets the value fit settle
    # instead of wandering in an optimizer-noise ball at the end
    q_lr_decay: float = 1.0
    model_lr: float = 3e-4
    optimizer: str = "adam"
    use_target_network: bool = True
    polyak: float = 0.995
    # planner (shared geometry; online vs target differ in samples/iterations)
    horizon: int = 8
    lam: float = 1.0
    sigma: float = 0.3
    online_samples: int = 512
    online_iterations: int = 2
    target_samples: int = 50
    target_iterations: int = 1
    # temperature for value-target generation; None = same as lam. The
    # target softmin usually wants to be softer than the control planner:
    # a hard near-min over few rollouts harvests negative Q errors, while
    # the control planner benefits from concentrating weight on the best
    # rollouts.
    target_lam: float | None = None
    # how many times per env step the value targets are recomputed;
    # updates_per_step gradient steps are split evenly across refreshes
    target_refresh: int = 1
    member_resample: str = "step"
    antithetic: bool = False
    # ablation switches
    use_terminal_q: bool = True
    ensemble_size: int = 5
    warm_start: bool = True
    planner_for_control: bool = True
    planner_for_targets: bool = True

    def validate(self) -> None:
        checks = [
            (self.total_steps > 0, "steps"),
            (self.updates_per_step >= 0, "updates_per_step"),
            (self.batch_size > 0, "batch_size"),
            (self.warmup_steps >= 0, "warmup_steps"),
            (self.buffer_capacity > 0, "buffer_capacity"),
            (0 < self.gamma < 1, "gamma"),
            (self.metrics_every > 0, "metrics_every"),
            (self.q_lr > 0, "q_lr"),
            (0 < self.q_lr_decay <= 1, "q_lr_decay"),
            (self.model_lr > 0, "model_lr"),
            (0 <= self.polyak <= 1, "polyak"),
            (self.horizon >= 1, "planner.horizon"),
            (self.lam > 0, "planner.lam"),
            (self.sigma > 0, "planner.sigma"),
            (self.online_samples > 0, "planner.n_samples"),
            (self.online_iterations >= 0, "planner.iterations"),
            (self.target_samples > 0, "target.n_samples"),
            (self.target_iterations >= 0, "target.iterations"),
            (self.target_samples <= self.online_samples, "target.n_samples"),
            (self.target_lam is None or self.target_lam > 0, "target.lam"),
            (self.target_refresh >= 1, "target.refresh"),
            (self.ensemble_size >= 1, "ensemble_size"),
            (self.member_resample in ("step", "trajectory"), "member_resample"),
            (self.optimizer in ("adam", "sgd"), "optimizer"),
            (self.activation in ("tanh", "relu"), "activation"),
        ]
        for ok, name in checks:
            if not ok:
                raise ValueError(f"invalid config value for '{name}'")
        envs.get_env(self.env_id)  # raises on unknown env

    def planner_config(self, env, samples, iterations, lam=None) -> PlannerConfig:
        return PlannerConfig(
            n_samples=samples,
            horizon=self.horizon,
            lam=self.lam if lam is None else lam,
            gamma=self.gamma,
            sigma=np.full(env.action_dim, self.sigma),
            iterations=iterations,
            action_low=env.action_low,
            action_high=env.action_high,
            member_resample=self.member_resample,
            # pairing needs an even count; fall back to plain sampling if odd
            antithetic=self.antithetic and samples % 2 == 0,
        )


@dataclass
class MetricsRecord:
    env_step: int
    episode_return: float
    q_loss: float
    model_mse: float
    v_mppi_mean: float
    sps: float


METRICS_COLUMNS = ["env_step", "episode_return", "q_loss", "model_mse", "v_mppi_mean", "sps"]
WALLCLOCK_COLUMNS = {"sps"}


@dataclass
class Agent:
    cfg: TrainConfig
    q: SoftQFunction | None
    ensemble: DynamicsEnsemble

    @property
    def env(self):
        return envs.get_env(self.cfg.env_id)


def _make_q_fn(q: SoftQFunction | None, use_target: bool):
    if q is None:
        return lambda s, a: np.zeros(s.shape[0])
    return lambda s, a: q_value(q, s, a, use_target=use_target)


def run_training(cfg: TrainConfig, out_dir=None):
    """Execute the full learning loop.

    Returns (metrics, agent, info). info carries the per-episode returns and
    a steady-state steps-per-second figure measured after warm-up.
    """
    cfg.validate()
    env = envs.get_env(cfg.env_id)
    rng = np.random.default_rng(cfg.seed)

    ensemble = DynamicsEnsemble.create(
        env.state_dim,
        env.action_dim,
        cfg.ensemble_size,
        rng,
        hidden=cfg.hidden,
        lr=cfg.model_lr,
        optimizer=cfg.optimizer,
        activation=cfg.activation,
    )
    q = None
    if cfg.use_terminal_q:
        q = SoftQFunction.create(
            env.state_dim,
            env.action_dim,
            rng,
            hidden=cfg.hidden,
            lr=cfg.q_lr,
            use_target=cfg.use_target_network,
            polyak=cfg.polyak,
            optimizer=cfg.optimizer,
            activation=cfg.activation,
        )
    online_cfg = cfg.planner_config(env, cfg.online_samples, cfg.online_iterations)
    target_cfg = cfg.planner_config(
        env, cfg.target_samples, cfg.target_iterations, lam=cfg.target_lam
    )
    # the planner consumes the polyak-averaged target network everywhere:
    # the averaged weights give a smoother terminal value than the live
    # net mid-fit, which measurably improves control
    q_target = _make_q_fn(q, use_target=cfg.use_target_network)

    buffer = ReplayBuffer(cfg.buffer_capacity)
    state = env.reset(rng)
    ep_t = 0
    ep_cost = 0.0
    carried = zero_plan(online_cfg)
    episode_returns: list[float] = []

    metrics: list[MetricsRecord] = []
    last_q_loss = math.nan
    last_model_mse = math.nan
    v_window: list[float] = []
    window_start = time.perf_counter()
    window_steps = 0
    steady_start_step = cfg.warmup_steps + min(200, max(cfg.total_steps - cfg.warmup_steps, 0))
    steady_t0 = None
    steady_steps = 0

    out_path = Path(out_dir) if out_dir is not None else None
    csv_file = writer = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        csv_file = open(out_path / "metrics.csv", "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(METRICS_COLUMNS)

    try:
        for step in range(cfg.total_steps):
            if step == steady_start_step:
                steady_t0 = time.perf_counter()
            if steady_t0 is not None:
                steady_steps += 1

            # --- act
            if step < cfg.warmup_steps:
                action = rng.uniform(env.action_low, env.action_high)
                executed_plan = carried
            elif cfg.planner_for_control:
                res = plan(state, carried, ensemble, q_target, env.cost, online_cfg, rng)
                executed_plan = res.plan
                action = executed_plan[0].copy()
            else:
                # control ablation: first stored action plus exploration noise
                executed_plan = carried
                action = np.clip(
                    carried[0] + cfg.sigma * rng.standard_normal(env.action_dim),
                    env.action_low,
                    env.action_high,
                )

            cost = float(env.cost(state, action))
            next_state = env.dynamics(state, action)
            ep_t += 1
            ep_cost += cost
            done = ep_t >= envs.EPISODE_HORIZON

            stored_plan = shift_plan(executed_plan)
            buffer.push(Transition(state, action, cost, next_state, done, stored_plan))
            ensemble.update_normalizers(state, action, next_state)

            if done:
                episode_returns.append(-ep_cost)
                state = env.reset(rng)
                ep_t = 0
                ep_cost = 0.0
                carried = zero_plan(online_cfg)
            else:
                state = next_state
                carried = stored_plan

            # --- learn
            if (
                step >= cfg.warmup_steps
                and len(buffer) >= cfg.batch_size
                and cfg.updates_per_step > 0
            ):
                # updates_per_step gradient steps are split across
                # target_refresh rounds; each round draws its batches up
                # front so the target refinement runs as one large planner
                # call, then fits in batch_size chunks
                if q is not None and cfg.q_lr_decay < 1.0:
                    frac = step / max(cfg.total_steps - 1, 1)
                    q.opt.lr = cfg.q_lr * (1.0 + (cfg.q_lr_decay - 1.0) * frac)
                refreshes = max(1, min(cfg.target_refresh, cfg.updates_per_step))
                splits = [
                    (cfg.updates_per_step + r) // refreshes for r in range(refreshes)
                ]
                for round_idx, n_updates in enumerate(splits):
                    n_total = n_updates * cfg.batch_size
                    n_total = min(n_total, len(buffer))
                    n_total -= n_total % cfg.batch_size
                    if n_total == 0:
                        continue
                    if cfg.warm_start:
                        batch = buffer.sample_remove(n_total, rng)
                        warm_plans = np.stack([t.plan for t in batch])
                    else:
                        batch = buffer.sample(n_total, rng)
                        warm_plans = np.zeros(
                            (len(batch), cfg.horizon + 1, env.action_dim)
                        )
                    s_b = np.stack([t.s for t in batch])
                    a_b = np.stack([t.a for t in batch])
                    c_b = np.array([t.cost for t in batch])
                    ns_b = np.stack([t.next_s for t in batch])
                    d_b = np.array([t.done for t in batch])

                    if cfg.planner_for_targets:
                        results = plan_batch(
                            ns_b, warm_plans, ensemble, q_target, env.cost, target_cfg, rng
                        )
                        v_b = np.array([r.v_mppi for r in results])
                        refined = [r.plan for r in results]
                    else:
                        # target ablation: bootstrap through Q at the stored action
                        v_b = q_value(q, ns_b, warm_plans[:, 0], use_target=True)
                        refined = list(warm_plans)
                    # stage costs are nonnegative, so true soft values are too;
                    # clamping the bootstrap blocks runaway underestimation
                    # (the near-min over sampled rollouts preferentially picks
                    # negative Q errors, which otherwise compound through the
                    # discounted recursion)
                    v_b = np.maximum(v_b, 0.0)
                    v_window.append(float(np.mean(v_b)))

                    targets = build_targets(c_b, d_b, v_b, cfg.gamma)
                    if q is not None:
                        for lo in range(0, n_total, cfg.batch_size):
                            hi = lo + cfg.batch_size
                            last_q_loss = q_update(
                                q, s_b[lo:hi], a_b[lo:hi], targets[lo:hi]
                            )
                    # one model step per env step is enough: the dynamics fit
                    # converges far faster than the value fit
                    if round_idx == 0:
                        mb = min(cfg.batch_size, n_total)
                        last_model_mse = ensemble_train_step(
                            ensemble, s_b[:mb], a_b[:mb], ns_b[:mb], rng
                        )

                    if cfg.warm_start:
                        for t, p in zip(batch, refined):
                            t.plan = p
                            t.refinements += 1
                        buffer.reinsert(batch)

            # --- metrics
            window_steps += 1
            if (step + 1) % cfg.metrics_every == 0:
                now = time.perf_counter()
                rec = MetricsRecord(
                    env_step=step + 1,
                    episode_return=episode_returns[-1] if episode_returns else math.nan,
                    q_loss=last_q_loss,
                    model_mse=last_model_mse,
                    v_mppi_mean=float(np.mean(v_window)) if v_window else math.nan,
                    sps=window_steps / max(now - window_start, 1e-9),
                )
                metrics.append(rec)
                if writer is not None:
                    writer.writerow(
                        [rec.env_step, rec.episode_return, rec.q_loss,
                         rec.model_mse, rec.v_mppi_mean, rec.sps]
                    )
                v_window.clear()
                window_start = now
                window_steps = 0
    finally:
        if csv_file is not None:
            csv_file.close()

    steady_elapsed = (
        time.perf_counter() - steady_t0 if steady_t0 is not None else math.nan
    )
    agent = Agent(cfg=cfg, q=q, ensemble=ensemble)
    info = {
        "episode_returns": episode_returns,
        "steady_sps": steady_steps / steady_elapsed if steady_steps else math.nan,
        "mean_plan_refinements": buffer.mean_refinements(),
        "buffer_conserved": buffer.conserved(),
    }

    if out_path is not None:
        save_checkpoint(agent, out_path / "checkpoints" / "final.json")
        summary = {
            "run_id": uuid.uuid4().hex[:12],
            "config": asdict(cfg),
            "episode_returns": episode_returns,
            "final_median_return": (
                float(np.median(episode_returns[-10:])) if episode_returns else None
            ),
            "steady_sps": info["steady_sps"],
        }
        with open(out_path / "summary.json", "w") as f:
            json.dump(summary, f, indent=2)
    return metrics, agent, info


def evaluate(agent: Agent, episodes: int, seed: int, exact_model=False):
    """Planner-based control with frozen parameters; no learning.

    Returns per-episode costs/returns plus mean and median return.
    """
    env = agent.env
    cfg = agent.cfg
    if cfg.use_terminal_q and agent.q is None:
        raise ValueError("checkpoint has no Q-function but config expects one")
    rng = np.random.default_rng(seed)
    model = ExactModel(env) if exact_model else agent.ensemble
    online_cfg = cfg.planner_config(env, cfg.online_samples, cfg.online_iterations)
    q_fn = _make_q_fn(agent.q, use_target=cfg.use_target_network)

    costs = []
    for _ in range(episodes):
        state = env.reset(rng)
        carried = zero_plan(online_cfg)
        total = 0.0
        for _t in range(envs.EPISODE_HORIZON):
            res = plan(state, carried, model, q_fn, env.cost, online_cfg, rng)
            action = res.plan[0]
            total += float(env.cost(state, action))
            state = env.dynamics(state, action)
            carried = shift_plan(res.plan)
        costs.append(total)
    returns = [-c for c in costs]
    return {
        "episode_costs": costs,
        "episode_returns": returns,
        "mean_return": float(np.mean(returns)),
        "median_return": float(np.median(returns)),
    }


def random_policy_baseline(env_id: str, episodes: int, seed: int) -> float:
    """Mean episode cost under uniform random actions (normalization baseline)."""
    env = envs.get_env(env_id)
    rng = np.random.default_rng(seed)
    costs = []
    for _ in range(episodes):
        state = env.reset(rng)
        total = 0.0
        for _t in range(envs.EPISODE_HORIZON):
            action = rng.uniform(env.action_low, env.action_high)
            total += float(env.cost(state, action))
            state = env.dynamics(state, action)
        costs.append(total)
    return float(np.mean(costs))


SPS_BENCH_ARMS = [("warm", 1), ("cold", 1), ("cold", 5), ("cold", 10)]


def run_sps_benchmark(
    env_id="double-integrator",
    n_list=(10, 20, 50),
    arms=SPS_BENCH_ARMS,
    steps=2000,
    reps=3,
    seed=0,
    base_cfg: TrainConfig | None = None,
):
    """Steady-state SPS grid over target sample counts and warm/cold arms.

    Every cell shares the env, network sizes, and online planner; only the
    target-planner start mode and iteration count vary. SPS is measured over
    `steps` env steps after warm-up plus a 200-step settle window, repeated
    `reps` times. Returns a list of row dicts.
    """
    rows = []
    for n in n_list:
        for mode, iters in arms:
            sps_values = []
            for rep in range(reps):
                cfg = base_cfg if base_cfg is not None else TrainConfig()
                cfg = TrainConfig(**{**asdict(cfg)})
                cfg.env_id = env_id
                cfg.seed = seed + rep
                cfg.warmup_steps = max(cfg.batch_size, 200)
                cfg.total_steps = cfg.warmup_steps + 200 + steps
                cfg.target_samples = n
                cfg.online_samples = max(cfg.online_samples, n)
                cfg.target_iterations = iters
                cfg.warm_start = mode == "warm"
                cfg.metrics_every = cfg.total_steps
                _, _, info = run_training(cfg)
                sps_values.append(info["steady_sps"])
            rows.append(
                {
                    "n_target": n,
                    "mode": mode,
                    "iterations": iters,
                    "sps_mean": float(np.mean(sps_values)),
                    "sps_std": float(np.std(sps_values)),
                }
            )
    return rows


def save_checkpoint(agent: Agent, path) -> None:
    from .nets import params_to_dict

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "version": 1,
        "artifact_version": ARTIFACT_VERSION,
        "config": asdict(agent.cfg),
        "ensemble": {
            "members": [params_to_dict(m) for m in agent.ensemble.members],
            "in_norm": agent.ensemble.in_norm.to_dict(),
            "out_norm": agent.ensemble.out_norm.to_dict(),
        },
    }
    if agent.q is not None:
        blob["q"] = {
            "params": params_to_dict(agent.q.params),
            "target": (
                params_to_dict(agent.q.target_params)
                if agent.q.target_params is not None
                else None
            ),
            "polyak": agent.q.polyak,
        }
    with open(path, "w") as f:
        json.dump(blob, f)


def load_checkpoint(path) -> Agent:
    from .ensemble import Normalizer
    from .nets import OptimizerState, params_from_dict

    with open(path) as f:
        blob = json.load(f)
    if blob.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    cfg_d = blob["config"]
    cfg_d["hidden"] = tuple(cfg_d["hidden"])
    cfg = TrainConfig(**cfg_d)
    members = [params_from_dict(d) for d in blob["ensemble"]["members"]]
    ensemble = DynamicsEnsemble(
        members=members,
        opts=[OptimizerState.for_params(m, lr=cfg.model_lr, method=cfg.optimizer) for m in members],
        in_norm=Normalizer.from_dict(blob["ensemble"]["in_norm"]),
        out_norm=Normalizer.from_dict(blob["ensemble"]["out_norm"]),
    )
    q = None
    if "q" in blob:
        params = params_from_dict(blob["q"]["params"])
        q = SoftQFunction(
            params=params,
            opt=OptimizerState.for_params(params, lr=cfg.q_lr, method=cfg.optimizer),
            target_params=(
                params_from_dict(blob["q"]["target"])
                if blob["q"]["target"] is not None
                else None
            ),
            polyak=blob["q"]["polyak"],
        )
    return Agent(cfg=cfg, q=q, ensemble=ensemble)
