import numpy as np
import pytest

from mppiq.ensemble import ExactModel
from mppiq.envs import get_env
from mppiq.planner import (
    PlannerConfig,
    PlannerError,
    compute_weights,
    plan,
    plan_batch,
    rollout_costs,
    shift_plan,
    update_controls,
    zero_plan,
)


def integrator_cfg(**kw):
    defaults = dict(
        n_samples=64,
        horizon=8,
        lam=1.0,
        gamma=0.99,
        sigma=np.array([0.3]),
        iterations=1,
        action_low=np.array([-1.0]),
        action_high=np.array([1.0]),
    )
    defaults.update(kw)
    return PlannerConfig(**defaults)


def zero_q(states, actions):
    return np.zeros(states.shape[0])


def const_cost(c):
    def cost(states, actions):
        return np.full(states.shape[0], c)

    return cost


def test_config_validation():
    with pytest.raises(ValueError):
        integrator_cfg(n_samples=0)
    with pytest.raises(ValueError):
        integrator_cfg(lam=0.0)
    with pytest.raises(ValueError):
        integrator_cfg(sigma=np.array([-0.1]))
    with pytest.raises(ValueError):
        integrator_cfg(iterations=-1)
    with pytest.raises(ValueError):
        integrator_cfg(member_resample="sometimes")
    with pytest.raises(ValueError):
        integrator_cfg(gamma=1.0)


def test_constant_running_cost_value():
    # all samples share the same total cost, so v_mppi equals it exactly:
    # sum_{t<H} gamma^t * c with a zero terminal
    env = get_env("double-integrator")
    cfg = integrator_cfg(iterations=0, horizon=5)
    model = ExactModel(env)
    rng = np.random.default_rng(0)
    res = plan(np.array([0.3, -0.1]), zero_plan(cfg), model, zero_q,
               const_cost(2.0), cfg, rng)
    expected = 2.0 * (1 - cfg.gamma**5) / (1 - cfg.gamma)
    assert res.v_mppi == pytest.approx(expected, abs=1e-12)


def test_constant_terminal_value():
    env = get_env("double-integrator")
    cfg = integrator_cfg(iterations=0, horizon=6)
    model = ExactModel(env)
    rng = np.random.default_rng(1)
    res = plan(np.array([0.0, 0.0]), zero_plan(cfg), model,
               lambda s, a: np.full(s.shape[0], 7.0), const_cost(0.0), cfg, rng)
    assert res.v_mppi == pytest.approx(cfg.gamma**6 * 7.0, abs=1e-12)


def reference_costs(s0, plans, noises, env, q_fn, cfg):
    """Sample-by-sample rollout unroll, deliberately unvectorized."""
    b, n, h1, adim = noises.shape
    h = h1 - 1
    out = np.zeros((b, n))
    for i in range(b):
        for j in range(n):
            s = np.array(s0[i], dtype=float)
            total = 0.0
            for t in range(h):
                a = np.clip(plans[i, t] + noises[i, j, t],
                            cfg.action_low, cfg.action_high)
                total += cfg.gamma**t * float(env.cost(s[None], a[None])[0])
                s = env.dynamics(s[None], a[None])[0]
            a = np.clip(plans[i, h] + noises[i, j, h],
                        cfg.action_low, cfg.action_high)
            total += cfg.gamma**h * float(q_fn(s[None], a[None])[0])
            out[i, j] = total
    return out


def test_rollout_costs_matches_unvectorized_unroll():
    env = get_env("double-integrator")
    cfg = integrator_cfg(n_samples=5, horizon=4)
    model = ExactModel(env)
    rng = np.random.default_rng(2)
    s0 = rng.uniform(-1, 1, size=(3, 2))
    plans = rng.uniform(-0.5, 0.5, size=(3, 5, 1))
    noises = 0.3 * rng.standard_normal((3, 5, 5, 1))

    def q_fn(states, actions):
        return np.einsum("ni,ni->n", states, states) + actions[:, 0] ** 2

    got = rollout_costs(s0, plans, noises, model, q_fn, env.cost, cfg, rng)
    ref = reference_costs(s0, plans, noises, env, q_fn, cfg)
    np.testing.assert_allclose(got, ref, atol=1e-10)


def test_weights_uniform_for_equal_costs():
    costs = np.full((1, 8), 3.0)
    plans = np.zeros((1, 3, 1))
    noises = np.random.default_rng(3).standard_normal((1, 8, 3, 1))
    w, eta, shift = compute_weights(costs, np.zeros_like(plans), np.zeros_like(noises),
                                    lam=1.0, sigma=np.array([0.3]))
    np.testing.assert_array_equal(w, np.ones((1, 8)))
    assert eta[0] == 1.0
    assert shift[0] == 3.0


def test_weight_ratio_law():
    # with a zero plan the effort term vanishes and
    # w_j / w_i = exp(-(J_j - J_i) / lam) exactly
    costs = np.array([[1.0, 2.5, 0.3, 4.0]])
    plans = np.zeros((1, 2, 1))
    noises = np.random.default_rng(4).standard_normal((1, 4, 2, 1))
    lam = 0.7
    w, _, _ = compute_weights(costs, plans, noises, lam, np.array([0.3]))
    for i in range(4):
        for j in range(4):
            ratio = w[0, j] / w[0, i]
            np.testing.assert_allclose(
                ratio, np.exp(-(costs[0, j] - costs[0, i]) / lam), rtol=1e-12
            )


def test_weights_concentrate_at_small_lam():
    costs = np.array([[1.0, 1.1, 5.0]])
    plans = np.zeros((1, 2, 1))
    noises = np.zeros((1, 3, 2, 1))
    w, _, _ = compute_weights(costs, plans, noises, 1e-4, np.array([0.3]))
    norm = w / w.sum()
    assert norm[0, 0] > 1 - 1e-8


def test_weights_effort_term_matches_direct_sum():
    rng = np.random.default_rng(5)
    plans = rng.standard_normal((2, 4, 2))
    noises = rng.standard_normal((2, 6, 4, 2))
    sigma = np.array([0.3, 0.5])
    lam = 1.3
    costs = rng.uniform(0, 1, size=(2, 6))
    w, eta, shift = compute_weights(costs, plans, noises, lam, sigma)
    inv_var = 1.0 / sigma**2
    for i in range(2):
        args = np.empty(6)
        for j in range(6):
            effort = 0.0
            for t in range(4):
                u, e = plans[i, t], noises[i, j, t]
                effort += float(u @ np.diag(inv_var) @ (u + 2 * e))
            args[j] = costs[i, j] + 0.5 * lam * effort
        ref_shift = args.min()
        ref_w = np.exp(-(args - ref_shift) / lam)
        np.testing.assert_allclose(w[i], ref_w, rtol=1e-10)
        assert shift[i] == pytest.approx(ref_shift, rel=1e-12)
        assert eta[i] == pytest.approx(ref_w.mean(), rel=1e-10)


def test_normalized_weights_sum_to_one():
    rng = np.random.default_rng(6)
    costs = rng.uniform(0, 10, size=(3, 100))
    plans = rng.standard_normal((3, 3, 1))
    noises = rng.standard_normal((3, 100, 3, 1))
    w, _, _ = compute_weights(costs, plans, noises, 1.0, np.array([0.3]))
    norm = w / w.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(norm.sum(axis=1), 1.0, atol=1e-12)


def test_infinite_costs_get_zero_weight():
    costs = np.array([[1.0, np.inf, 2.0]])
    plans = np.zeros((1, 2, 1))
    noises = np.zeros((1, 3, 2, 1))
    w, _, shift = compute_weights(costs, plans, noises, 1.0, np.array([0.3]))
    assert w[0, 1] == 0.0
    assert shift[0] == 1.0


def test_all_infinite_costs_raise():
    costs = np.full((1, 3), np.inf)
    with pytest.raises(PlannerError):
        compute_weights(costs, np.zeros((1, 2, 1)), np.zeros((1, 3, 2, 1)),
                        1.0, np.array([0.3]))


def test_stabilization_shift_invariance():
    # adding a huge constant to all costs moves v_mppi by exactly that
    # constant and leaves the weights untouched
    rng = np.random.default_rng(7)
    costs = rng.uniform(0, 5, size=(1, 50))
    plans = rng.standard_normal((1, 3, 1))
    noises = rng.standard_normal((1, 50, 3, 1))
    lam = 1.0
    w1, eta1, s1 = compute_weights(costs, plans, noises, lam, np.array([0.3]))
    w2, eta2, s2 = compute_weights(costs + 1e6, plans, noises, lam, np.array([0.3]))
    # adding 1e6 costs ~6 digits of the 16 available, so only ~1e-9 relative
    # agreement in the weights is achievable in float64
    np.testing.assert_allclose(w1, w2, rtol=1e-8)
    v1 = s1 - lam * np.log(eta1)
    v2 = s2 - lam * np.log(eta2)
    assert v2[0] - v1[0] == pytest.approx(1e6, abs=1e-6)


def test_cost_shift_moves_value_by_constant():
    env = get_env("double-integrator")
    cfg = integrator_cfg(iterations=1, horizon=8, n_samples=32)
    model = ExactModel(env)
    c = 3.7

    def shifted_cost(states, actions):
        return env.cost(states, actions) + c

    s0 = np.array([0.4, -0.2])
    r1 = plan(s0, zero_plan(cfg), model, zero_q, env.cost, cfg,
              np.random.default_rng(8))
    r2 = plan(s0, zero_plan(cfg), model, zero_q, shifted_cost, cfg,
              np.random.default_rng(8))
    expected = c * (1 - cfg.gamma**8) / (1 - cfg.gamma)
    assert r2.v_mppi - r1.v_mppi == pytest.approx(expected, abs=1e-9)
    # uniform cost shifts leave the refined plan unchanged
    np.testing.assert_allclose(r1.plan, r2.plan, atol=1e-12)


def test_update_controls_in_convex_hull():
    rng = np.random.default_rng(9)
    cfg = integrator_cfg(action_low=np.array([-10.0]), action_high=np.array([10.0]))
    plans = rng.standard_normal((2, 4, 1))
    noises = rng.standard_normal((2, 16, 4, 1))
    w = rng.uniform(0.1, 1.0, size=(2, 16))
    eta = w.mean(axis=1)
    new = update_controls(plans, noises, w, eta, cfg)
    lo = plans + noises.min(axis=1)
    hi = plans + noises.max(axis=1)
    assert np.all(new >= lo - 1e-12)
    assert np.all(new <= hi + 1e-12)


def test_update_controls_respects_bounds():
    cfg = integrator_cfg()
    plans = np.full((1, 3, 1), 0.9)
    noises = np.full((1, 4, 3, 1), 0.5)
    w = np.ones((1, 4))
    new = update_controls(plans, noises, w, w.mean(axis=1), cfg)
    np.testing.assert_array_equal(new, np.ones_like(plans))


def test_shift_plan_nilpotent():
    rng = np.random.default_rng(10)
    p = rng.standard_normal((9, 1))
    for _ in range(9):
        p = shift_plan(p)
    np.testing.assert_array_equal(p, np.zeros((9, 1)))


def test_shift_plan_moves_entries():
    p = np.arange(6.0).reshape(6, 1)
    shifted = shift_plan(p)
    np.testing.assert_array_equal(shifted[:-1], p[1:])
    assert shifted[-1, 0] == 0.0


def test_zero_iterations_is_identity_on_plan():
    env = get_env("double-integrator")
    cfg = integrator_cfg(iterations=0)
    model = ExactModel(env)
    rng = np.random.default_rng(11)
    warm = rng.uniform(-0.5, 0.5, size=(9, 1))
    res = plan(np.array([0.2, 0.1]), warm, model, zero_q, env.cost, cfg, rng)
    np.testing.assert_array_equal(res.plan, warm)


def test_ess_bounds_and_extremes():
    plans = np.zeros((1, 2, 1))
    noises = np.zeros((1, 4, 2, 1))
    env = get_env("double-integrator")
    cfg = integrator_cfg(n_samples=32, iterations=0)
    model = ExactModel(env)
    res = plan(np.array([0.0, 0.0]), zero_plan(cfg), model, zero_q,
               const_cost(1.0), cfg, np.random.default_rng(12))
    assert res.ess == pytest.approx(32.0)

    w, _, _ = compute_weights(np.array([[0.0, 1e6, 1e6, 1e6]]), plans, noises,
                              1.0, np.array([0.3]))
    norm = w / w.sum()
    ess = 1.0 / np.sum(norm**2)
    assert ess == pytest.approx(1.0)


def test_plan_batch_matches_single_plan():
    # batching is over independent problems: a batch of identical problems
    # with a fresh rng must agree with the single-problem wrapper
    env = get_env("double-integrator")
    cfg = integrator_cfg(n_samples=16, iterations=2)
    model = ExactModel(env)
    s0 = np.array([0.5, -0.3])
    single = plan(s0, zero_plan(cfg), model, zero_q, env.cost, cfg,
                  np.random.default_rng(13))
    batch = plan_batch(s0[None], zero_plan(cfg)[None], model, zero_q,
                       env.cost, cfg, np.random.default_rng(13))[0]
    np.testing.assert_array_equal(single.plan, batch.plan)
    assert single.v_mppi == batch.v_mppi


def regularized_plan_cost(env, plan_arr, s0, cfg):
    """Open-loop rollout cost plus the control-effort penalty.

    This is the deterministic part of the objective the weighted-noise
    update actually descends; the raw rollout cost alone is not guaranteed
    to improve (the effort term pulls high-effort plans toward zero).
    """
    s = np.array(s0, dtype=float)
    total = 0.0
    for t in range(plan_arr.shape[0] - 1):
        a = plan_arr[t]
        total += cfg.gamma**t * float(env.cost(s[None], a[None])[0])
        s = env.dynamics(s[None], a[None])[0]
    return total + 0.5 * cfg.lam * float(np.sum(plan_arr**2 / cfg.sigma**2))


def test_refinement_improves_regularized_cost():
    env = get_env("double-integrator")
    cfg = integrator_cfg(n_samples=256, iterations=1)
    model = ExactModel(env)
    improved = 0
    trials = 100
    for seed in range(trials):
        rng = np.random.default_rng(1000 + seed)
        s0 = rng.uniform(-1, 1, size=2)
        warm = rng.uniform(-1, 1, size=(9, 1))
        res = plan(s0, warm, model, zero_q, env.cost, cfg, rng)
        before = regularized_plan_cost(env, warm, s0, cfg)
        after = regularized_plan_cost(env, res.plan, s0, cfg)
        improved += after < before
    assert improved >= 95
