import numpy as np
import pytest

from decisionlab import bayes, core, envs
from decisionlab.core import StepRecord
from decisionlab.rng import stream


def two_env_mab_pool():
    return (
        envs.MABEnv(np.array([1.0, 0.0])),
        envs.MABEnv(np.array([0.0, 1.0])),
    )


def test_empty_posterior_is_prior():
    state = bayes.PosteriorState.uniform(two_env_mab_pool())
    assert np.allclose(state.probabilities(), [0.5, 0.5])


def test_gaussian_posterior_hand_value():
    # arm-0 means 1 and 0, observe o=1 on arm 0, variance 0.2:
    # log-likelihood gap = (1-0)^2 / (2*0.2) = 2.5
    pool = two_env_mab_pool()
    state = bayes.PosteriorState.uniform(pool)
    step = StepRecord(envs.EMPTY_CONTEXT, 0, np.array([1.0]), None)
    state = bayes.posterior_update(state, step)
    expect = 1.0 / (1.0 + np.exp(-2.5))
    assert abs(state.probabilities()[0] - expect) < 1e-12


def test_newsvendor_feasibility_weights():
    # both candidates feasible for 2 observations -> weights ~ (1/eps_bar)^2
    pool = (
        envs.NewsvendorEnv(np.array([3.0]), eps_bar=2.0, holding_cost=1.0),
        envs.NewsvendorEnv(np.array([3.0]), eps_bar=4.0, holding_cost=1.0),
    )
    x = np.array([1.0])
    state = bayes.PosteriorState.uniform(pool)
    for o in (3.5, 4.5):  # inside [3, 5] and [3, 7]
        state = bayes.posterior_update(state, StepRecord(x, 4.0, np.array([o]), None))
    assert np.allclose(state.probabilities(), [0.8, 0.2], atol=1e-12)


def test_newsvendor_all_infeasible_resets_to_prior():
    pool = (
        envs.NewsvendorEnv(np.array([3.0]), eps_bar=2.0, holding_cost=1.0),
        envs.NewsvendorEnv(np.array([3.0]), eps_bar=4.0, holding_cost=1.0),
    )
    x = np.array([1.0])
    state = bayes.PosteriorState.uniform(pool)
    state = bayes.posterior_update(state, StepRecord(x, 4.0, np.array([99.0]), None))
    assert state.reset_count == 1
    assert np.allclose(state.probabilities(), [0.5, 0.5])


def test_point_mass_posterior_all_rules_agree():
    pool = two_env_mab_pool()
    state = bayes.PosteriorState.uniform(pool)
    # hammer in arm-0 observations matching env 0
    for _ in range(50):
        state = bayes.posterior_update(
            state, StepRecord(envs.EMPTY_CONTEXT, 0, np.array([1.0]), None)
        )
    rng = stream(0, "rules")
    for rule in ("sampling", "averaging", "median"):
        a = bayes.alg_star_act(state, rule, envs.EMPTY_CONTEXT, rng)
        assert np.allclose(a, 0.0, atol=1e-12)


def test_median_rule_cumulative_threshold():
    pool = (
        envs.PricingEnv(np.array([2.0]), np.array([1.0]), context_free=True),   # a*=1
        envs.PricingEnv(np.array([4.0]), np.array([1.0]), context_free=True),   # a*=2
        envs.PricingEnv(np.array([6.0]), np.array([1.0]), context_free=True),   # a*=3
    )
    state = bayes.PosteriorState.uniform(pool)
    state.log_weights = np.log(np.array([0.2, 0.2, 0.6]))
    a = bayes.alg_star_act(state, "median", envs.EMPTY_CONTEXT)
    assert a == pytest.approx(3.0)


def test_averaging_rule_prop3_action():
    prior, _ = bayes.counterexample_instance("linear_bandit")
    state = bayes.PosteriorState.uniform(prior.pool)
    a = bayes.alg_star_act(state, "averaging", envs.EMPTY_CONTEXT)
    assert np.allclose(a, [0.5, 0.5])


def test_counterexample_regret_exact():
    for kind, horizon, expect in (
        ("linear_bandit", 100, {0: 50.0, 1: 50.0}),
        ("pricing", 100, {0: 25.0, 1: 5.0}),
    ):
        prior, per_step = bayes.counterexample_instance(kind)
        for idx, env in enumerate(prior.pool):
            policy = bayes.AlgStarPolicy(prior.pool, "averaging")
            traj = core.rollout(env, policy, horizon, stream(0, "cx", kind, idx))
            regret = core.cumulative_expected_regret(traj, env)
            assert abs(regret[-1] - expect[idx]) < 1e-9
            assert abs(per_step[idx] * horizon - expect[idx]) < 1e-12
            # entry t equals per-step regret * t exactly
            ts = np.arange(1, horizon + 1)
            assert np.allclose(regret, per_step[idx] * ts, atol=1e-9)


def test_counterexample_posterior_frozen_at_half():
    prior, _ = bayes.counterexample_instance("linear_bandit")
    env = prior.pool[0]
    policy = bayes.AlgStarPolicy(prior.pool, "averaging")
    traj = core.rollout(env, policy, 50, stream(1, "cx"))
    curve = bayes.concentration_curve(traj, prior.pool, env)
    assert np.allclose(curve, 0.5, atol=1e-12)


def test_concentration_prior_entry():
    pool = tuple(envs.MABEnv(np.array([float(i), 0.0])) for i in range(4))
    env = pool[0]
    traj = core.Trajectory([], 0)
    curve = bayes.concentration_curve(traj, pool, env)
    assert curve[0] == pytest.approx(3.0 / 4.0)


def test_concentration_decreases_for_exploratory_policy():
    pool = (envs.MABEnv(np.array([1.0, 0.0])), envs.MABEnv(np.array([0.0, 1.0])))
    finals = []
    for seed in range(50):
        env = pool[seed % 2]
        rng = stream(seed, "conc")
        policy = core.UniformRandomPolicy(env, rng)
        traj = core.rollout(env, policy, 30, rng)
        finals.append(bayes.concentration_curve(traj, pool, env)[-1])
    assert np.median(finals) < 0.01


def test_incremental_matches_batch():
    rng = stream(2, "inc")
    for family in envs.FAMILIES:
        prior = envs.make_prior(family)
        pool = tuple(envs.sample_environment(prior, rng) for _ in range(3))
        env = pool[0]
        policy = core.UniformRandomPolicy(env, rng)
        traj = core.rollout(env, policy, 8, rng)
        state = bayes.PosteriorState.uniform(pool)
        for step in traj.steps:
            state = bayes.posterior_update(state, step)
        batch = bayes.posterior_from_history(pool, traj.steps)
        assert np.allclose(state.probabilities(), batch.probabilities(), atol=1e-12)


def test_sampling_rule_frequencies():
    pool = two_env_mab_pool()
    state = bayes.PosteriorState.uniform(pool)
    rng = stream(3, "freq")
    draws = [bayes.alg_star_act(state, "sampling", envs.EMPTY_CONTEXT, rng)
             for _ in range(10**4)]
    freq = np.mean([d == 0 for d in draws])
    sigma = np.sqrt(0.25 / 10**4)
    assert abs(freq - 0.5) <= 3 * sigma


def test_default_rules_cover_all_families():
    assert set(bayes.DEFAULT_RULES) == set(envs.FAMILIES)
