"""Exact posteriors over finite environment pools and posterior decision rules.

The posterior over a pool is maintained in log space and updated one step
at a time. Gaussian observation families use the exact density exponent
1/(2 sigma^2); the `temperature` knob rescales the log-likelihoods (a
temperature of 2 reproduces the exp(-(1/sigma^2) sum(...)^2) weighting
some references use). Newsvendor environments use the uniform-noise
density: feasibility indicator times 1/eps_bar per observed step.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import envs
from .core import History, Policy, StepRecord


def _log_likelihood(env, context, action, obs_value: float, temperature: float) -> float:
    if env.family == envs.NEWSVENDOR:
        residual = obs_value - env.mean_demand_base(context)
        if -1e-12 <= residual <= env.eps_bar + 1e-12:
            return -temperature * math.log(env.eps_bar)
        return -math.inf
    mean = envs.mean_observation(env, context, action)
    sigma2 = env.noise_variance
    return -temperature * (obs_value - mean) ** 2 / (2.0 * sigma2)


@dataclass
class PosteriorState:
    pool: tuple
    log_weights: np.ndarray
    prior: np.ndarray
    temperature: float = 1.0
    reset_count: int = 0  # times all members went infeasible (newsvendor)

    @classmethod
    def uniform(cls, pool, temperature: float = 1.0) -> "PosteriorState":
        pool = tuple(pool)
        prior = np.full(len(pool), 1.0 / len(pool))
        return cls(pool, np.log(prior), prior, temperature)

    def probabilities(self) -> np.ndarray:
        shifted = self.log_weights - np.max(self.log_weights)
        w = np.exp(shifted)
        return w / w.sum()


def posterior_update(state: PosteriorState, step: StepRecord) -> PosteriorState:
    """Bayes update from one completed step; returns a new state."""
    obs = float(step.observation[0])
    log_w = state.log_weights + np.array(
        [
            _log_likelihood(env, step.context, step.action, obs, state.temperature)
            for env in state.pool
        ]
    )
    if not np.any(np.isfinite(log_w)):
        # Every pool member infeasible: undefined posterior, reset to the
        # prior and flag. Cannot occur when the true env is in the pool.
        return replace(state, log_weights=np.log(state.prior), reset_count=state.reset_count + 1)
    return replace(state, log_weights=log_w)


def posterior_from_history(pool, steps, temperature: float = 1.0) -> PosteriorState:
    state = PosteriorState.uniform(pool, temperature)
    for step in steps:
        state = posterior_update(state, step)
    return state


def alg_star_act(state: PosteriorState, rule: str, context, rng: np.random.Generator = None):
    """Posterior sampling / averaging / median over the pool's optimal actions."""
    probs = state.probabilities()
    actions = [envs.optimal_action(env, context) for env in state.pool]
    if rule == "sampling":
        idx = int(rng.choice(len(actions), p=probs))
        return actions[idx]
    if rule == "averaging":
        stacked = np.array([np.atleast_1d(np.asarray(a, dtype=float)) for a in actions])
        avg = probs @ stacked
        return float(avg[0]) if avg.shape == (1,) else avg
    if rule == "median":
        stacked = np.array([np.atleast_1d(np.asarray(a, dtype=float)) for a in actions])
        if stacked.shape[1] == 1:
            out = np.array([_median(stacked[:, 0], probs)])
        else:
            # Coordinatewise median: the L1-loss minimizer for vector actions.
            out = np.array([_median(stacked[:, j], probs) for j in range(stacked.shape[1])])
        return float(out[0]) if out.shape == (1,) else out
    raise ValueError(f"unknown rule {rule!r}")


def _median(values: np.ndarray, probs: np.ndarray) -> float:
    # min a* with cumulative posterior mass >= 1/2, in ascending a* order
    order = np.argsort(values, kind="stable")
    cum = 0.0
    for i in order:
        cum += probs[i]
        if cum >= 0.5:
            return float(values[i])
    return float(values[order[-1]])


DEFAULT_RULES = {
    envs.MAB: "sampling",
    envs.LINEAR_BANDIT: "median",
    envs.PRICING: "averaging",
    envs.NEWSVENDOR: "median",
}


class AlgStarPolicy(Policy):
    """Bayes decision function over a finite pool, one of the three rules.

    For MAB pools the optimal actions are arm indices; sampling draws an
    environment, the other rules act on the (scalar) arm index and are
    rarely meaningful there, so the per-family defaults follow
    DEFAULT_RULES.
    """

    def __init__(self, pool, rule: str, rng: np.random.Generator = None, temperature: float = 1.0):
        self.pool = tuple(pool)
        self.rule = rule
        self.rng = rng
        self.temperature = temperature
        self.randomized = rule == "sampling"
        self.state = PosteriorState.uniform(self.pool, temperature)
        self._seen = 0

    def reset(self):
        self.state = PosteriorState.uniform(self.pool, self.temperature)
        self._seen = 0

    def act(self, history: History):
        while self._seen < len(history.steps):
            self.state = posterior_update(self.state, history.steps[self._seen])
            self._seen += 1
        return alg_star_act(self.state, self.rule, history.pending_context, self.rng)


def concentration_curve(trajectory, pool, true_env, temperature: float = 1.0) -> np.ndarray:
    """Posterior mass off the true environment after 0..T steps."""
    pool = tuple(pool)
    idx = next(
        i for i, e in enumerate(pool)
        if e is true_env or e.to_json() == true_env.to_json()
    )
    state = PosteriorState.uniform(pool, temperature)
    out = [1.0 - state.probabilities()[idx]]
    for step in trajectory.steps:
        state = posterior_update(state, step)
        out.append(1.0 - state.probabilities()[idx])
    return np.array(out)


def counterexample_instance(kind: str):
    """Instances on which posterior averaging provably earns linear regret.

    Returns (prior_spec, {env_index: per_step_regret}).
    """
    if kind == "linear_bandit":
        pool = (
            envs.LinearBanditEnv(np.array([1.0, 0.0]), noise_variance=1.0, geometry="box"),
            envs.LinearBanditEnv(np.array([0.0, 1.0]), noise_variance=1.0, geometry="box"),
        )
        prior = envs.PriorSpec(family=envs.LINEAR_BANDIT, action_dim=2, noise_variance=1.0, pool=pool)
        return prior, {0: 0.5, 1: 0.5}
    if kind == "pricing":
        pool = (
            envs.PricingEnv(np.array([2.0]), np.array([1.0]), noise_variance=1.0, context_free=True),
            envs.PricingEnv(np.array([0.8]), np.array([0.2]), noise_variance=1.0, context_free=True),
        )
        prior = envs.PriorSpec(family=envs.PRICING, noise_variance=1.0, pool=pool)
        return prior, {0: 0.25, 1: 0.05}
    raise ValueError(f"unknown counterexample kind {kind!r}")
