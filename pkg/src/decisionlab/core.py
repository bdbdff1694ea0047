"""Histories, trajectories, policies, and the shared rollout loop.

A policy is anything with an ``act(history) -> action`` method; randomized
policies own their RNG stream so that the rollout's environment stream is
untouched by policy randomness (this is what makes common-random-number
comparisons possible downstream).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import envs


@dataclass
class StepRecord:
    context: np.ndarray
    action: object  # int arm index or float/np.ndarray, per family
    observation: np.ndarray
    optimal_action: object = None


@dataclass
class History:
    """t-1 completed steps plus the pending context X_t (not yet acted on)."""

    steps: list = field(default_factory=list)
    pending_context: np.ndarray = None

    @property
    def t(self) -> int:
        """1-based index of the current decision epoch."""
        return len(self.steps) + 1


class Policy:
    """Interface: non-anticipatory decision function over histories."""

    randomized = False

    def act(self, history: History):
        raise NotImplementedError

    def reset(self):
        """Clear per-trajectory state; called once per rollout."""


@dataclass
class Trajectory:
    steps: list
    projections: int = 0


class OraclePolicy(Policy):
    """Plays the closed-form optimal action of the true environment."""

    def __init__(self, env):
        self.env = env

    def act(self, history: History):
        return envs.optimal_action(self.env, history.pending_context)


class UniformRandomPolicy(Policy):
    randomized = True

    def __init__(self, env, rng: np.random.Generator):
        self.space = envs.action_space(env)
        self.rng = rng

    def act(self, history: History):
        from . import spaces

        if isinstance(self.space, spaces.Discrete):
            return int(self.rng.integers(self.space.n))
        if isinstance(self.space, spaces.Interval):
            return self.rng.uniform(self.space.low, self.space.high)
        if isinstance(self.space, spaces.Box):
            return self.rng.uniform(self.space.low, self.space.high, size=self.space.dim)
        v = self.rng.normal(size=self.space.dim)
        v /= max(np.linalg.norm(v), 1e-12)
        return v * self.space.radius * self.rng.uniform() ** (1.0 / self.space.dim)


def rollout(env, policy: Policy, horizon: int, rng: np.random.Generator) -> Trajectory:
    """Roll a policy against an environment for `horizon` steps.

    Contexts and observation noise are drawn from `rng` only; any policy
    randomness lives on the policy's own stream. Actions outside the
    action space are projected and counted in the trajectory metadata.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    space = envs.action_space(env)
    policy.reset()
    steps = []
    projections = 0
    history = History(steps=steps, pending_context=None)
    for _ in range(horizon):
        x = envs.sample_context(env, rng)
        history.pending_context = x
        action = policy.act(history)
        action, projected = space.project(action)
        projections += int(projected)
        obs = envs.sample_observation(env, x, action, rng)
        steps.append(StepRecord(x, action, obs, envs.optimal_action(env, x)))
    return Trajectory(steps=steps, projections=projections)


def cumulative_expected_regret(trajectory: Trajectory, env) -> np.ndarray:
    """Running sum of per-step expected-reward gaps r(X,a*) - r(X,a)."""
    gaps = np.empty(len(trajectory.steps))
    for i, step in enumerate(trajectory.steps):
        a_star = step.optimal_action
        if a_star is None:
            a_star = envs.optimal_action(env, step.context)
        gaps[i] = envs.expected_reward(env, step.context, a_star) - envs.expected_reward(
            env, step.context, step.action
        )
    return np.cumsum(gaps)


def _action_to_list(action):
    if isinstance(action, (int, np.integer)):
        return [int(action)]
    return [float(v) for v in np.atleast_1d(np.asarray(action, dtype=float))]


def trajectory_to_json(trajectory: Trajectory, env, seed) -> dict:
    return {
        "family": env.family,
        "gamma": env.to_json(),
        "seed": seed,
        "steps": [
            {
                "x": [float(v) for v in step.context],
                "a": _action_to_list(step.action),
                "o": [float(v) for v in step.observation],
                "a_star": _action_to_list(step.optimal_action)
                if step.optimal_action is not None
                else None,
            }
            for step in trajectory.steps
        ],
        "projections": trajectory.projections,
    }


def _action_from_list(values, family):
    if values is None:
        return None
    if family == envs.MAB:
        return int(values[0])
    if family in (envs.PRICING, envs.NEWSVENDOR):
        return float(values[0])
    return np.asarray(values, dtype=float)


def trajectory_from_json(obj: dict):
    """Inverse of trajectory_to_json; returns (trajectory, env, seed)."""
    env = envs.env_from_json(obj["gamma"])
    steps = [
        StepRecord(
            context=np.asarray(s["x"], dtype=float),
            action=_action_from_list(s["a"], env.family),
            observation=np.asarray(s["o"], dtype=float),
            optimal_action=_action_from_list(s.get("a_star"), env.family),
        )
        for s in obj["steps"]
    ]
    return Trajectory(steps=steps, projections=obj.get("projections", 0)), env, obj.get("seed")


def write_trajectories(records: list, path) -> int:
    """records: iterable of (trajectory, env, seed) triples; one JSON line each."""
    count = 0
    with open(path, "w") as fh:
        for traj, env, seed in records:
            fh.write(json.dumps(trajectory_to_json(traj, env, seed)) + "\n")
            count += 1
    return count
