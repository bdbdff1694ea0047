"""Supervised-pretraining sequences, the noisy-optimal behavior policy,
the curriculum horizon schedule, and dataset serialization.

A labeled sequence is a rollout whose every step carries the true optimal
action as the label; labels depend only on (environment, context), never
on the behavior policy, so behavior changes induce covariate shift only.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import core, envs
from .core import History, Policy

MAB_NOISE_OFFSETS = (-2, -1, 1, 2)


def noise_probability(t: int) -> float:
    return min(1.0, 2.0 / math.sqrt(t))


class NoisyOptimalPolicy(Policy):
    """Optimal action plus vanishing exploration noise.

    At step t the optimal action is perturbed with probability
    min{1, 2/sqrt(t)}: Unif[-1,1]^d additive noise for continuous action
    spaces, a uniform offset from {-2,-1,1,2} (wrapping modulo the arm
    count) for MAB. The result is projected onto the action space.
    """

    randomized = True

    def __init__(self, env, rng: np.random.Generator):
        self.env = env
        self.rng = rng
        self.space = envs.action_space(env)

    def act(self, history: History):
        a_star = envs.optimal_action(self.env, history.pending_context)
        if self.rng.random() >= noise_probability(history.t):
            return a_star
        if self.env.family == envs.MAB:
            offset = MAB_NOISE_OFFSETS[int(self.rng.integers(4))]
            return (a_star + offset) % self.env.num_arms
        a = np.atleast_1d(np.asarray(a_star, dtype=float))
        noisy = a + self.rng.uniform(-1.0, 1.0, size=a.shape)
        noisy, _ = self.space.project(noisy if a.shape[0] > 1 else float(noisy[0]))
        return noisy


@dataclass
class LabeledSequence:
    env: object
    trajectory: core.Trajectory
    generator: str  # "f" or "policy"

    @property
    def horizon(self) -> int:
        return len(self.trajectory.steps)

    def truncate(self, horizon: int) -> "LabeledSequence":
        if horizon >= self.horizon:
            return self
        return LabeledSequence(
            self.env,
            core.Trajectory(self.trajectory.steps[:horizon], self.trajectory.projections),
            self.generator,
        )


def generate_sequence(prior: envs.PriorSpec, horizon: int, rng: np.random.Generator,
                      behavior_policy=None, generator_tag: str = "f") -> LabeledSequence:
    """Sample an environment and roll the behavior policy, labeling every
    step with the true optimal action.

    behavior_policy may be a Policy instance or a factory (env, rng) ->
    Policy; by default each sequence uses a fresh noisy-optimal policy.
    """
    env = envs.sample_environment(prior, rng)
    if behavior_policy is None:
        behavior_policy = NoisyOptimalPolicy(env, rng)
    elif not isinstance(behavior_policy, Policy):
        behavior_policy = behavior_policy(env, rng)
    traj = core.rollout(env, behavior_policy, horizon, rng)
    return LabeledSequence(env, traj, generator_tag)


@dataclass(frozen=True)
class CurriculumSchedule:
    start_horizon: int = 20
    target_horizon: int = 100
    total_iterations: int = 130
    ramp_fraction: float = 0.77  # iterations spent ramping before the plateau


def curriculum_horizon(m: int, schedule: CurriculumSchedule) -> int:
    """Linear ramp from start to target over the first ceil(0.77 M)
    iterations, then constant; rounded to a multiple of 5."""
    if not 1 <= m <= schedule.total_iterations:
        raise ValueError("iteration index out of range")
    ramp_end = math.ceil(schedule.ramp_fraction * schedule.total_iterations)
    if m >= ramp_end or ramp_end <= 1:
        return schedule.target_horizon
    frac = (m - 1) / (ramp_end - 1)
    raw = schedule.start_horizon + frac * (schedule.target_horizon - schedule.start_horizon)
    rounded = int(5 * round(raw / 5.0))
    return max(schedule.start_horizon, min(schedule.target_horizon, rounded))


def write_dataset(sequences: list, path) -> int:
    with open(path, "w") as fh:
        for seq in sequences:
            obj = core.trajectory_to_json(seq.trajectory, seq.env, None)
            obj["generator"] = seq.generator
            fh.write(json.dumps(obj) + "\n")
    return len(sequences)


def read_dataset(path) -> list:
    sequences = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                traj, env, _ = core.trajectory_from_json(obj)
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}: malformed dataset line {lineno}: {exc}") from exc
            sequences.append(LabeledSequence(env, traj, obj.get("generator", "f")))
    return sequences
