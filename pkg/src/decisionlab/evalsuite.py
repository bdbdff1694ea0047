"""Regret evaluation, algorithm comparison, and surrogate-bound checks.

All comparisons use common random numbers: every algorithm sees the same
per-run environment draw and observation noise stream, while each
algorithm's own randomness lives on a separate stream keyed by its name.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import core, envs
from .rng import stream


@dataclass
class RegretReport:
    algo: str
    curves: np.ndarray  # (runs, T) cumulative expected regret

    @property
    def mean(self) -> np.ndarray:
        return self.curves.mean(axis=0)

    @property
    def band(self):
        """Pointwise 90% empirical band (5th and 95th percentiles)."""
        lo = np.percentile(self.curves, 5.0, axis=0)
        hi = np.percentile(self.curves, 95.0, axis=0)
        return lo, hi

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def final_se(self) -> float:
        finals = self.curves[:, -1]
        return float(finals.std(ddof=1) / math.sqrt(len(finals)))

    def summary(self) -> dict:
        lo, hi = self.band
        return {
            "algo": self.algo,
            "runs": int(self.curves.shape[0]),
            "horizon": int(self.curves.shape[1]),
            "final_mean": self.final_mean,
            "final_se": self.final_se,
            "final_p5": float(lo[-1]),
            "final_p95": float(hi[-1]),
        }


def evaluate(policy_factory, prior: envs.PriorSpec, runs: int, horizon: int,
             seed: int, algo: str = "algo") -> RegretReport:
    """Roll a freshly built policy on `runs` independent instances.

    policy_factory(env, rng) -> Policy. The environment draw and the
    observation noise depend only on (seed, run), not on the algorithm,
    so reports built from the same seed are directly comparable.
    """
    curves = np.zeros((runs, horizon))
    for run in range(runs):
        env = envs.sample_environment(prior, stream(seed, "instance", run))
        policy = policy_factory(env, stream(seed, "policy", algo, run))
        traj = core.rollout(env, policy, horizon, stream(seed, "noise", run))
        curves[run] = core.cumulative_expected_regret(traj, env)
    return RegretReport(algo, curves)


def compare(factories: dict, prior: envs.PriorSpec, runs: int, horizon: int,
            seed: int) -> dict:
    """Evaluate several algorithms under common random numbers."""
    return {
        name: evaluate(factory, prior, runs, horizon, seed, algo=name)
        for name, factory in factories.items()
    }


def write_regret_csv(reports: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algo", "run", "t", "regret"])
        for name, report in reports.items():
            runs, horizon = report.curves.shape
            for run in range(runs):
                for t in range(horizon):
                    writer.writerow([name, run, t + 1, repr(float(report.curves[run, t]))])


def write_summary_json(reports: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump({name: r.summary() for name, r in reports.items()}, fh, indent=2)
        fh.write("\n")


def bootstrap_ci(values, rng: np.random.Generator, n_boot: int = 2000,
                 level: float = 0.9):
    """Percentile bootstrap confidence interval for the mean."""
    values = np.asarray(values, dtype=float)
    means = np.array([
        values[rng.integers(len(values), size=len(values))].mean()
        for _ in range(n_boot)
    ])
    alpha = 100.0 * (1.0 - level) / 2.0
    return float(np.percentile(means, alpha)), float(np.percentile(means, 100.0 - alpha))


def _surrogate_mab(samples: int, rng: np.random.Generator):
    """Expected regret of a sampled arm vs Delta_max times cross-entropy."""
    prior = envs.make_prior("mab")
    worst = -np.inf
    for _ in range(samples):
        env = envs.sample_environment(prior, rng)
        gaps = env.means.max() - env.means
        probs = rng.dirichlet(np.ones(len(env.means)))
        best = int(np.argmax(env.means))
        regret = float(probs @ gaps)
        bound = float(gaps.max()) * float(-np.log(probs[best]))
        worst = max(worst, regret - bound)
    return worst


def _surrogate_continuous(family: str, samples: int, rng: np.random.Generator):
    prior = envs.make_prior(family)
    worst = -np.inf
    for _ in range(samples):
        env = envs.sample_environment(prior, rng)
        x = envs.sample_context(env, rng)
        if family == "pricing":
            # the quadratic bound needs an interior optimum
            while envs.optimal_action(env, x) >= envs.PRICE_SPACE.high:
                env = envs.sample_environment(prior, rng)
                x = envs.sample_context(env, rng)
        a_star = envs.optimal_action(env, x)
        space = envs.action_space(env)
        if family == "linear_bandit":
            raw = rng.normal(size=len(a_star))
            action, _ = space.project(raw)
            const = float(np.max(np.abs(env.w)))
            loss = float(np.abs(action - a_star).sum())
        else:
            action = rng.uniform(space.low, space.high)
            diff = action - a_star
            if family == "pricing":
                const = 2.0 * float(env.w2 @ x) if len(x) else 2.0 * float(env.w2[0])
                loss = diff * diff
            else:
                const = max(env.holding_cost, env.lost_sale_cost)
                loss = abs(diff)
        regret = envs.expected_reward(env, x, a_star) - envs.expected_reward(env, x, action)
        worst = max(worst, regret - const * loss)
    return worst


def surrogate_check(family: str, samples: int, rng: np.random.Generator) -> float:
    """Worst observed (regret - C * surrogate loss) over random instances.

    Non-positive values (up to round-off) confirm the family's surrogate
    constant: Delta_max for bandit cross-entropy, 2 w2.x for the pricing
    squared loss, the sup-norm of w for the linear-bandit absolute loss,
    and max{h, l} for the newsvendor absolute loss.
    """
    if family == "mab":
        return _surrogate_mab(samples, rng)
    if family in ("linear_bandit", "pricing", "newsvendor"):
        return _surrogate_continuous(family, samples, rng)
    raise ValueError(f"unknown family {family!r}")
