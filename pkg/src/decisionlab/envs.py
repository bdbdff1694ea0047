"""Task environments: samplers, observation laws, rewards, optimal actions.

Four families are supported: stochastic multi-armed bandits, linear
bandits on the unit ball, contextual dynamic pricing, and the contextual
newsvendor problem. Each environment instance carries every parameter
needed to sample contexts and observations, evaluate expected rewards,
and compute the closed-form optimal action.

Conventions:
- contexts for the context-free families (MAB, linear bandits) are
  zero-length vectors;
- observations are 1-dimensional: the realized reward for bandits, the
  realized demand for pricing/newsvendor;
- the Gaussian noise parameter (0.2 by default) is a variance.
"""

from dataclasses import dataclass, field

import numpy as np

from .spaces import Ball, Box, Discrete, Interval

MAB = "mab"
LINEAR_BANDIT = "linear_bandit"
PRICING = "pricing"
NEWSVENDOR = "newsvendor"

FAMILIES = (MAB, LINEAR_BANDIT, PRICING, NEWSVENDOR)

PRICE_SPACE = Interval(0.0, 30.0)
EMPTY_CONTEXT = np.zeros(0)


@dataclass(frozen=True)
class MABEnv:
    means: np.ndarray  # per-arm expected rewards
    noise_variance: float = 0.2

    family = MAB

    @property
    def num_arms(self) -> int:
        return len(self.means)

    def to_json(self) -> dict:
        return {
            "family": MAB,
            "means": [float(v) for v in self.means],
            "noise_variance": self.noise_variance,
        }


@dataclass(frozen=True)
class LinearBanditEnv:
    w: np.ndarray
    noise_variance: float = 0.2
    # "ball": A = unit ball, a* = w; "box": A = [-1,1]^d, a* = sign(w).
    geometry: str = "ball"

    family = LINEAR_BANDIT

    @property
    def dim(self) -> int:
        return len(self.w)

    def to_json(self) -> dict:
        return {
            "family": LINEAR_BANDIT,
            "w": [float(v) for v in self.w],
            "noise_variance": self.noise_variance,
            "geometry": self.geometry,
        }


@dataclass(frozen=True)
class PricingEnv:
    w1: np.ndarray
    w2: np.ndarray
    demand_type: str = "linear"  # "linear" or "square"
    noise_variance: float = 0.2
    # Context-free variant (used by the posterior-averaging failure
    # instance): contexts are empty and the demand intercept/slope are
    # the constants w1[0], w2[0].
    context_free: bool = False

    family = PRICING

    @property
    def context_dim(self) -> int:
        return 0 if self.context_free else len(self.w1)

    def demand_terms(self, context: np.ndarray) -> tuple[float, float]:
        """Return (intercept, slope) of the mean demand at this context."""
        if self.context_free:
            base, slope = float(self.w1[0]), float(self.w2[0])
        else:
            base, slope = float(self.w1 @ context), float(self.w2 @ context)
        if self.demand_type == "square":
            base = base * base
        return base, slope

    def to_json(self) -> dict:
        return {
            "family": PRICING,
            "w1": [float(v) for v in self.w1],
            "w2": [float(v) for v in self.w2],
            "demand_type": self.demand_type,
            "noise_variance": self.noise_variance,
            "context_free": self.context_free,
        }


@dataclass(frozen=True)
class NewsvendorEnv:
    w: np.ndarray
    eps_bar: float  # demand noise is Unif(0, eps_bar)
    holding_cost: float
    lost_sale_cost: float = 1.0
    demand_type: str = "linear"

    family = NEWSVENDOR

    @property
    def context_dim(self) -> int:
        return len(self.w)

    def mean_demand_base(self, context: np.ndarray) -> float:
        base = float(self.w @ context)
        if self.demand_type == "square":
            base = base * base
        return base

    def to_json(self) -> dict:
        return {
            "family": NEWSVENDOR,
            "w": [float(v) for v in self.w],
            "eps_bar": self.eps_bar,
            "holding_cost": self.holding_cost,
            "lost_sale_cost": self.lost_sale_cost,
            "demand_type": self.demand_type,
        }


def env_from_json(obj: dict):
    family = obj["family"]
    if family == MAB:
        return MABEnv(np.asarray(obj["means"], dtype=float), obj["noise_variance"])
    if family == LINEAR_BANDIT:
        return LinearBanditEnv(
            np.asarray(obj["w"], dtype=float),
            obj["noise_variance"],
            obj.get("geometry", "ball"),
        )
    if family == PRICING:
        return PricingEnv(
            np.asarray(obj["w1"], dtype=float),
            np.asarray(obj["w2"], dtype=float),
            obj.get("demand_type", "linear"),
            obj["noise_variance"],
            obj.get("context_free", False),
        )
    if family == NEWSVENDOR:
        return NewsvendorEnv(
            np.asarray(obj["w"], dtype=float),
            obj["eps_bar"],
            obj["holding_cost"],
            obj.get("lost_sale_cost", 1.0),
            obj.get("demand_type", "linear"),
        )
    raise ValueError(f"unknown family {family!r}")


@dataclass(frozen=True)
class PriorSpec:
    """Distribution over environments: an infinite prior or a finite pool."""

    family: str
    num_arms: int = 20
    action_dim: int = 2
    context_dim: int = 0
    demand_mix: float = 0.0  # probability of the square demand type
    noise_variance: float = 0.2
    pool: tuple = ()  # non-empty tuple of environments => finite pool

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not 0.0 <= self.demand_mix <= 1.0:
            raise ValueError("demand_mix must lie in [0, 1]")
        if self.family in (MAB, LINEAR_BANDIT) and self.demand_mix != 0.0:
            raise ValueError("demand_mix applies to pricing/newsvendor only")
        if self.pool:
            families = {e.family for e in self.pool}
            if families != {self.family}:
                raise ValueError("pool members must share the prior's family")

    @property
    def is_finite(self) -> bool:
        return len(self.pool) > 0


def default_context_dim(family: str) -> int:
    return {MAB: 0, LINEAR_BANDIT: 0, PRICING: 6, NEWSVENDOR: 4}[family]


def make_prior(family: str, **kwargs) -> PriorSpec:
    kwargs.setdefault("context_dim", default_context_dim(family))
    return PriorSpec(family=family, **kwargs)


def sample_environment(prior: PriorSpec, rng: np.random.Generator):
    """Draw one environment from the prior."""
    if prior.is_finite:
        return prior.pool[int(rng.integers(len(prior.pool)))]
    if prior.family == MAB:
        means = rng.normal(0.0, 1.0, size=prior.num_arms)
        return MABEnv(means, prior.noise_variance)
    if prior.family == LINEAR_BANDIT:
        v = rng.normal(size=prior.action_dim)
        while np.linalg.norm(v) < 1e-12:
            v = rng.normal(size=prior.action_dim)
        return LinearBanditEnv(v / np.linalg.norm(v), prior.noise_variance)
    d = prior.context_dim
    if prior.family == PRICING:
        w1 = rng.uniform(0.5, 1.5, size=d)
        w2 = rng.uniform(1.0 / 20.0, 21.0 / 20.0, size=d)
        demand_type = "square" if rng.random() < prior.demand_mix else "linear"
        return PricingEnv(w1, w2, demand_type, prior.noise_variance)
    w = rng.uniform(0.0, 3.0, size=d)
    eps_bar = rng.uniform(1.0, 10.0)
    h = rng.uniform(0.5, 2.0)
    demand_type = "square" if rng.random() < prior.demand_mix else "linear"
    return NewsvendorEnv(w, eps_bar, h, 1.0, demand_type)


def sample_context(env, rng: np.random.Generator) -> np.ndarray:
    if env.family in (MAB, LINEAR_BANDIT):
        return EMPTY_CONTEXT
    if env.family == PRICING:
        if env.context_free:
            return EMPTY_CONTEXT
        return rng.uniform(0.0, 2.5, size=len(env.w1))
    return rng.uniform(0.0, 3.0, size=len(env.w))


def mean_observation(env, context: np.ndarray, action) -> float:
    """Mean of the observation law at (context, action).

    For the newsvendor family this is the mean-demand base wX (or (wX)^2),
    the noise Unif(0, eps_bar) adds eps_bar/2 on top.
    """
    if env.family == MAB:
        return float(env.means[int(action)])
    if env.family == LINEAR_BANDIT:
        return float(env.w @ np.asarray(action, dtype=float))
    if env.family == PRICING:
        base, slope = env.demand_terms(context)
        return base - slope * float(action)
    return env.mean_demand_base(context)


def sample_observation(env, context: np.ndarray, action, rng: np.random.Generator) -> np.ndarray:
    mean = mean_observation(env, context, action)
    if env.family == NEWSVENDOR:
        value = mean + rng.uniform(0.0, env.eps_bar)
    else:
        value = mean + rng.normal(0.0, np.sqrt(env.noise_variance))
    return np.array([value])


def action_space(env):
    if env.family == MAB:
        return Discrete(env.num_arms)
    if env.family == LINEAR_BANDIT:
        if env.geometry == "box":
            return Box(-1.0, 1.0, env.dim)
        return Ball(env.dim)
    return PRICE_SPACE


def optimal_action(env, context: np.ndarray):
    """Closed-form reward maximizer; projected onto the action space."""
    if env.family == MAB:
        return int(np.argmax(env.means))  # argmax ties break to lowest index
    if env.family == LINEAR_BANDIT:
        if env.geometry == "box":
            return np.sign(env.w)
        return env.w.copy()
    if env.family == PRICING:
        base, slope = env.demand_terms(context)
        if slope <= 0.0:
            raise ValueError("pricing requires a positive demand slope at the context")
        price, _ = PRICE_SPACE.project(base / (2.0 * slope))
        return price
    base = env.mean_demand_base(context)
    order = base + env.eps_bar * env.lost_sale_cost / (env.lost_sale_cost + env.holding_cost)
    order, _ = PRICE_SPACE.project(order)
    return order


def _newsvendor_expected_cost(env, context: np.ndarray, a: float) -> float:
    # Demand = base + U with U ~ Unif(0, eps_bar); piecewise-quadratic in
    # u = a - base depending on whether a lies below, inside, or above the
    # demand support.
    base = env.mean_demand_base(context)
    h, l, eb = env.holding_cost, env.lost_sale_cost, env.eps_bar
    u = a - base
    if u <= 0.0:
        return l * (eb / 2.0 - u)
    if u >= eb:
        return h * (u - eb / 2.0)
    return (h * u * u + l * (eb - u) ** 2) / (2.0 * eb)


def expected_reward(env, context: np.ndarray, action) -> float:
    if env.family == MAB:
        return float(env.means[int(action)])
    if env.family == LINEAR_BANDIT:
        return float(env.w @ np.asarray(action, dtype=float))
    if env.family == PRICING:
        base, slope = env.demand_terms(context)
        a = float(action)
        return (base - slope * a) * a
    return -_newsvendor_expected_cost(env, context, float(action))
