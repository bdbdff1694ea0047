"""Structured benchmark algorithms, one stateful policy per method.

MAB: UCB, Thompson sampling. Linear bandits: LinUCB, LinTS. Dynamic
pricing: ILSE, CILS, pricing Thompson sampling. Newsvendor: ERM quantile
regression, FAI online gradient descent.

The pricing/newsvendor methods assume the linear demand family (they are
knowingly misspecified under square demand types). All cold starts and
degenerate estimates fall back to the price-interval midpoint.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import envs
from .core import History, Policy
from .spaces import Ball

PRICE_MID = envs.PRICE_SPACE.midpoint


@dataclass
class ArmStats:
    counts: np.ndarray
    means: np.ndarray

    @classmethod
    def empty(cls, k: int) -> "ArmStats":
        return cls(np.zeros(k, dtype=int), np.zeros(k))

    def record(self, arm: int, reward: float):
        self.counts[arm] += 1
        self.means[arm] += (reward - self.means[arm]) / self.counts[arm]


def ucb_act(stats: ArmStats, horizon: int, bonus_mode: str = "ucb1") -> int:
    """UCB index policy; unpulled arms are forced in round-robin order.

    bonus_mode "ucb1" uses sqrt(2 log T / n_a); "constant" uses
    sqrt(2 log T) / min{1, n_a}, which is constant in n_a once pulled.
    """
    unpulled = np.flatnonzero(stats.counts == 0)
    if unpulled.size:
        return int(unpulled[0])
    if bonus_mode == "constant":
        bonus = math.sqrt(2.0 * math.log(horizon)) / np.minimum(1, stats.counts)
    else:
        bonus = np.sqrt(2.0 * math.log(horizon) / stats.counts)
    return int(np.argmax(stats.means + bonus))


def ts_act(stats: ArmStats, horizon: int, rng: np.random.Generator) -> int:
    """Gaussian Thompson draw per arm; the UCB bonus reused as the variance."""
    scale2 = math.sqrt(2.0 * math.log(horizon)) / np.maximum(1, stats.counts)
    draws = rng.normal(stats.means, np.sqrt(scale2))
    return int(np.argmax(draws))


class UCBPolicy(Policy):
    def __init__(self, env, horizon: int, bonus_mode: str = "ucb1"):
        self.k = env.num_arms
        self.horizon = horizon
        self.bonus_mode = bonus_mode
        self.reset()

    def reset(self):
        self.stats = ArmStats.empty(self.k)
        self._seen = 0

    def _ingest(self, history: History):
        while self._seen < len(history.steps):
            step = history.steps[self._seen]
            self.stats.record(int(step.action), float(step.observation[0]))
            self._seen += 1

    def act(self, history: History):
        self._ingest(history)
        return ucb_act(self.stats, self.horizon, self.bonus_mode)


class TSPolicy(UCBPolicy):
    randomized = True

    def __init__(self, env, horizon: int, rng: np.random.Generator):
        super().__init__(env, horizon)
        self.rng = rng

    def act(self, history: History):
        self._ingest(history)
        return ts_act(self.stats, self.horizon, self.rng)


@dataclass
class RidgeState:
    gram: np.ndarray  # sum z z^T + sigma^2 I
    moment: np.ndarray  # sum o * z
    regularizer: float

    @classmethod
    def fresh(cls, dim: int, regularizer: float) -> "RidgeState":
        return cls(regularizer * np.eye(dim), np.zeros(dim), regularizer)

    def record(self, z: np.ndarray, o: float):
        self.gram += np.outer(z, z)
        self.moment += o * z

    def estimate(self) -> np.ndarray:
        return np.linalg.solve(self.gram, self.moment)


_FIXED_STARTS_2D = [
    np.array([math.cos(k * math.pi / 4.0), math.sin(k * math.pi / 4.0)]) for k in range(8)
]


def _sphere_starts(dim: int):
    if dim == 2:
        return [s.copy() for s in _FIXED_STARTS_2D]
    starts = []
    for i in range(dim):
        for sign in (1.0, -1.0):
            e = np.zeros(dim)
            e[i] = sign
            starts.append(e)
    return starts


def linucb_act(state: RidgeState, horizon: int, bonus_coef: float = None) -> np.ndarray:
    """argmax over the unit ball of w_hat.a + sqrt(2 log T) ||a||_{Sigma^-1}.

    Multistart projected gradient ascent: from w_hat/|w_hat| plus fixed
    sphere points, keeping the strictly best objective (first start wins
    ties).
    """
    dim = state.moment.shape[0]
    if bonus_coef is None:
        bonus_coef = math.sqrt(2.0 * math.log(horizon))
    w_hat = state.estimate()
    sigma_inv = np.linalg.inv(state.gram)
    ball = Ball(dim)

    def objective(a):
        return float(w_hat @ a + bonus_coef * math.sqrt(max(a @ sigma_inv @ a, 0.0)))

    starts = []
    if np.linalg.norm(w_hat) > 1e-12:
        starts.append(w_hat / np.linalg.norm(w_hat))
    starts.extend(_sphere_starts(dim))

    best_a, best_val = None, -math.inf
    for start in starts:
        a = start.copy()
        for it in range(80):
            quad = math.sqrt(max(a @ sigma_inv @ a, 1e-18))
            grad = w_hat + bonus_coef * (sigma_inv @ a) / quad
            a, _ = ball.project(a + (0.5 / math.sqrt(it + 1.0)) * grad)
        val = objective(a)
        if val > best_val + 1e-15:
            best_a, best_val = a, val
    return best_a


def lints_act(state: RidgeState, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Sample w from N(w_hat, sqrt(2 log T) Sigma^-1), play its direction."""
    w_hat = state.estimate()
    cov = math.sqrt(2.0 * math.log(horizon)) * np.linalg.inv(state.gram)
    cov = 0.5 * (cov + cov.T)
    for _ in range(2):
        w = rng.multivariate_normal(w_hat, cov, method="cholesky")
        norm = np.linalg.norm(w)
        if norm > 1e-12:
            return w / norm
    norm = np.linalg.norm(w_hat)
    if norm > 1e-12:
        return w_hat / norm
    fallback = np.zeros(w_hat.shape[0])
    fallback[0] = 1.0
    return fallback


class LinUCBPolicy(Policy):
    def __init__(self, env, horizon: int):
        self.dim = env.dim
        self.horizon = horizon
        self.sigma2 = env.noise_variance
        self.reset()

    def reset(self):
        self.state = RidgeState.fresh(self.dim, self.sigma2)
        self._seen = 0

    def _ingest(self, history: History):
        while self._seen < len(history.steps):
            step = history.steps[self._seen]
            self.state.record(np.asarray(step.action, dtype=float), float(step.observation[0]))
            self._seen += 1

    def act(self, history: History):
        self._ingest(history)
        return linucb_act(self.state, self.horizon)


class LinTSPolicy(LinUCBPolicy):
    randomized = True

    def __init__(self, env, horizon: int, rng: np.random.Generator):
        super().__init__(env, horizon)
        self.rng = rng

    def act(self, history: History):
        self._ingest(history)
        return lints_act(self.state, self.horizon, self.rng)


def pricing_feature(x: np.ndarray, a: float) -> np.ndarray:
    return np.concatenate([x, a * x])


def ilse_act(state: RidgeState, context: np.ndarray) -> float:
    """Plug-in price from the ridge estimate of (w1, -w2)."""
    est = state.estimate()
    d = context.shape[0]
    w1_x = float(est[:d] @ context)
    w2_x = float(-est[d:] @ context)
    if w2_x <= 0.0:
        return PRICE_MID
    price, _ = envs.PRICE_SPACE.project(w1_x / (2.0 * w2_x))
    return price


def cils_act(ilse_price: float, running_avg: float, t: int) -> float:
    """ILSE price, nudged away from the running average when too close."""
    threshold = t ** (-0.25) / 10.0
    delta = ilse_price - running_avg
    if abs(delta) < threshold:
        sign = 1.0 if delta >= 0.0 else -1.0
        return running_avg + sign * threshold
    return ilse_price


def pricing_ts_act(state: RidgeState, context: np.ndarray, rng: np.random.Generator) -> float:
    """Optimal price of a sampled (intercept, slope) pair at this context."""
    est = state.estimate()
    d = context.shape[0]
    mean = np.array([float(est[:d] @ context), float(-est[d:] @ context)])
    sigma_inv = np.linalg.inv(state.gram)
    m = np.zeros((2 * d, 2))
    m[:d, 0] = context
    m[d:, 1] = context
    cov = m.T @ sigma_inv @ m
    cov = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = cov + 1e-9 * np.eye(2)
    alpha, beta = rng.multivariate_normal(mean, cov, method="eigh")
    if beta <= 1e-6:
        return ilse_act(state, context)
    price, _ = envs.PRICE_SPACE.project(alpha / (2.0 * beta))
    return price


class ILSEPolicy(Policy):
    def __init__(self, env):
        self.dim = len(env.w1)
        self.sigma2 = env.noise_variance
        self.reset()

    def reset(self):
        self.state = RidgeState.fresh(2 * self.dim, self.sigma2)
        self._seen = 0

    def _ingest(self, history: History):
        while self._seen < len(history.steps):
            step = history.steps[self._seen]
            z = pricing_feature(step.context, float(step.action))
            self.state.record(z, float(step.observation[0]))
            self._seen += 1

    def act(self, history: History):
        self._ingest(history)
        return ilse_act(self.state, history.pending_context)


class CILSPolicy(ILSEPolicy):
    def reset(self):
        super().reset()
        self.price_sum = 0.0
        self.price_count = 0

    def _ingest(self, history: History):
        while self._seen < len(history.steps):
            step = history.steps[self._seen]
            z = pricing_feature(step.context, float(step.action))
            self.state.record(z, float(step.observation[0]))
            self.price_sum += float(step.action)
            self.price_count += 1
            self._seen += 1

    def act(self, history: History):
        self._ingest(history)
        tentative = ilse_act(self.state, history.pending_context)
        if self.price_count == 0:
            return tentative  # the running average starts at the first price
        running_avg = self.price_sum / self.price_count
        price, _ = envs.PRICE_SPACE.project(cils_act(tentative, running_avg, history.t))
        return price


class PricingTSPolicy(ILSEPolicy):
    randomized = True

    def __init__(self, env, rng: np.random.Generator):
        super().__init__(env)
        self.rng = rng

    def act(self, history: History):
        self._ingest(history)
        return pricing_ts_act(self.state, history.pending_context, self.rng)


def pinball_loss(beta: np.ndarray, xs: np.ndarray, os: np.ndarray, q: float) -> float:
    resid = os - xs @ beta
    return float(np.sum(np.where(resid >= 0.0, q * resid, (q - 1.0) * resid)))


def quantile_regression(xs: np.ndarray, os: np.ndarray, q: float, iters: int = 500) -> np.ndarray:
    """Pinball-loss minimizer by subgradient descent from the LS fit.

    The best iterate by objective value is returned, so a loss-zero start
    (noiseless data) is never degraded.
    """
    beta, *_ = np.linalg.lstsq(xs, os, rcond=None)
    best_beta, best_loss = beta.copy(), pinball_loss(beta, xs, os, q)
    scale = max(np.mean(np.linalg.norm(xs, axis=1)), 1e-9)
    step0 = 0.5 / scale
    for it in range(1, iters + 1):
        resid = os - xs @ beta
        grad = -xs.T @ np.where(resid >= 0.0, q, q - 1.0)
        beta = beta - (step0 / math.sqrt(it)) * grad / len(os)
        loss = pinball_loss(beta, xs, os, q)
        if loss < best_loss:
            best_beta, best_loss = beta.copy(), loss
    return best_beta


def erm_newsvendor_act(contexts: list, demands: list, context: np.ndarray, h: float) -> float:
    """Linear quantile regression at level 1/(1+h); midpoint until enough data."""
    d = context.shape[0]
    if len(contexts) < d:
        return PRICE_MID
    xs = np.asarray(contexts, dtype=float)
    os = np.asarray(demands, dtype=float)
    beta = quantile_regression(xs, os, 1.0 / (1.0 + h))
    order, _ = envs.PRICE_SPACE.project(float(beta @ context))
    return order


class ERMNewsvendorPolicy(Policy):
    def __init__(self, env):
        self.h = env.holding_cost
        self.reset()

    def reset(self):
        self.contexts = []
        self.demands = []
        self._seen = 0

    def act(self, history: History):
        while self._seen < len(history.steps):
            step = history.steps[self._seen]
            self.contexts.append(step.context)
            self.demands.append(float(step.observation[0]))
            self._seen += 1
        return erm_newsvendor_act(self.contexts, self.demands, history.pending_context, self.h)


def fai_step(w: np.ndarray, prev_context: np.ndarray, prev_order: float, prev_demand: float,
             t: int, h: float, l: float) -> np.ndarray:
    if prev_demand < prev_order:
        return w - (h / math.sqrt(t)) * prev_context
    return w + (l / math.sqrt(t)) * prev_context


class FAIPolicy(Policy):
    """Online gradient descent on the newsvendor cost; w0 ~ Unif[0,1]^d."""

    randomized = True

    def __init__(self, env, rng: np.random.Generator):
        self.h = env.holding_cost
        self.l = env.lost_sale_cost
        self.dim = env.context_dim
        self.rng = rng
        self.reset()

    def reset(self):
        self.w = self.rng.uniform(0.0, 1.0, size=self.dim)
        self._seen = 0

    def act(self, history: History):
        while self._seen < len(history.steps):
            step = history.steps[self._seen]
            self.w = fai_step(
                self.w, step.context, float(step.action), float(step.observation[0]),
                self._seen + 1, self.h, self.l,
            )
            self._seen += 1
        order, _ = envs.PRICE_SPACE.project(float(self.w @ history.pending_context))
        return order
