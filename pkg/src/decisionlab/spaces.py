"""Action spaces and projection rules.

Out-of-range actions are projected rather than rejected: clamping per
coordinate for boxes/intervals, radial scaling for balls, round-and-clip
for discrete arm sets. Projections are counted by the rollout loop.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Discrete:
    """Arm indices 0..n-1."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one arm")

    def project(self, a):
        if isinstance(a, (np.ndarray, list, tuple)):
            a = np.asarray(a, dtype=float).reshape(-1)[0]
        arm = int(round(float(a)))
        arm_clipped = min(max(arm, 0), self.n - 1)
        return arm_clipped, arm_clipped != a

    def contains(self, a) -> bool:
        return isinstance(a, (int, np.integer)) and 0 <= a < self.n


@dataclass(frozen=True)
class Interval:
    """Scalar actions in [low, high]."""

    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("empty interval")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.low + self.high)

    def project(self, a):
        a = float(np.asarray(a).reshape(-1)[0])
        clipped = min(max(a, self.low), self.high)
        return clipped, clipped != a

    def contains(self, a) -> bool:
        a = float(np.asarray(a).reshape(-1)[0])
        return self.low <= a <= self.high


@dataclass(frozen=True)
class Box:
    """Vector actions in a per-coordinate box [low, high]^dim."""

    low: float
    high: float
    dim: int

    def __post_init__(self):
        if not self.low < self.high or self.dim < 1:
            raise ValueError("empty box")

    def project(self, a):
        a = np.asarray(a, dtype=float).reshape(self.dim)
        clipped = np.clip(a, self.low, self.high)
        return clipped, bool(np.any(clipped != a))

    def contains(self, a) -> bool:
        a = np.asarray(a, dtype=float).reshape(-1)
        return a.shape == (self.dim,) and bool(
            np.all(a >= self.low) and np.all(a <= self.high)
        )


@dataclass(frozen=True)
class Ball:
    """Euclidean ball of given radius centered at the origin."""

    dim: int
    radius: float = 1.0

    def project(self, a):
        a = np.asarray(a, dtype=float).reshape(self.dim)
        norm = float(np.linalg.norm(a))
        if norm <= self.radius:
            return a, False
        return a * (self.radius / norm), True

    def contains(self, a) -> bool:
        a = np.asarray(a, dtype=float).reshape(-1)
        return a.shape == (self.dim,) and float(np.linalg.norm(a)) <= self.radius + 1e-12
