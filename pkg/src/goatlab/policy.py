"""Goal-conditioned policies: the learned MLP policy plus scripted references."""

from __future__ import annotations

import numpy as np

from . import nn
from .env import DEFAULT_ENV, EnvConfig, optimal_action
from .replay import Normalizer


class MLPPolicy:
    """Deterministic policy ``a = pi(s, g)`` with a tanh head scaled to the action box.

    The network sees normalized state and goal; callers pass raw coordinates.
    """

    def __init__(self, net: nn.Network, normalizer: Normalizer):
        self.net = net
        self.normalizer = normalizer

    @classmethod
    def create(cls, normalizer: Normalizer, hidden=(64, 64), seed: int = 0, env: EnvConfig = DEFAULT_ENV):
        net = nn.mlp_init([4, *hidden, 2], seed, "relu", "tanh", env.action_bound)
        return cls(net, normalizer)

    def inputs(self, s, g) -> np.ndarray:
        return np.concatenate([self.normalizer.norm_state(s), self.normalizer.norm_goal(g)], axis=-1)

    def __call__(self, s, g) -> np.ndarray:
        return nn.forward(self.net, self.inputs(s, g))

    def forward_cached(self, s, g):
        return nn.forward_cached(self.net, self.inputs(s, g))

    def copy(self) -> "MLPPolicy":
        return MLPPolicy(self.net.copy(), self.normalizer)


class OptimalPolicy:
    """``clip(g - s, -1, 1)`` per dimension; reaches any goal within ``max|g - s|`` steps."""

    def __init__(self, env: EnvConfig = DEFAULT_ENV):
        self.env = env

    def __call__(self, s, g) -> np.ndarray:
        return optimal_action(s, g, self.env)


class ZeroPolicy:
    def __call__(self, s, g) -> np.ndarray:
        return np.zeros_like(np.asarray(s, dtype=np.float64))


class RandomPolicy:
    """Uniform actions in the action box, from its own seeded stream."""

    def __init__(self, seed: int = 0, env: EnvConfig = DEFAULT_ENV):
        self.rng = np.random.default_rng(seed)
        self.bound = env.action_bound

    def __call__(self, s, g) -> np.ndarray:
        shape = np.shape(s)
        return self.rng.uniform(-self.bound, self.bound, size=shape)
