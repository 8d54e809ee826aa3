"""Offline data store, input normalization, hindsight relabeling and FIFO queues.

Relabel index convention: a relabeled goal is the achieved goal ``phi(s_i)``
of a state reached *after* transition ``t``, so ``i`` ranges over
``t + 1 .. T``. Relabeling with ``i == t + 1`` always yields reward 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import DEFAULT_ENV, EnvConfig, Trajectory, reward
from .errors import ConfigError, DataError, NumericError, QueueStateError


class OfflineDataset:
    """Trajectories stacked into dense arrays for vectorized sampling."""

    def __init__(self, trajs: Sequence[Trajectory], env: EnvConfig = DEFAULT_ENV):
        if len(trajs) == 0:
            raise DataError("offline dataset is empty")
        self.env = env
        self.trajectories = list(trajs)
        self.states = np.stack([t.states for t in trajs])  # (n, T+1, 2)
        self.actions = np.stack([t.actions for t in trajs])  # (n, T, 2)
        self.goals = np.stack([t.goal for t in trajs])  # (n, 2)
        self.rewards = np.stack([t.rewards for t in trajs]).astype(np.float64)  # (n, T)

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return self.n_traj * self.horizon

    def flat_transitions(self) -> dict[str, np.ndarray]:
        """All original (un-relabeled) transitions as flat arrays."""
        n, T = self.n_traj, self.horizon
        return {
            "s": self.states[:, :-1].reshape(n * T, 2),
            "a": self.actions.reshape(n * T, 2),
            "g": np.repeat(self.goals, T, axis=0),
            "r": self.rewards.reshape(n * T),
            "s_next": self.states[:, 1:].reshape(n * T, 2),
        }

    def summary(self) -> dict:
        ag = self.states.reshape(-1, 2)
        return {
            "n_traj": self.n_traj,
            "transitions": len(self),
            "horizon": self.horizon,
            "achieved_goal_bbox": {
                "min": ag.min(axis=0).tolist(),
                "max": ag.max(axis=0).tolist(),
            },
            "success_fraction": float(self.rewards[:, -1].mean()),
        }


@dataclass
class Normalizer:
    state_mean: np.ndarray
    state_std: np.ndarray
    goal_mean: np.ndarray
    goal_std: np.ndarray
    count: int

    STD_FLOOR = 1e-6

    @classmethod
    def fit(cls, data: OfflineDataset) -> "Normalizer":
        # goal inputs are desired goals or (after relabeling) achieved goals
        states = data.states.reshape(-1, 2)
        goals = np.concatenate([data.goals, data.states[:, 1:].reshape(-1, 2)])
        return cls(
            states.mean(axis=0),
            np.maximum(states.std(axis=0), cls.STD_FLOOR),
            goals.mean(axis=0),
            np.maximum(goals.std(axis=0), cls.STD_FLOOR),
            len(states),
        )

    @classmethod
    def identity(cls, dim: int = 2) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim), np.zeros(dim), np.ones(dim), 0)

    def norm_state(self, s):
        return (np.asarray(s, dtype=np.float64) - self.state_mean) / self.state_std

    def norm_goal(self, g):
        return (np.asarray(g, dtype=np.float64) - self.goal_mean) / self.goal_std

    def denorm_state(self, z):
        return np.asarray(z) * self.state_std + self.state_mean

    def denorm_goal(self, z):
        return np.asarray(z) * self.goal_std + self.goal_mean

    def to_dict(self) -> dict:
        return {
            "state_mean": self.state_mean.tolist(),
            "state_std": self.state_std.tolist(),
            "goal_mean": self.goal_mean.tolist(),
            "goal_std": self.goal_std.tolist(),
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        return cls(
            np.array(doc["state_mean"]),
            np.array(doc["state_std"]),
            np.array(doc["goal_mean"]),
            np.array(doc["goal_std"]),
            int(doc["count"]),
        )


@dataclass(frozen=True)
class RelabeledSample:
    s: np.ndarray
    a: np.ndarray
    g: np.ndarray
    r: float
    s_next: np.ndarray
    relabel_index: int | None
    t: int


def relabel(traj: Trajectory, t: int, rng: np.random.Generator, env: EnvConfig = DEFAULT_ENV) -> RelabeledSample:
    """Swap the desired goal of step ``t`` for a uniformly chosen future achieved goal."""
    T = traj.horizon
    if not 0 <= t < T:
        raise IndexError(f"t={t} outside [0, {T})")
    i = int(rng.integers(t + 1, T + 1))
    g = traj.achieved_goal(i).copy()
    s_next = traj.states[t + 1]
    return RelabeledSample(traj.states[t], traj.actions[t], g, float(reward(s_next, g, env)), s_next, i, t)


@dataclass
class Batch:
    """A mini-batch of (possibly relabeled) transitions as parallel arrays.

    ``relabel_index`` is -1 for samples that kept their original goal.
    """

    s: np.ndarray
    a: np.ndarray
    g: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    t: np.ndarray
    traj_index: np.ndarray
    relabel_index: np.ndarray

    def __len__(self) -> int:
        return len(self.r)

    @property
    def relabeled(self) -> np.ndarray:
        return self.relabel_index >= 0

    def sample(self, k: int) -> RelabeledSample:
        i = int(self.relabel_index[k])
        return RelabeledSample(
            self.s[k], self.a[k], self.g[k], float(self.r[k]), self.s_next[k], None if i < 0 else i, int(self.t[k])
        )

    def __iter__(self):
        return (self.sample(k) for k in range(len(self)))


def sample_batch(data: OfflineDataset, batch_size: int, p_relabel: float, rng: np.random.Generator) -> Batch:
    """Uniform (trajectory, step) draws, each relabeled independently with prob ``p_relabel``."""
    if data is None or len(data) == 0:
        raise DataError("cannot sample from an empty dataset")
    if not 0.0 <= p_relabel <= 1.0:
        raise ConfigError("p_relabel must lie in [0, 1]")
    T = data.horizon
    ep = rng.integers(0, data.n_traj, size=batch_size)
    t = rng.integers(0, T, size=batch_size)
    future = rng.integers(t + 1, T + 1)
    use = rng.random(batch_size) < p_relabel
    s = data.states[ep, t]
    s_next = data.states[ep, t + 1]
    g = np.where(use[:, None], data.states[ep, future], data.goals[ep])
    r = np.where(use, reward(s_next, g, data.env), data.rewards[ep, t]).astype(np.float64)
    return Batch(s, data.actions[ep, t], g, r, s_next, t, ep, np.where(use, future, -1))


class FifoQueue:
    """Bounded ring buffer of reals; the oldest entries are evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("queue capacity must be >= 1")
        self.capacity = int(capacity)
        self._buf = np.zeros(self.capacity)
        self._head = 0  # next write position
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, v: float) -> "FifoQueue":
        return self.push_many(np.array([v], dtype=np.float64))

    def push_many(self, values) -> "FifoQueue":
        values = np.asarray(values, dtype=np.float64).ravel()
        if not np.isfinite(values).all():
            raise NumericError("refusing to queue a non-finite value")
        if values.size >= self.capacity:
            values = values[-self.capacity :]
        n = values.size
        end = self._head + n
        if end <= self.capacity:
            self._buf[self._head : end] = values
        else:
            split = self.capacity - self._head
            self._buf[self._head :] = values[:split]
            self._buf[: n - split] = values[split:]
        self._head = end % self.capacity
        self._size = min(self._size + n, self.capacity)
        return self

    def contents(self) -> np.ndarray:
        """Current entries, oldest first."""
        if self._size < self.capacity:
            return self._buf[: self._size].copy()
        return np.concatenate([self._buf[self._head :], self._buf[: self._head]])

    def _live(self) -> np.ndarray:
        if self._size == 0:
            raise QueueStateError("queue is empty")
        return self._buf if self._size == self.capacity else self._buf[: self._size]


def fifo_push(q: FifoQueue, v: float) -> FifoQueue:
    return q.push(v)


def quantile(q: FifoQueue, alpha: float) -> float:
    """Nearest-rank percentile: element ``ceil(alpha/100 * n) - 1`` of the sorted contents."""
    if not 0.0 <= alpha <= 100.0:
        raise ConfigError("percentile must lie in [0, 100]")
    live = q._live()
    k = max(math.ceil(alpha * live.size / 100.0) - 1, 0)
    return float(np.partition(live, k)[k])


def extremes(q: FifoQueue) -> tuple[float, float]:
    live = q._live()
    return float(live.min()), float(live.max())
