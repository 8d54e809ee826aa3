"""PointReach: a 2D point that moves by bounded displacements toward a goal.

States and goals are positions in the plane and the achieved goal of a state is
the state itself. Offline datasets start every episode at the origin with a
desired goal on the upper semicircle of radius 10; evaluation goals cover the
full circles of radius 10 and 20.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError

DATASET_FORMAT = "pointreach-ndjson"
DATASET_VERSION = 1


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 50
    success_radius: float = 0.5
    action_bound: float = 1.0
    goal_radius_train: float = 10.0
    discount: float = 0.98

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not self.success_radius > 0:
            raise ConfigError("success_radius must be positive")
        if not self.action_bound > 0:
            raise ConfigError("action_bound must be positive")
        if not 0 < self.discount < 1:
            raise ConfigError("discount must lie in (0, 1)")


DEFAULT_ENV = EnvConfig()


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    g: np.ndarray
    r: int
    s_next: np.ndarray


@dataclass
class Trajectory:
    """One fixed-horizon episode.

    ``states`` has ``T + 1`` rows (``s_0 .. s_T``), ``actions`` and ``rewards``
    have ``T``; ``actions`` are stored after clipping so that
    ``states[t + 1] == states[t] + actions[t]`` holds exactly.
    """

    goal: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def achieved_goal(self, i: int) -> np.ndarray:
        return self.states[i]

    def transition(self, t: int) -> Transition:
        return Transition(self.states[t], self.actions[t], self.goal, int(self.rewards[t]), self.states[t + 1])

    def __iter__(self):
        return (self.transition(t) for t in range(self.horizon))

    def __len__(self) -> int:
        return self.horizon


@dataclass(frozen=True)
class DatasetKind:
    name: str  # "expert" | "nonexpert"
    n_traj: int
    noise_std: float = 0.2
    p_random: float = 0.3

    def __post_init__(self):
        if self.name not in ("expert", "nonexpert"):
            raise ConfigError(f"unknown dataset kind {self.name!r}")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if self.noise_std < 0 or not 0 <= self.p_random <= 1:
            raise ConfigError("noise_std must be >= 0 and p_random in [0, 1]")

    @classmethod
    def expert(cls, n_traj: int) -> "DatasetKind":
        return cls("expert", n_traj)

    @classmethod
    def nonexpert(cls, n_traj: int, noise_std: float = 0.2, p_random: float = 0.3) -> "DatasetKind":
        return cls("nonexpert", n_traj, noise_std, p_random)

    @property
    def label(self) -> str:
        return f"{'Expert' if self.name == 'expert' else 'Non-Expert'} {self.n_traj}"


def _check_finite(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError("non-finite state, action or goal")


def clip_action(a: np.ndarray, env: EnvConfig = DEFAULT_ENV) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=np.float64), -env.action_bound, env.action_bound)


def step(s: np.ndarray, a_raw: np.ndarray, env: EnvConfig = DEFAULT_ENV) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    a_raw = np.asarray(a_raw, dtype=np.float64)
    _check_finite(s, a_raw)
    return s + clip_action(a_raw, env)


def reward(s_next: np.ndarray, g: np.ndarray, env: EnvConfig = DEFAULT_ENV) -> np.ndarray | int:
    """1 where the next state lies within ``success_radius`` of the goal (inclusive).

    Works on single points (returns an int) or on stacked rows (returns an array).
    """
    d = np.linalg.norm(np.asarray(s_next, dtype=np.float64) - np.asarray(g, dtype=np.float64), axis=-1)
    hit = (d <= env.success_radius).astype(np.int64)
    return int(hit) if np.ndim(hit) == 0 else hit


def optimal_action(s: np.ndarray, g: np.ndarray, env: EnvConfig = DEFAULT_ENV) -> np.ndarray:
    return clip_action(np.asarray(g, dtype=np.float64) - np.asarray(s, dtype=np.float64), env)


def _rollout_behavior(goal, kind: DatasetKind, rng: np.random.Generator, env: EnvConfig) -> Trajectory:
    T = env.horizon
    states = np.zeros((T + 1, 2))
    actions = np.zeros((T, 2))
    for t in range(T):
        a = optimal_action(states[t], goal, env)
        if kind.name == "nonexpert":
            a = a + rng.normal(0.0, kind.noise_std, size=2)
            if rng.random() < kind.p_random:
                a = rng.uniform(-1.0, 1.0, size=2) * env.action_bound
        a = clip_action(a, env)
        actions[t] = a
        states[t + 1] = states[t] + a
    rewards = reward(states[1:], goal, env)
    return Trajectory(goal, states, actions, rewards)


def generate_dataset(kind: DatasetKind, seed: int, env: EnvConfig = DEFAULT_ENV) -> list[Trajectory]:
    """Behavior data on the upper semicircle; one derived RNG stream per trajectory."""
    streams = np.random.SeedSequence([seed, kind.n_traj]).spawn(kind.n_traj)
    trajs = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        theta = rng.uniform(0.0, np.pi)
        goal = env.goal_radius_train * np.array([np.cos(theta), np.sin(theta)])
        trajs.append(_rollout_behavior(goal, kind, rng, env))
    return trajs


def sample_eval_goals(radius: float, n: int, seed: int) -> np.ndarray:
    if not radius > 0:
        raise ConfigError("goal radius must be positive")
    if n < 1:
        raise ConfigError("need at least one goal")
    rng = np.random.default_rng([seed, 7919])
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    return radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)


# -- NDJSON dataset files -----------------------------------------------------
#
# Line 1 is a header object {"format", "version", "horizon", "n_traj", ...}.
# Every following line is one trajectory:
#   {"goal": [x, y], "states": [[x, y] * (T+1)], "actions": [[dx, dy] * T], "rewards": [0|1 * T]}


def trajectory_to_json(traj: Trajectory) -> str:
    doc = {
        "goal": traj.goal.tolist(),
        "states": traj.states.tolist(),
        "actions": traj.actions.tolist(),
        "rewards": [int(r) for r in traj.rewards],
    }
    return json.dumps(doc, separators=(",", ":"))


def dumps_dataset(trajs: Sequence[Trajectory], meta: dict | None = None) -> str:
    if not trajs:
        raise DataError("cannot serialize an empty dataset")
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "horizon": trajs[0].horizon, "n_traj": len(trajs)}
    header.update(meta or {})
    lines = [json.dumps(header, separators=(",", ":"))]
    lines += [trajectory_to_json(t) for t in trajs]
    return "\n".join(lines) + "\n"


def write_dataset(path: str | Path, trajs: Sequence[Trajectory], meta: dict | None = None) -> None:
    Path(path).write_text(dumps_dataset(trajs, meta))


def parse_dataset(lines: Iterable[str]) -> tuple[dict, list[Trajectory]]:
    it = (ln for ln in lines if ln.strip())
    try:
        header = json.loads(next(it))
    except StopIteration:
        raise DataError("empty dataset file") from None
    if header.get("format") != DATASET_FORMAT:
        raise DataError(f"unrecognized dataset header: {header!r}")
    if header.get("version") != DATASET_VERSION:
        raise DataError(f"unsupported dataset version {header.get('version')!r}")
    trajs = []
    for ln in it:
        doc = json.loads(ln)
        traj = Trajectory(
            np.array(doc["goal"], dtype=np.float64),
            np.array(doc["states"], dtype=np.float64),
            np.array(doc["actions"], dtype=np.float64),
            np.array(doc["rewards"], dtype=np.int64),
        )
        if traj.states.shape != (traj.horizon + 1, 2) or traj.rewards.shape != (traj.horizon,):
            raise DataError("trajectory arrays have inconsistent lengths")
        trajs.append(traj)
    if not trajs:
        raise DataError("dataset file holds no trajectories")
    return header, trajs


def read_dataset(path: str | Path) -> tuple[dict, list[Trajectory]]:
    with open(path) as fh:
        return parse_dataset(fh)
