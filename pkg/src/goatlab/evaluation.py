"""Policy rollouts, success/return reports and goal-coverage grids."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .env import DEFAULT_ENV, EnvConfig, Trajectory, clip_action, reward, sample_eval_goals
from .errors import ConfigError

Policy = Callable[[np.ndarray, np.ndarray], np.ndarray]


def rollout(policy: Policy, s0, g, T: int | None = None, env: EnvConfig = DEFAULT_ENV, early_stop: bool = True):
    """Run one episode; returns ``(trajectory, success)``.

    With ``early_stop`` the episode ends at the first reward, so the returned
    trajectory may be shorter than ``T``.
    """
    T = env.horizon if T is None else T
    if T < 1:
        raise ConfigError("horizon must be >= 1")
    s = np.asarray(s0, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    states, actions, rewards = [s], [], []
    success = False
    for _ in range(T):
        a = clip_action(policy(s[None, :], g[None, :])[0], env)
        s = s + a
        r = reward(s, g, env)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        if r:
            success = True
            if early_stop:
                break
    traj = Trajectory(g, np.array(states), np.array(actions).reshape(-1, 2), np.array(rewards, dtype=np.int64))
    return traj, success


def run_episodes(policy: Policy, s0: np.ndarray, goals: np.ndarray, env: EnvConfig = DEFAULT_ENV):
    """Full-horizon rollouts for a batch of goals; returns the reward matrix ``(n, T)``."""
    goals = np.asarray(goals, dtype=np.float64)
    s = np.broadcast_to(np.asarray(s0, dtype=np.float64), goals.shape).copy()
    rewards = np.zeros((len(goals), env.horizon))
    for t in range(env.horizon):
        s = s + clip_action(policy(s, goals), env)
        rewards[:, t] = reward(s, goals, env)
    return rewards


def success_rate(policy: Policy, goals: np.ndarray, env: EnvConfig = DEFAULT_ENV, s0=(0.0, 0.0)) -> float:
    return float(run_episodes(policy, np.asarray(s0), goals, env).max(axis=1).mean())


@dataclass
class GoalOutcome:
    goal: list[float]
    success: bool
    steps_to_success: int  # 1-based step of first reward, -1 if never reached
    seed: int
    return_stay: float  # reward 1 credited from arrival to the horizon
    return_rollout: float  # rewards actually collected over the full horizon
    iid: bool


@dataclass
class EvalReport:
    horizon: int
    seeds: int
    outcomes: dict[str, list[GoalOutcome]] = field(default_factory=dict)

    def success_rate(self, name: str) -> float:
        rows = self.outcomes[name]
        return float(np.mean([o.success for o in rows]))

    def mean_return(self, name: str, kind: str = "stay") -> float:
        rows = self.outcomes[name]
        return float(np.mean([o.return_stay if kind == "stay" else o.return_rollout for o in rows]))

    def per_seed_success(self, name: str) -> dict[int, float]:
        by_seed: dict[int, list[bool]] = {}
        for o in self.outcomes[name]:
            by_seed.setdefault(o.seed, []).append(o.success)
        return {k: float(np.mean(v)) for k, v in sorted(by_seed.items())}

    def split(self) -> dict[str, float | None]:
        """Success on IID goals (training region) and on OOD goals (everything else)."""
        rows = [o for rs in self.outcomes.values() for o in rs]
        iid = [o.success for o in rows if o.iid]
        ood = [o.success for o in rows if not o.iid]
        return {
            "iid_success": float(np.mean(iid)) if iid else None,
            "ood_success": float(np.mean(ood)) if ood else None,
            "n_iid": len(iid),
            "n_ood": len(ood),
        }

    def summary(self) -> dict:
        doc = {
            "horizon": self.horizon,
            "seeds": self.seeds,
            "sets": {
                name: {
                    "n_goals": len(rows),
                    "success_rate": self.success_rate(name),
                    "mean_return": self.mean_return(name, "stay"),
                    "mean_return_rollout": self.mean_return(name, "rollout"),
                    "per_seed_success": self.per_seed_success(name),
                }
                for name, rows in self.outcomes.items()
            },
        }
        doc.update(self.split())
        return doc

    def to_json(self) -> str:
        doc = self.summary()
        doc["outcomes"] = {k: [asdict(o) for o in v] for k, v in self.outcomes.items()}
        return json.dumps(doc, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["set", "seed", "goal_x", "goal_y", "iid", "success", "steps_to_success", "return_stay", "return_rollout"])
        for name, rows in self.outcomes.items():
            for o in rows:
                w.writerow([name, o.seed, repr(o.goal[0]), repr(o.goal[1]), int(o.iid), int(o.success),
                            o.steps_to_success, o.return_stay, o.return_rollout])
        return buf.getvalue()


def is_iid_goal(g, env: EnvConfig = DEFAULT_ENV) -> bool:
    """Training goals live on the upper half of the radius-10 circle."""
    g = np.asarray(g)
    return bool(g[1] >= 0 and np.linalg.norm(g) <= env.goal_radius_train + env.success_radius)


def evaluate(
    policy: Policy,
    goal_sets: Mapping[str, np.ndarray],
    env: EnvConfig = DEFAULT_ENV,
    s0=(0.0, 0.0),
    seed: int = 0,
) -> EvalReport:
    report = EvalReport(env.horizon, 1)
    for name, goals in goal_sets.items():
        goals = np.asarray(goals, dtype=np.float64)
        if len(goals) == 0:
            raise ConfigError(f"goal set {name!r} is empty")
        report.outcomes[name] = _outcomes(policy, goals, env, s0, seed)
    return report


def _outcomes(policy, goals, env, s0, seed) -> list[GoalOutcome]:
    rewards = run_episodes(policy, np.asarray(s0), goals, env)
    hit = rewards > 0
    success = hit.any(axis=1)
    first = np.where(success, hit.argmax(axis=1) + 1, -1)
    rows = []
    for k, g in enumerate(goals):
        stay = float(env.horizon - first[k] + 1) if success[k] else 0.0
        rows.append(
            GoalOutcome(g.tolist(), bool(success[k]), int(first[k]), seed, stay, float(rewards[k].sum()), is_iid_goal(g, env))
        )
    return rows


def evaluate_radii(
    policy: Policy,
    radii: Sequence[float] = (10.0, 20.0),
    n_per_set: int = 200,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    env: EnvConfig = DEFAULT_ENV,
) -> EvalReport:
    """Evaluate on freshly sampled circle goals, one goal draw per seed."""
    report = EvalReport(env.horizon, len(seeds))
    for r in radii:
        name = f"R{r:g}"
        rows = []
        for sd in seeds:
            goals = sample_eval_goals(r, n_per_set, seed=sd * 1000 + int(round(r)))
            rows += _outcomes(policy, goals, env, (0.0, 0.0), sd)
        report.outcomes[name] = rows
    return report


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -12.0
    x_max: float = 12.0
    y_min: float = -12.0
    y_max: float = 12.0
    resolution: int = 25

    def __post_init__(self):
        if self.resolution < 2:
            raise ConfigError("grid resolution must be >= 2")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigError("grid ranges must be increasing")

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """``"lo:hi:res"`` for a square grid."""
        try:
            lo, hi, res = text.split(":")
            return cls(float(lo), float(hi), float(lo), float(hi), int(res))
        except ValueError as exc:
            raise ConfigError(f"bad grid spec {text!r}, expected lo:hi:res") from exc

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.linspace(self.x_min, self.x_max, self.resolution),
            np.linspace(self.y_min, self.y_max, self.resolution),
        )


@dataclass
class CoverageGrid:
    spec: GridSpec
    values: np.ndarray  # (resolution, resolution); row j is y_j, column i is x_i
    n_policies: int

    def to_csv(self) -> str:
        return "\n".join(",".join(repr(float(v)) for v in row) for row in self.values) + "\n"

    def sidecar(self) -> str:
        xs, ys = self.spec.centers()
        doc = {"spec": asdict(self.spec), "x_centers": xs.tolist(), "y_centers": ys.tolist(),
               "rows": "y ascending", "columns": "x ascending", "n_policies": self.n_policies}
        return json.dumps(doc, indent=2)


def coverage_grid(policies: Policy | Sequence[Policy], spec: GridSpec, env: EnvConfig = DEFAULT_ENV, s0=(0.0, 0.0)) -> CoverageGrid:
    """Success rate per grid-cell goal, averaged over the given policies (one per seed)."""
    if callable(policies):
        policies = [policies]
    xs, ys = spec.centers()
    gx, gy = np.meshgrid(xs, ys)
    goals = np.stack([gx.ravel(), gy.ravel()], axis=1)
    total = np.zeros(len(goals))
    for pol in policies:
        total += run_episodes(pol, np.asarray(s0), goals, env).max(axis=1)
    return CoverageGrid(spec, (total / len(policies)).reshape(spec.resolution, spec.resolution), len(policies))
