"""Training loops for GOAT and its baseline ladder.

All imitation-style algorithms share one loop and differ only in which weight
factors are active and whether a critic exists:

==========  ======  =====================  ==============================
algorithm   critic  relabel                policy objective
==========  ======  =====================  ==============================
bc          --      never                  MSE
gcsl        --      p_relabel              MSE
marwil_her  Q x 1   p_relabel              eaw-weighted MSE
wgcsl       Q x 1   p_relabel              eaw*dsw(*drw)-weighted MSE
goat        Q x N   p_relabel              uw*eaw*dsw-weighted MSE
goat_tau    Q x N   p_relabel              as goat, expectile TD loss
ddpg_her    Q x 1   p_relabel              maximize Q(s, pi(s, g), g)
cql_her     Q x 1   p_relabel              as ddpg_her, conservative Q
==========  ======  =====================  ==============================
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .critic import CriticConfig, EnsembleCritic
from .env import DEFAULT_ENV, EnvConfig, sample_eval_goals
from .errors import ConfigError, NumericError
from .evaluation import success_rate
from .policy import MLPPolicy
from .replay import Batch, Normalizer, OfflineDataset, sample_batch
from .weighting import WeightConfig, WeightQueues, alpha_schedule, combine

log = logging.getLogger(__name__)

ALGORITHMS = ("bc", "gcsl", "marwil_her", "wgcsl", "goat", "goat_tau", "ddpg_her", "cql_her")
DISPLAY_NAMES = {
    "bc": "BC",
    "gcsl": "GCSL",
    "marwil_her": "MARWIL+HER",
    "wgcsl": "WGCSL",
    "goat": "GOAT",
    "goat_tau": "GOAT(tau)",
    "ddpg_her": "DDPG+HER",
    "cql_her": "CQL+HER",
}
CRITIC_FREE = ("bc", "gcsl")
ACTOR_CRITIC = ("ddpg_her", "cql_her")


class TrainingDiverged(NumericError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class AlgoConfig:
    algo: str = "goat"
    steps: int = 50_000
    batch_size: int = 512
    lr: float = 5e-4
    p_relabel: float = 1.0
    n_ensemble: int = 5
    tau: float | None = None
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    target_interval: int = 50
    cql_alpha: float = 1.0
    cql_samples: int = 10
    eval_every: int = 0  # 0 -> ten evaluations over the run
    eval_goals: int = 100
    env: EnvConfig = field(default_factory=EnvConfig)
    weights: WeightConfig = field(default_factory=WeightConfig)

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {', '.join(ALGORITHMS)}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.p_relabel <= 1:
            raise ConfigError("p_relabel must lie in [0, 1]")
        if self.n_ensemble < 1:
            raise ConfigError("n_ensemble must be >= 1")
        if self.tau is not None and not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")

    # -- resolved views ---------------------------------------------------------

    @property
    def uses_critic(self) -> bool:
        return self.algo not in CRITIC_FREE

    @property
    def relabel_probability(self) -> float:
        return 0.0 if self.algo == "bc" else self.p_relabel

    def critic_config(self) -> CriticConfig:
        n = self.n_ensemble if self.algo in ("goat", "goat_tau") else 1
        tau = None
        if self.algo == "goat_tau":
            tau = 0.1 if self.tau is None else self.tau
        return CriticConfig(n, tuple(self.hidden), tau, self.env.discount, self.target_interval)

    def weight_config(self) -> WeightConfig:
        w = self.weights
        if self.algo in ("bc", "gcsl", "ddpg_her", "cql_her"):
            return replace(w, use_eaw=False, use_dsw=False, use_uw=False, drw_enabled=False)
        if self.algo == "marwil_her":
            return replace(w, use_eaw=True, use_dsw=False, use_uw=False, drw_enabled=False)
        if self.algo == "wgcsl":
            return replace(w, use_eaw=True, use_dsw=True, use_uw=False)
        return replace(w, use_eaw=True, use_dsw=True, use_uw=True)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "AlgoConfig":
        doc = dict(doc)
        if "env" in doc:
            doc["env"] = EnvConfig(**doc["env"])
        if "weights" in doc:
            doc["weights"] = WeightConfig(**doc["weights"])
        if "hidden" in doc:
            doc["hidden"] = tuple(doc["hidden"])
        return cls(**doc)


@dataclass
class PolicyArtifacts:
    config: AlgoConfig
    policy: MLPPolicy
    critic: EnsembleCritic | None
    normalizer: Normalizer
    log: list[dict]
    weight_log: list[dict]

    def save(self, run_dir: str | Path) -> None:
        """Write ``checkpoints/`` and ``logs/`` under ``run_dir``."""
        run_dir = Path(run_dir)
        ckpt = run_dir / "checkpoints"
        logs = run_dir / "logs"
        ckpt.mkdir(parents=True, exist_ok=True)
        logs.mkdir(parents=True, exist_ok=True)
        nn.save_network(self.policy.net, ckpt / "policy.bin")
        (ckpt / "normalizer.json").write_text(json.dumps(self.normalizer.to_dict(), indent=2))
        (ckpt / "algo.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True))
        if self.critic is not None:
            self.critic.save(ckpt / "critic")
        (logs / "train.ndjson").write_text("".join(json.dumps(row) + "\n" for row in self.log))
        (logs / "weights.csv").write_text(weight_log_csv(self.weight_log))


def load_policy(ckpt_dir: str | Path) -> MLPPolicy:
    ckpt_dir = Path(ckpt_dir)
    if (ckpt_dir / "checkpoints").is_dir():
        ckpt_dir = ckpt_dir / "checkpoints"
    net = nn.load_network(ckpt_dir / "policy.bin")
    norm = Normalizer.from_dict(json.loads((ckpt_dir / "normalizer.json").read_text()))
    return MLPPolicy(net, norm)


def weight_log_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["step", "mean_eaw", "frac_selected", "mean_uw"], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


# -- losses -------------------------------------------------------------------


def policy_loss_and_grads(batch: Batch, policy: MLPPolicy, weights) -> tuple[float, nn.ParamGrads]:
    """Weighted squared action error ``mean_i w_i * |a_i - pi(s_i, g_i)|^2`` and its gradient."""
    weights = np.asarray(weights, dtype=np.float64)
    if not np.isfinite(weights).all():
        raise NumericError("non-finite imitation weights")
    out, cache = policy.forward_cached(batch.s, batch.g)
    diff = out - batch.a
    B = len(batch)
    loss = float(np.sum(weights * np.sum(diff * diff, axis=1)) / B)
    if not np.isfinite(loss):
        raise NumericError("non-finite policy loss")
    upstream = (2.0 / B) * weights[:, None] * diff
    grads, _ = nn.backward_cached(policy.net, cache, upstream)
    return loss, grads


def policy_loss(batch: Batch, policy: MLPPolicy, weights) -> float:
    return policy_loss_and_grads(batch, policy, weights)[0]


def empirical_imitation_loss(policy, s, a, g) -> float:
    """Mean squared action error of ``policy`` on the given samples."""
    pred = policy(np.asarray(s), np.asarray(g))
    return float(np.mean(np.sum((pred - np.asarray(a)) ** 2, axis=-1)))


def actor_grads(batch: Batch, policy: MLPPolicy, critic: EnsembleCritic) -> tuple[float, nn.ParamGrads]:
    """Gradient of ``-mean Q(s, pi(s, g), g)`` w.r.t. the policy parameters."""
    out, cache = policy.forward_cached(batch.s, batch.g)
    B = len(batch)
    q = critic.q_values(batch.s, out, batch.g).mean(axis=0)
    dq_da = critic.action_gradient(batch.s, out, batch.g)
    grads, _ = nn.backward_cached(policy.net, cache, -dq_da / B)
    return -float(q.mean()), grads


# -- training loop ------------------------------------------------------------


class Trainer:
    """One training run; ``step()`` performs one loop iteration."""

    def __init__(self, config: AlgoConfig, data: OfflineDataset):
        self.cfg = config
        self.data = data
        self.normalizer = Normalizer.fit(data)
        ss = np.random.SeedSequence([config.seed, 20230])
        init_seed, critic_seed, sample_seed = ss.generate_state(3)
        self.rng = np.random.default_rng(int(sample_seed))
        self.policy = MLPPolicy.create(self.normalizer, config.hidden, int(init_seed), config.env)
        self.policy_opt = nn.adam_init(self.policy.net)
        self.critic = EnsembleCritic(config.critic_config(), self.normalizer, int(critic_seed)) if config.uses_critic else None
        self.wcfg = config.weight_config()
        self.queues = WeightQueues(self.wcfg.queue_capacity)
        self.n_steps = 0
        self._acc: dict[str, list[float]] = {}

    def _record(self, **values):
        for k, v in values.items():
            self._acc.setdefault(k, []).append(float(v))

    def drain(self) -> dict:
        out = {k: float(np.mean(v)) for k, v in self._acc.items()}
        self._acc = {}
        return out

    def step(self) -> None:
        cfg = self.cfg
        batch = sample_batch(self.data, cfg.batch_size, cfg.relabel_probability, self.rng)
        if self.critic is not None:
            cql_actions = None
            if cfg.algo == "cql_her":
                bound = cfg.env.action_bound
                cql_actions = self.rng.uniform(-bound, bound, size=(len(batch), cfg.cql_samples, 2))
            alpha_cql = cfg.cql_alpha if cfg.algo == "cql_her" else 0.0
            closs = self.critic.td_update(batch, self.policy, cfg.lr, alpha_cql, cql_actions)
            self._record(critic_loss=closs.mean())

        if cfg.algo in ACTOR_CRITIC:
            loss, grads = actor_grads(batch, self.policy, self.critic)
        else:
            weights = self._imitation_weights(batch)
            loss, grads = policy_loss_and_grads(batch, self.policy, weights)
        nn.adam_step(self.policy.net, grads, self.policy_opt, cfg.lr)
        self._record(policy_loss=loss)
        self.n_steps += 1

    def _imitation_weights(self, batch: Batch) -> np.ndarray:
        w = self.wcfg
        if not (w.use_eaw or w.use_dsw or w.use_uw or w.drw_enabled):
            return np.ones(len(batch))
        B = len(batch)
        s2 = np.concatenate([batch.s, batch.s_next])
        g2 = np.concatenate([batch.g, batch.g])
        q = self.critic.q_values(s2, self.policy(s2, g2), g2)
        v = q.mean(axis=0)
        A = batch.r + self.cfg.env.discount * v[B:] - v[:B]
        std = q[:, :B].std(axis=0)
        alpha = alpha_schedule(self.n_steps, self.cfg.steps, w)
        bundle = combine(A, std, self.queues, w, alpha, batch.relabel_index, batch.t, self.cfg.env.discount)
        self._record(
            mean_A=A.mean(),
            mean_eaw=bundle.eaw.mean(),
            frac_selected=float(np.mean(bundle.dsw == 1.0)),
            mean_uw=bundle.uw.mean(),
        )
        return bundle.product


def train(config: AlgoConfig, data: OfflineDataset, progress: bool = False) -> PolicyArtifacts:
    """Run the configured algorithm for ``config.steps`` policy updates."""
    trainer = Trainer(config, data)
    eval_every = config.eval_every or max(config.steps // 10, 1)
    goals = {
        "R10": sample_eval_goals(10.0, config.eval_goals, seed=10_000 + config.seed),
        "R20": sample_eval_goals(20.0, config.eval_goals, seed=20_000 + config.seed),
    }
    log_rows: list[dict] = []
    weight_rows: list[dict] = []
    for step in range(1, config.steps + 1):
        try:
            trainer.step()
        except NumericError as exc:
            snapshot = {"step": step, "algo": config.algo, "seed": config.seed, "recent": trainer.drain()}
            raise TrainingDiverged(f"training diverged at step {step}: {exc}", snapshot) from exc
        if step % eval_every == 0 or step == config.steps:
            stats = trainer.drain()
            row = {
                "step": step,
                "policy_loss": stats.get("policy_loss"),
                "critic_loss": stats.get("critic_loss"),
                "mean_A": stats.get("mean_A"),
                "frac_selected": stats.get("frac_selected"),
                "mean_uw": stats.get("mean_uw"),
                "eval_R10": success_rate(trainer.policy, goals["R10"], config.env),
                "eval_R20": success_rate(trainer.policy, goals["R20"], config.env),
            }
            log_rows.append(row)
            if "mean_eaw" in stats:
                weight_rows.append(
                    {
                        "step": step,
                        "mean_eaw": stats["mean_eaw"],
                        "frac_selected": stats["frac_selected"],
                        "mean_uw": stats["mean_uw"],
                    }
                )
            if progress:
                log.info("%s seed=%d %s", config.algo, config.seed, row)
    return PolicyArtifacts(config, trainer.policy, trainer.critic, trainer.normalizer, log_rows, weight_rows)
