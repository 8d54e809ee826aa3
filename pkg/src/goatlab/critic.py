"""Ensemble of goal-conditioned Q-networks with hard-synced target copies.

Members are trained on the same mini-batches; their only source of diversity
is the initialization seed. The ensemble mean at the policy action is the value
estimate and the population standard deviation is the uncertainty signal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, NumericError
from .replay import Batch, Normalizer, RelabeledSample


@dataclass(frozen=True)
class CriticConfig:
    n_members: int = 5
    hidden: tuple[int, ...] = (64, 64)
    expectile: float | None = None  # None (or 0.5) means plain squared TD error
    discount: float = 0.98
    target_interval: int = 50
    clip_targets: bool = True

    def __post_init__(self):
        if self.n_members < 1:
            raise ConfigError("ensemble needs at least one member")
        if self.expectile is not None and not 0 < self.expectile < 1:
            raise ConfigError("expectile must lie in (0, 1)")
        if not 0 < self.discount < 1:
            raise ConfigError("discount must lie in (0, 1)")
        if self.target_interval < 1:
            raise ConfigError("target_interval must be >= 1")

    @property
    def value_cap(self) -> float:
        return 1.0 / (1.0 - self.discount)


def expectile_loss(u, tau: float):
    """``|tau - 1(u < 0)| * u**2``; tau = 0.5 gives half the squared error."""
    u = np.asarray(u, dtype=np.float64)
    return np.abs(tau - (u < 0)) * u * u


def expectile_grad(u, tau: float):
    u = np.asarray(u, dtype=np.float64)
    return 2.0 * np.abs(tau - (u < 0)) * u


@dataclass
class AdvantageEstimate:
    A: np.ndarray
    V_s: np.ndarray
    V_next: np.ndarray
    r: np.ndarray


class EnsembleCritic:
    def __init__(self, cfg: CriticConfig, normalizer: Normalizer, seed: int = 0, action_dim: int = 2):
        self.cfg = cfg
        self.normalizer = normalizer
        in_dim = 2 + action_dim + 2
        seeds = np.random.SeedSequence([seed, 4242]).generate_state(cfg.n_members)
        self.members = [nn.mlp_init([in_dim, *cfg.hidden, 1], int(sd)) for sd in seeds]
        self.targets = [m.copy() for m in self.members]
        self.opt = [nn.adam_init(m) for m in self.members]
        self.n_updates = 0

    @property
    def n_members(self) -> int:
        return len(self.members)

    def inputs(self, s, a, g) -> np.ndarray:
        return np.concatenate([self.normalizer.norm_state(s), np.asarray(a, dtype=np.float64), self.normalizer.norm_goal(g)], axis=-1)

    def q_values(self, s, a, g, target: bool = False) -> np.ndarray:
        """Member Q-values, shape ``(N, B)`` (or ``(N,)`` for a single input)."""
        x = self.inputs(s, a, g)
        nets = self.targets if target else self.members
        return np.stack([nn.forward(net, x)[..., 0] for net in nets])

    def policy_q_values(self, s, g, policy) -> np.ndarray:
        return self.q_values(s, policy(s, g), g)

    def td_targets(self, batch: Batch, policy) -> np.ndarray:
        a_next = policy(batch.s_next, batch.g)
        q_next = self.q_values(batch.s_next, a_next, batch.g, target=True)
        y = batch.r[None, :] + self.cfg.discount * q_next
        if self.cfg.clip_targets:
            y = np.clip(y, 0.0, self.cfg.value_cap)
        return y

    def td_update(self, batch: Batch, policy, lr: float, cql_alpha: float = 0.0, cql_actions=None) -> np.ndarray:
        """One Adam step per member on its TD loss; returns per-member mean loss.

        Targets come from the frozen target networks and the current policy and
        receive no gradient. With ``cql_alpha > 0`` each member also minimizes
        ``alpha * (logsumexp_k Q(s, a_k, g) - Q(s, a, g))`` over the supplied
        ``cql_actions`` of shape ``(B, K, action_dim)``.
        """
        y = self.td_targets(batch, policy)
        x = self.inputs(batch.s, batch.a, batch.g)
        B = len(batch)
        tau = self.cfg.expectile
        if cql_alpha > 0:
            K = cql_actions.shape[1]
            s_rep = np.repeat(batch.s, K, axis=0)
            g_rep = np.repeat(batch.g, K, axis=0)
            x_ood = self.inputs(s_rep, cql_actions.reshape(B * K, -1), g_rep)
        losses = np.zeros(self.n_members)
        for i, net in enumerate(self.members):
            q, cache = nn.forward_cached(net, x)
            u = y[i] - q[:, 0]
            if tau is None:
                loss = float(np.mean(u * u))
                dq = -2.0 * u / B
            else:
                loss = float(np.mean(expectile_loss(u, tau)))
                dq = -expectile_grad(u, tau) / B
            grads, _ = nn.backward_cached(net, cache, dq[:, None])
            if cql_alpha > 0:
                q_ood, cache_ood = nn.forward_cached(net, x_ood)
                q_ood = q_ood[:, 0].reshape(B, K)
                m = q_ood.max(axis=1, keepdims=True)
                lse = m[:, 0] + np.log(np.exp(q_ood - m).sum(axis=1))
                loss += cql_alpha * float(np.mean(lse - q[:, 0]))
                soft = np.exp(q_ood - lse[:, None])
                g_ood, _ = nn.backward_cached(net, cache_ood, (cql_alpha / B) * soft.reshape(B * K, 1))
                g_data, _ = nn.backward_cached(net, cache, np.full((B, 1), -cql_alpha / B))
                grads = nn.ParamGrads(
                    [a + b + c for a, b, c in zip(grads.weights, g_ood.weights, g_data.weights)],
                    [a + b + c for a, b, c in zip(grads.biases, g_ood.biases, g_data.biases)],
                )
            if not np.isfinite(loss):
                raise NumericError(f"non-finite TD loss in ensemble member {i}")
            try:
                nn.adam_step(net, grads, self.opt[i], lr)
            except NumericError as exc:
                raise NumericError(f"ensemble member {i}: {exc}") from exc
            losses[i] = loss
        self.n_updates += 1
        if self.n_updates % self.cfg.target_interval == 0:
            self.sync_targets()
        return losses

    def sync_targets(self) -> None:
        self.targets = [m.copy() for m in self.members]

    def action_gradient(self, s, a, g) -> np.ndarray:
        """Gradient of the ensemble-mean Q w.r.t. the action input, one row per sample."""
        x = self.inputs(s, a, g)
        B = x.shape[0]
        total = np.zeros((B, x.shape[1]))
        for net in self.members:
            _, cache = nn.forward_cached(net, x)
            _, dx = nn.backward_cached(net, cache, np.ones((B, 1)))
            total += dx
        return total[:, 2:-2] / self.n_members

    # -- checkpoints ---------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        cfg = asdict(self.cfg)
        cfg["hidden"] = list(cfg["hidden"])
        meta = {"config": cfg, "n_updates": self.n_updates, "normalizer": self.normalizer.to_dict()}
        (d / "critic.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        for i, (m, t) in enumerate(zip(self.members, self.targets)):
            nn.save_network(m, d / f"member_{i}.bin")
            nn.save_network(t, d / f"target_{i}.bin")

    @classmethod
    def load(cls, directory: str | Path) -> "EnsembleCritic":
        d = Path(directory)
        meta = json.loads((d / "critic.json").read_text())
        cfg_doc = dict(meta["config"])
        cfg_doc["hidden"] = tuple(cfg_doc["hidden"])
        crit = cls(CriticConfig(**cfg_doc), Normalizer.from_dict(meta["normalizer"]))
        crit.members = [nn.load_network(d / f"member_{i}.bin") for i in range(crit.cfg.n_members)]
        crit.targets = [nn.load_network(d / f"target_{i}.bin") for i in range(crit.cfg.n_members)]
        crit.opt = [nn.adam_init(m) for m in crit.members]
        crit.n_updates = meta["n_updates"]
        return crit


def td_update(crit: EnsembleCritic, batch: Batch, policy, lr: float) -> np.ndarray:
    return crit.td_update(batch, policy, lr)


def target_sync(crit: EnsembleCritic) -> EnsembleCritic:
    crit.sync_targets()
    return crit


def value(crit: EnsembleCritic, s, g, policy) -> np.ndarray:
    """Ensemble mean of ``Q_i(s, pi(s, g), g)``."""
    return crit.policy_q_values(s, g, policy).mean(axis=0)


def uncertainty(crit: EnsembleCritic, s, g, policy) -> np.ndarray:
    """Population (divide-by-N) standard deviation of member Q-values at the policy action."""
    return crit.policy_q_values(s, g, policy).std(axis=0)


def value_and_uncertainty(crit: EnsembleCritic, s, g, policy) -> tuple[np.ndarray, np.ndarray]:
    q = crit.policy_q_values(s, g, policy)
    return q.mean(axis=0), q.std(axis=0)


def advantage(crit: EnsembleCritic, sample: Batch | RelabeledSample, policy) -> AdvantageEstimate:
    """One-step advantage ``r + gamma * V(s', g) - V(s, g)`` using the stored reward."""
    s, s_next, g = sample.s, sample.s_next, sample.g
    r = np.asarray(sample.r, dtype=np.float64)
    v_s = value(crit, s, g, policy)
    v_next = value(crit, s_next, g, policy)
    return AdvantageEstimate(r + crit.cfg.discount * v_next - v_s, v_s, v_next, r)
