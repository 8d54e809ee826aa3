"""Per-sample imitation weights.

The full weight is the product of four factors:

* ``eaw``  exponential advantage weight, ``min(exp(beta * A), M)``
* ``dsw``  data selection weight, 1 when ``A`` reaches the running percentile
  threshold and ``eps_low`` otherwise
* ``uw``   uncertainty weight, ``clip(tanh(w * std_norm) + w_min, 0, 1)``
* ``drw``  discounted relabeling weight ``gamma ** (i - t)`` (off by default)

Factors a given algorithm does not use are fixed at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .replay import FifoQueue, extremes, quantile


@dataclass(frozen=True)
class WeightConfig:
    beta: float = 2.0
    eaw_clip: float = 10.0
    alpha_max: float = 80.0
    ramp_fraction: float = 0.2
    eps_low: float = 0.05
    uw_sharpness: float = 2.0
    w_min: float = 0.5
    drw_enabled: bool = False
    dsw_warmup: int = 1000
    queue_capacity: int = 50_000
    use_eaw: bool = True
    use_dsw: bool = True
    use_uw: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if not self.eaw_clip > 0:
            raise ConfigError("eaw_clip must be positive")
        if not 0 <= self.alpha_max <= 100:
            raise ConfigError("alpha_max must lie in [0, 100]")
        if not 0 < self.eps_low <= 1:
            raise ConfigError("eps_low must lie in (0, 1]")
        if not self.uw_sharpness > 0:
            raise ConfigError("uw_sharpness must be positive")
        if not 0 <= self.w_min <= 1:
            raise ConfigError("w_min must lie in [0, 1]")
        if not 0 <= self.ramp_fraction <= 1:
            raise ConfigError("ramp_fraction must lie in [0, 1]")


@dataclass
class WeightBundle:
    eaw: np.ndarray
    dsw: np.ndarray
    uw: np.ndarray
    drw: np.ndarray
    product: np.ndarray
    threshold: float | None = None
    alpha: float = 0.0


def eaw(A, cfg: WeightConfig):
    # clip in log space so huge advantages never overflow
    # and clip again afterwards because exp(log(M)) can exceed M by one ulp
    log_cap = math.log(cfg.eaw_clip)
    return np.minimum(np.exp(np.minimum(cfg.beta * np.asarray(A, dtype=np.float64), log_cap)), cfg.eaw_clip)


def dsw(A, c: float, cfg: WeightConfig):
    return np.where(np.asarray(A) >= c, 1.0, cfg.eps_low)


def normalized_std(std_raw, std_min: float, std_max: float):
    span = std_max - std_min
    if span <= 0:
        return np.zeros_like(np.asarray(std_raw, dtype=np.float64))
    return np.clip((np.asarray(std_raw, dtype=np.float64) - std_min) / span, 0.0, 1.0)


def uw(std_raw, std_min: float, std_max: float, cfg: WeightConfig):
    std_norm = normalized_std(std_raw, std_min, std_max)
    return np.clip(np.tanh(std_norm * cfg.uw_sharpness) + cfg.w_min, 0.0, 1.0)


def drw(i, t, gamma: float, enabled: bool = True):
    i = np.asarray(i)
    t = np.asarray(t)
    if np.any(i < t):
        raise IndexError("relabel index precedes the transition index")
    if not enabled:
        return np.ones(np.broadcast(i, t).shape)
    return np.power(gamma, (i - t).astype(np.float64))


def alpha_schedule(step: int, total_steps: int, cfg: WeightConfig) -> float:
    """Percentile used by DSW: linear from 0 to ``alpha_max`` over the ramp, then flat."""
    ramp = cfg.ramp_fraction * total_steps
    if ramp <= 0:
        return cfg.alpha_max
    return cfg.alpha_max * min(step / ramp, 1.0)


class WeightQueues:
    """The advantage queue used by DSW and the Std queue used by UW."""

    def __init__(self, capacity: int = 50_000):
        self.advantages = FifoQueue(capacity)
        self.stds = FifoQueue(capacity)


def combine(
    A,
    std,
    queues: WeightQueues,
    cfg: WeightConfig,
    alpha: float,
    relabel_index=None,
    t=None,
    gamma: float = 0.98,
) -> WeightBundle:
    """Weights for one mini-batch, following the per-step order of the training loop.

    Advantages are pushed into the advantage queue before the percentile is
    read; Stds are pushed into the Std queue before its extremes are read.
    ``relabel_index`` uses the state-index convention of :mod:`replay`, so the
    discount exponent is ``relabel_index - 1 - t``; entries below zero mark
    samples that kept their original goal and get ``drw = 1``.
    """
    A = np.asarray(A, dtype=np.float64)
    ones = np.ones_like(A)
    w_eaw = eaw(A, cfg) if cfg.use_eaw else ones
    threshold = None
    if cfg.use_dsw:
        queues.advantages.push_many(A)
        if len(queues.advantages) >= cfg.dsw_warmup:
            threshold = quantile(queues.advantages, alpha)
            w_dsw = dsw(A, threshold, cfg)
        else:
            w_dsw = ones
    else:
        w_dsw = ones
    if cfg.use_uw:
        std = np.asarray(std, dtype=np.float64)
        queues.stds.push_many(std)
        lo, hi = extremes(queues.stds)
        w_uw = uw(std, lo, hi, cfg)
    else:
        w_uw = ones
    if cfg.drw_enabled and relabel_index is not None:
        relabel_index = np.asarray(relabel_index)
        t = np.asarray(t)
        relabeled = relabel_index >= 0
        step_idx = np.where(relabeled, relabel_index - 1, t)
        w_drw = drw(step_idx, t, gamma)
    else:
        w_drw = ones
    product = w_eaw * w_dsw * w_uw * w_drw
    return WeightBundle(w_eaw, w_dsw, w_uw, w_drw, product, threshold, alpha)
