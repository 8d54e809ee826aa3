"""Sweeps over (algorithm, dataset, seed) cells and the didactic results tables."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, replace
from multiprocessing import get_context
from typing import Iterable, Sequence

import numpy as np

from .agents import ALGORITHMS, DISPLAY_NAMES, AlgoConfig, train
from .env import DEFAULT_ENV, DatasetKind, EnvConfig, generate_dataset
from .errors import ConfigError, NumericError
from .evaluation import evaluate_radii
from .replay import OfflineDataset

log = logging.getLogger(__name__)

DATASETS = {
    "e10": DatasetKind.expert(10),
    "ne10": DatasetKind.nonexpert(10),
    "ne50": DatasetKind.nonexpert(50),
}
DATASET_LABELS = {"e10": "Expert 10", "ne10": "Non-Expert 10", "ne50": "Non-Expert 50"}


@dataclass(frozen=True)
class Budget:
    """Training size knobs shared by every cell of a sweep."""

    steps: int
    batch_size: int
    hidden: tuple[int, ...]

    def apply(self, cfg: AlgoConfig) -> AlgoConfig:
        return replace(cfg, steps=self.steps, batch_size=self.batch_size, hidden=tuple(self.hidden))


# "desk" is the pinned budget used by the acceptance suite and `reproduce`;
# "full" matches the library defaults; "smoke" exists for plumbing tests.
BUDGETS = {
    "desk": Budget(3000, 256, (128, 128)),
    "full": Budget(50_000, 512, (64, 64)),
    "smoke": Budget(60, 32, (16, 16)),
}


def dataset_kind(key: str) -> DatasetKind:
    try:
        return DATASETS[key]
    except KeyError:
        raise ConfigError(f"unknown dataset {key!r}; choose from {', '.join(DATASETS)}") from None


@dataclass(frozen=True)
class Cell:
    algo: str
    dataset: str
    seed: int
    budget: Budget
    n_goals: int = 200
    env: EnvConfig = DEFAULT_ENV


def run_cell(cell: Cell) -> dict:
    """Train one (algorithm, dataset, seed) run and evaluate it on fresh R10/R20 goals."""
    t0 = time.perf_counter()
    row = {"algo": cell.algo, "dataset": cell.dataset, "seed": cell.seed}
    try:
        data = OfflineDataset(generate_dataset(dataset_kind(cell.dataset), cell.seed, cell.env), cell.env)
        cfg = cell.budget.apply(AlgoConfig(algo=cell.algo, seed=cell.seed, env=cell.env, eval_goals=20))
        art = train(cfg, data)
        report = evaluate_radii(art.policy, (10.0, 20.0), cell.n_goals, (cell.seed,), cell.env)
    except NumericError as exc:
        log.warning("cell %s/%s/%d failed: %s", cell.algo, cell.dataset, cell.seed, exc)
        row.update(status="diverged", error=str(exc), seconds=time.perf_counter() - t0)
        return row
    for name in ("R10", "R20"):
        row[f"success_{name}"] = report.success_rate(name)
        row[f"return_{name}"] = report.mean_return(name, "stay")
        row[f"return_rollout_{name}"] = report.mean_return(name, "rollout")
    row.update(status="ok", seconds=time.perf_counter() - t0)
    return row


def sweep(
    algos: Sequence[str],
    datasets: Sequence[str],
    seeds: Iterable[int],
    budget: Budget,
    n_goals: int = 200,
    jobs: int = 1,
    env: EnvConfig = DEFAULT_ENV,
) -> list[dict]:
    for a in algos:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    for d in datasets:
        dataset_kind(d)
    cells = [Cell(a, d, int(s), budget, n_goals, env) for d in datasets for a in algos for s in seeds]
    if jobs <= 1:
        return [run_cell(c) for c in cells]
    with get_context("spawn").Pool(jobs) as pool:
        return pool.map(run_cell, cells, chunksize=1)


METRICS = ("success_R10", "success_R20", "return_R10", "return_R20", "return_rollout_R10", "return_rollout_R20")


def aggregate(rows: Sequence[dict]) -> dict[tuple[str, str], dict]:
    """Mean and population std per (algo, dataset) over the successful seeds."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["algo"], r["dataset"]), []).append(r)
    out = {}
    for key, rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        cell = {"n_seeds": len(ok), "n_failed": len(rs) - len(ok)}
        for m in METRICS:
            vals = np.array([r[m] for r in ok], dtype=np.float64)
            cell[m] = (float(vals.mean()), float(vals.std())) if len(vals) else None
        out[key] = cell
    return out


def missing_cells(agg: dict, algos: Sequence[str], datasets: Sequence[str]) -> list[tuple[str, str]]:
    return [(a, d) for a in algos for d in datasets if (a, d) not in agg or agg[(a, d)]["n_seeds"] == 0]


def table_csv(agg: dict, algos: Sequence[str], datasets: Sequence[str], kind: str = "success") -> str:
    """Results table: one row per algorithm, an R10 and R20 column per dataset, cells ``mean ± std``."""
    if kind not in ("success", "return"):
        raise ConfigError("table kind must be 'success' or 'return'")
    digits = 2 if kind == "success" else 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["agent"] + [f"{DATASET_LABELS[d]} {r}" for d in datasets for r in ("R10", "R20")])
    for a in algos:
        row = [DISPLAY_NAMES[a]]
        for d in datasets:
            for r in ("R10", "R20"):
                stat = agg.get((a, d), {}).get(f"{kind}_{r}")
                row.append("missing" if stat is None else f"{stat[0]:.{digits}f} ± {stat[1]:.{digits}f}")
        w.writerow(row)
    return buf.getvalue()


def runs_csv(rows: Sequence[dict]) -> str:
    cols = ["algo", "dataset", "seed", "status", *METRICS, "seconds"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
