"""Command-line entry point: ``goatlab generate | train | eval | reproduce | verify-theory``.

Configuration precedence (lowest to highest): built-in defaults, the file given
with ``--config`` (TOML, or the JSON ``config.copy`` of an earlier run), then
command-line flags. The output root defaults to ``$GOATLAB_OUTPUT_ROOT`` or
``./goatlab-runs``.

Exit codes: 0 success, 2 usage/configuration error, 3 numeric failure
(divergence, failed theorem check, missing sweep cells), 4 I/O or data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .agents import ALGORITHMS, AlgoConfig, TrainingDiverged, load_policy, train
from .divergence import verify_uniform_minimax
from .env import DatasetKind, EnvConfig, generate_dataset, read_dataset, write_dataset
from .errors import ConfigError, DataError, NumericError, ShapeError
from .evaluation import GridSpec, coverage_grid, evaluate_radii
from .experiments import BUDGETS, DATASETS, aggregate, missing_cells, runs_csv, sweep, table_csv
from .replay import OfflineDataset
from .weighting import WeightConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("goatlab")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "GOATLAB_OUTPUT_ROOT"


def output_root(flag: str | None, cfg: dict | None = None) -> Path:
    if flag:
        return Path(flag)
    if cfg and cfg.get("output_root"):
        return Path(cfg["output_root"])
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "goatlab-runs"))


def load_config_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    try:
        doc = json.loads(text) if text.lstrip().startswith("{") else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a table at the top level")
    return doc


def _build(cls, doc: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    return cls(**doc)


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def resolve_algo_config(cfg: dict, args) -> AlgoConfig:
    """Merge the ``[algo]``, ``[env]`` and ``[weights]`` sections with flag overrides."""
    algo_doc = dict(cfg.get("algo", {}))
    for key in ("env", "weights"):
        if key in algo_doc:
            raise ConfigError(f"put [{key}] at the top level, not inside [algo]")
    if getattr(args, "budget", None):
        b = BUDGETS[args.budget]
        algo_doc.update(steps=b.steps, batch_size=b.batch_size, hidden=list(b.hidden))
    overrides = {
        "algo": args.algo,
        "seed": args.seed,
        "steps": args.steps,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "p_relabel": args.p_relabel,
        "n_ensemble": args.ensemble,
        "tau": args.tau,
    }
    algo_doc.update({k: v for k, v in overrides.items() if v is not None})
    if args.hidden is not None:
        algo_doc["hidden"] = list(_parse_ints(args.hidden))
    if "hidden" in algo_doc:
        algo_doc["hidden"] = tuple(algo_doc["hidden"])
    env = _build(EnvConfig, dict(cfg.get("env", {})), "env")
    weights_doc = dict(cfg.get("weights", {}))
    if args.drw:
        weights_doc["drw_enabled"] = True
    weights = _build(WeightConfig, weights_doc, "weights")
    algo_doc.update(env=env, weights=weights)
    return _build(AlgoConfig, algo_doc, "algo")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- subcommands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    env = _build(EnvConfig, dict(load_config_file(args.config).get("env", {})), "env")
    if args.kind == "expert":
        kind = DatasetKind.expert(args.n)
    else:
        kind = DatasetKind.nonexpert(args.n, args.noise_std, args.p_random)
    trajs = generate_dataset(kind, args.seed, env)
    out = Path(args.out) if args.out else output_root(args.output_root) / "datasets" / f"{args.kind}{args.n}-s{args.seed}.ndjson"
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"kind": kind.name, "seed": args.seed, "noise_std": kind.noise_std, "p_random": kind.p_random}
    write_dataset(out, trajs, meta)
    summary = OfflineDataset(trajs, env).summary()
    print(json.dumps({"path": str(out), **summary}, indent=2))
    return EXIT_OK


def _load_training_data(cfg: dict, args, env: EnvConfig):
    ds = dict(cfg.get("dataset", {}))
    if args.data:
        ds = {"path": args.data}
    if "path" in ds:
        path = Path(ds["path"])
        header, trajs = read_dataset(path)
        ref = {"path": str(path.resolve()), "sha256": _sha256(path), "header": header}
        stem = path.stem
    elif "kind" in ds:
        kind = DatasetKind(ds["kind"], int(ds.get("n", 10)))
        seed = int(ds.get("seed", 0))
        trajs = generate_dataset(kind, seed, env)
        ref = {"generated": {"kind": kind.name, "n": kind.n_traj, "seed": seed}}
        stem = f"{kind.name}{kind.n_traj}-s{seed}"
    else:
        raise ConfigError("no dataset: pass --data or give [dataset] path or kind/n/seed in the config")
    return OfflineDataset(trajs, env), ref, stem, ds


def cmd_train(args) -> int:
    cfg = load_config_file(args.config)
    algo_cfg = resolve_algo_config(cfg, args)
    data, ref, stem, ds_doc = _load_training_data(cfg, args, algo_cfg.env)
    run_id = args.run_id or cfg.get("run_id") or f"{algo_cfg.algo}-{stem}-s{algo_cfg.seed}"
    run_dir = output_root(args.output_root, cfg) / "runs" / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    algo_doc = algo_cfg.to_dict()
    resolved = {
        "tool_version": __version__,
        "run_id": run_id,
        "algo": {k: v for k, v in algo_doc.items() if k not in ("env", "weights")},
        "env": algo_doc["env"],
        "weights": algo_doc["weights"],
        "dataset": ds_doc,
        "eval": dict(cfg.get("eval", {})),
    }
    _write_json(run_dir / "config.copy", resolved)
    _write_json(run_dir / "dataset.ref", ref)
    (run_dir / "reports").mkdir(exist_ok=True)
    try:
        art = train(algo_cfg, data, progress=args.verbose)
    except TrainingDiverged as exc:
        _write_json(run_dir / "logs" / "divergence.json", {"error": str(exc), "snapshot": exc.snapshot})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    art.save(run_dir)
    _write_json(run_dir / "reports" / "train_summary.json", {"run_id": run_id, "final": art.log[-1] if art.log else None})
    print(str(run_dir))
    return EXIT_OK


def _locate_checkpoint(path: Path) -> tuple[Path, Path | None]:
    """Return ``(checkpoint_dir, run_dir or None)``."""
    if (path / "checkpoints" / "policy.bin").is_file():
        return path / "checkpoints", path
    if (path / "policy.bin").is_file():
        run_dir = path.parent if path.name == "checkpoints" else None
        return path, run_dir
    raise FileNotFoundError(f"no policy checkpoint under {path}")


def cmd_eval(args) -> int:
    ckpt, run_dir = _locate_checkpoint(Path(args.ckpt))
    policy = load_policy(ckpt)
    algo_json = ckpt / "algo.json"
    env = AlgoConfig.from_dict(json.loads(algo_json.read_text())).env if algo_json.is_file() else EnvConfig()
    out = Path(args.out) if args.out else (run_dir / "reports" if run_dir else Path("reports"))
    out.mkdir(parents=True, exist_ok=True)
    radii = _parse_floats(args.radii)
    if not radii:
        raise ConfigError("--radii needs at least one radius")
    if args.seeds < 1 or args.n < 1:
        raise ConfigError("--seeds and --n must be >= 1")
    report = evaluate_radii(policy, radii, args.n, tuple(range(args.seeds)), env)
    (out / "eval.json").write_text(report.to_json() + "\n")
    (out / "eval.csv").write_text(report.to_csv())
    summary = report.summary()
    if args.coverage:
        grid = coverage_grid(policy, GridSpec.parse(args.grid), env)
        (out / "coverage.csv").write_text(grid.to_csv())
        (out / "coverage.json").write_text(grid.sidecar() + "\n")
        summary["coverage_mean"] = float(grid.values.mean())
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    budget = BUDGETS[args.budget]
    if args.steps or args.batch_size or args.hidden:
        budget = type(budget)(
            args.steps or budget.steps,
            args.batch_size or budget.batch_size,
            _parse_ints(args.hidden) if args.hidden else budget.hidden,
        )
    algos = tuple(a.strip() for a in args.algos.split(",")) if args.algos else ALGORITHMS
    datasets = tuple(d.strip() for d in args.datasets.split(","))
    rows = sweep(algos, datasets, range(args.seeds), budget, args.n_goals, args.jobs)
    agg = aggregate(rows)
    out = Path(args.out) if args.out else output_root(args.output_root) / "reproduce"
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.csv").write_text(runs_csv(rows))
    tables = ("success", "return") if args.table == "both" else (args.table.split("-")[1],)
    for kind in tables:
        text = table_csv(agg, algos, datasets, kind)
        (out / f"point-{kind}.csv").write_text(text)
        print(text)
    summary = {
        "tool_version": __version__,
        "budget": asdict(budget),
        "seeds": args.seeds,
        "n_goals": args.n_goals,
        "cells": {f"{a}/{d}": v for (a, d), v in sorted(agg.items())},
    }
    _write_json(out / "summary.json", summary)
    missing = missing_cells(agg, algos, datasets)
    if missing:
        print(f"error: {len(missing)} cells have no successful run: {missing}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    if args.n < 1 or not args.C > 1.0 / args.n:
        raise ConfigError(f"need C > 1/n (got C={args.C}, n={args.n})")
    report = verify_uniform_minimax(args.n, args.C, args.trials, args.seed, strict=False)
    doc = report.to_dict()
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if report.ok else EXIT_NUMERIC


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="goatlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"goatlab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a PointReach dataset as NDJSON")
    g.add_argument("--kind", required=True, choices=("expert", "nonexpert"))
    g.add_argument("--n", type=int, default=10, help="number of trajectories")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-std", type=float, default=0.2)
    g.add_argument("--p-random", type=float, default=0.3)
    g.add_argument("--out", help="output file (default: <root>/datasets/<kind><n>-s<seed>.ndjson)")
    g.add_argument("--output-root")
    g.add_argument("--config")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one algorithm on one dataset")
    t.add_argument("--config", help="TOML config (or a run's config.copy)")
    t.add_argument("--algo", choices=ALGORITHMS)
    t.add_argument("--data", help="NDJSON dataset file")
    t.add_argument("--seed", type=int)
    t.add_argument("--budget", choices=tuple(BUDGETS), help="preset for steps/batch size/hidden sizes")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--p-relabel", type=float)
    t.add_argument("--ensemble", type=int, help="critic ensemble size for goat/goat_tau")
    t.add_argument("--tau", type=float, help="expectile for goat_tau")
    t.add_argument("--hidden", help="comma-separated hidden layer sizes, e.g. 64,64")
    t.add_argument("--drw", action="store_true", help="enable the discounted relabeling weight")
    t.add_argument("--run-id")
    t.add_argument("--output-root")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on circle goals")
    e.add_argument("--ckpt", required=True, help="run directory or its checkpoints/ directory")
    e.add_argument("--radii", default="10,20")
    e.add_argument("--n", type=int, default=200, help="goals per radius per seed")
    e.add_argument("--seeds", type=int, default=5, help="number of goal seeds (0..seeds-1)")
    e.add_argument("--coverage", action="store_true", help="also write a goal-coverage grid")
    e.add_argument("--grid", default="-12:12:25", help="lo:hi:resolution for --coverage")
    e.add_argument("--out", help="report directory (default: <run>/reports)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("reproduce", help="sweep algorithms x datasets x seeds and write the results tables")
    r.add_argument("--table", choices=("point-success", "point-return", "both"), default="both")
    r.add_argument("--algos", help=f"comma-separated subset of {','.join(ALGORITHMS)}")
    r.add_argument("--datasets", default=",".join(DATASETS))
    r.add_argument("--seeds", type=int, default=5)
    r.add_argument("--budget", choices=tuple(BUDGETS), default="desk")
    r.add_argument("--steps", type=int)
    r.add_argument("--batch-size", type=int)
    r.add_argument("--hidden")
    r.add_argument("--n-goals", type=int, default=200)
    r.add_argument("--jobs", type=int, default=1, help="worker processes")
    r.add_argument("--out")
    r.add_argument("--output-root")
    r.set_defaults(func=cmd_reproduce)

    v = sub.add_parser("verify-theory", help="randomized check that uniform data minimizes the worst-case shift")
    v.add_argument("--n", type=int, default=4)
    v.add_argument("--C", type=float, default=0.5)
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="also write the JSON report here")
    v.set_defaults(func=cmd_verify_theory)
    return p


def _join_dash_values(argv: list[str]) -> list[str]:
    # argparse reads "--grid -12:12:25" as two options; glue such values on.
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--grid" and i + 1 < len(argv):
            out.append(f"--grid={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    argv = _join_dash_values(list(sys.argv[1:] if argv is None else argv))
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
