import csv
import io
import json

import pytest

from goatlab import agents, cli
from goatlab.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from goatlab.env import read_dataset

FAST = ["--steps", "30", "--batch-size", "32", "--hidden", "16,16"]


@pytest.fixture
def root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "env-root"))
    return tmp_path


@pytest.fixture
def dataset(root):
    path = root / "ne10.ndjson"
    assert main(["generate", "--kind", "nonexpert", "--n", "10", "--seed", "0", "--out", str(path)]) == EXIT_OK
    return path


def run_dir_of(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


class TestGenerate:
    def test_writes_dataset(self, dataset, capsys):
        header, trajs = read_dataset(dataset)
        assert len(trajs) == 10 and header["kind"] == "nonexpert"

    def test_default_location_uses_env_root(self, root):
        assert main(["generate", "--kind", "expert", "--n", "3"]) == EXIT_OK
        assert (root / "env-root" / "datasets" / "expert3-s0.ndjson").is_file()

    def test_flag_beats_env_root(self, root):
        assert main(["generate", "--kind", "expert", "--n", "3", "--output-root", str(root / "flag")]) == EXIT_OK
        assert (root / "flag" / "datasets" / "expert3-s0.ndjson").is_file()

    def test_same_seed_same_bytes(self, root):
        a, b = root / "a.ndjson", root / "b.ndjson"
        main(["generate", "--kind", "nonexpert", "--n", "5", "--seed", "4", "--out", str(a)])
        main(["generate", "--kind", "nonexpert", "--n", "5", "--seed", "4", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_bad_kind_is_usage_error(self, root):
        with pytest.raises(SystemExit) as info:
            main(["generate", "--kind", "expertish"])
        assert info.value.code == EXIT_USAGE

    def test_bad_count_is_usage_error(self, root):
        assert main(["generate", "--kind", "expert", "--n", "0", "--out", str(root / "x.ndjson")]) == EXIT_USAGE


class TestTrain:
    def test_run_directory_layout(self, dataset, root, capsys):
        assert main(["train", "--algo", "goat", "--data", str(dataset), *FAST, "--output-root", str(root)]) == EXIT_OK
        run = root / "runs" / "goat-ne10-s0"
        assert run_dir_of(capsys) == str(run)
        for rel in ("config.copy", "dataset.ref", "checkpoints/policy.bin", "checkpoints/normalizer.json",
                    "checkpoints/algo.json", "checkpoints/critic/member_4.bin", "logs/train.ndjson",
                    "logs/weights.csv", "reports/train_summary.json"):
            assert (run / rel).is_file(), rel
        resolved = json.loads((run / "config.copy").read_text())
        assert resolved["algo"]["algo"] == "goat" and resolved["algo"]["steps"] == 30
        assert resolved["algo"]["hidden"] == [16, 16]
        ref = json.loads((run / "dataset.ref").read_text())
        assert len(ref["sha256"]) == 64 and ref["header"]["n_traj"] == 10

    def test_config_copy_reproduces_run(self, dataset, root):
        assert main(["train", "--algo", "wgcsl", "--data", str(dataset), *FAST, "--output-root", str(root)]) == EXIT_OK
        first = root / "runs" / "wgcsl-ne10-s0"
        again = ["train", "--config", str(first / "config.copy"), "--run-id", "again", "--output-root", str(root)]
        assert main(again) == EXIT_OK
        second = root / "runs" / "again"
        assert (first / "checkpoints/policy.bin").read_bytes() == (second / "checkpoints/policy.bin").read_bytes()
        assert (first / "logs/train.ndjson").read_bytes() == (second / "logs/train.ndjson").read_bytes()

    def test_toml_config_and_flag_precedence(self, root):
        cfg = root / "run.toml"
        cfg.write_text(
            'run_id = "from-toml"\n'
            f'output_root = "{root / "toml-root"}"\n'
            "[algo]\nalgo = \"gcsl\"\nsteps = 20\nbatch_size = 16\nhidden = [8, 8]\nseed = 3\n"
            "[dataset]\nkind = \"expert\"\nn = 4\nseed = 1\n"
        )
        assert main(["train", "--config", str(cfg), "--steps", "10"]) == EXIT_OK
        run = root / "toml-root" / "runs" / "from-toml"
        resolved = json.loads((run / "config.copy").read_text())
        assert resolved["algo"]["steps"] == 10  # flag wins
        assert resolved["algo"]["seed"] == 3 and resolved["algo"]["hidden"] == [8, 8]
        assert json.loads((run / "dataset.ref").read_text()) == {"generated": {"kind": "expert", "n": 4, "seed": 1}}

    def test_budget_preset_then_flags(self, dataset, root):
        args = ["train", "--algo", "bc", "--data", str(dataset), "--budget", "smoke", "--steps", "12",
                "--output-root", str(root)]
        assert main(args) == EXIT_OK
        resolved = json.loads((root / "runs" / "bc-ne10-s0" / "config.copy").read_text())
        assert resolved["algo"]["steps"] == 12
        assert resolved["algo"]["batch_size"] == 32 and resolved["algo"]["hidden"] == [16, 16]

    def test_unknown_config_key(self, dataset, root):
        cfg = root / "bad.toml"
        cfg.write_text("[weights]\nbetta = 2.0\n")
        assert main(["train", "--config", str(cfg), "--data", str(dataset)]) == EXIT_USAGE

    def test_missing_dataset_file(self, root):
        assert main(["train", "--algo", "bc", "--data", str(root / "nope.ndjson"), *FAST]) == EXIT_IO

    def test_no_dataset(self, root):
        assert main(["train", "--algo", "bc", *FAST]) == EXIT_USAGE

    def test_divergence_exit_code(self, dataset, root, monkeypatch):
        def boom(config, data, progress=False):
            raise agents.TrainingDiverged("non-finite critic loss", {"step": 5})

        monkeypatch.setattr(cli, "train", boom)
        args = ["train", "--algo", "goat", "--data", str(dataset), *FAST, "--output-root", str(root)]
        assert main(args) == EXIT_NUMERIC
        doc = json.loads((root / "runs" / "goat-ne10-s0" / "logs" / "divergence.json").read_text())
        assert doc["snapshot"] == {"step": 5}


class TestEval:
    @pytest.fixture
    def run(self, dataset, root):
        assert main(["train", "--algo", "gcsl", "--data", str(dataset), *FAST, "--output-root", str(root)]) == EXIT_OK
        return root / "runs" / "gcsl-ne10-s0"

    def test_reports_written(self, run):
        assert main(["eval", "--ckpt", str(run), "--n", "20", "--seeds", "2", "--coverage", "--grid", "-4:4:5"]) == EXIT_OK
        doc = json.loads((run / "reports" / "eval.json").read_text())
        assert set(doc["sets"]) == {"R10", "R20"}
        assert doc["sets"]["R10"]["n_goals"] == 40
        rows = list(csv.DictReader(io.StringIO((run / "reports" / "eval.csv").read_text())))
        assert len(rows) == 80
        assert len((run / "reports" / "coverage.csv").read_text().splitlines()) == 5
        assert json.loads((run / "reports" / "coverage.json").read_text())["spec"]["resolution"] == 5

    def test_checkpoint_directory_and_custom_out(self, run, root):
        out = root / "elsewhere"
        assert main(["eval", "--ckpt", str(run / "checkpoints"), "--radii", "10", "--n", "5", "--seeds", "1",
                     "--out", str(out)]) == EXIT_OK
        assert set(json.loads((out / "eval.json").read_text())["sets"]) == {"R10"}

    def test_eval_is_deterministic(self, run, root):
        for name in ("a", "b"):
            main(["eval", "--ckpt", str(run), "--n", "10", "--seeds", "2", "--out", str(root / name)])
        assert (root / "a" / "eval.json").read_bytes() == (root / "b" / "eval.json").read_bytes()

    def test_missing_checkpoint(self, root):
        assert main(["eval", "--ckpt", str(root / "missing")]) == EXIT_IO

    def test_bad_grid(self, run):
        assert main(["eval", "--ckpt", str(run), "--n", "2", "--seeds", "1", "--coverage", "--grid", "oops"]) == EXIT_USAGE


class TestReproduce:
    @pytest.mark.parametrize("jobs", ["1", "2"])
    def test_smoke_tables(self, root, jobs):
        out = root / f"rep{jobs}"
        args = ["reproduce", "--algos", "bc,gcsl", "--datasets", "e10", "--seeds", "2", "--budget", "smoke",
                "--n-goals", "10", "--jobs", jobs, "--out", str(out)]
        assert main(args) == EXIT_OK
        runs = list(csv.DictReader(io.StringIO((out / "runs.csv").read_text())))
        assert len(runs) == 4 and {r["status"] for r in runs} == {"ok"}
        table = list(csv.reader(io.StringIO((out / "point-success.csv").read_text())))
        assert [row[0] for row in table[1:]] == ["BC", "GCSL"]
        assert "±" in table[1][1]
        assert (out / "point-return.csv").is_file()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["budget"]["steps"] == 60 and set(summary["cells"]) == {"bc/e10", "gcsl/e10"}

    def test_parallel_matches_serial(self, root):
        args = ["reproduce", "--algos", "gcsl", "--datasets", "ne10", "--seeds", "2", "--budget", "smoke",
                "--n-goals", "10", "--table", "point-success"]
        assert main([*args, "--out", str(root / "s")]) == EXIT_OK
        assert main([*args, "--jobs", "2", "--out", str(root / "p")]) == EXIT_OK
        assert (root / "s" / "point-success.csv").read_text() == (root / "p" / "point-success.csv").read_text()

    def test_unknown_dataset(self, root):
        assert main(["reproduce", "--datasets", "ne99", "--seeds", "1", "--budget", "smoke",
                     "--out", str(root / "x")]) == EXIT_USAGE


class TestVerifyTheory:
    def test_report(self, root, capsys):
        out = root / "theory.json"
        assert main(["verify-theory", "--n", "4", "--C", "0.5", "--trials", "200", "--out", str(out)]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["passes"] == doc["trials"] == 200
        assert doc["min_margin"] > 0 and doc["failures"] == []
        assert json.loads(capsys.readouterr().out) == doc

    def test_empty_family(self):
        assert main(["verify-theory", "--n", "4", "--C", "0.25"]) == EXIT_USAGE

    def test_counterexample_exit_code(self, monkeypatch):
        monkeypatch.setattr(cli, "verify_uniform_minimax", _failing_report)
        assert main(["verify-theory", "--trials", "3"]) == EXIT_NUMERIC


def _failing_report(n, C, trials, seed, strict):
    from goatlab.divergence import MinimaxReport

    return MinimaxReport(n, C, trials, 0, 1.0, -0.1, -0.1, [{"trial": 0}])


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.startswith("goatlab ")
