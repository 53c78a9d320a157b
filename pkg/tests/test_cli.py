import csv
import json

import numpy as np
import pytest

from mmpca import load_labels_csv, load_matrix_market
from mmpca.cli import main


def run(argv):
    return main([str(a) for a in argv])


def simulate_small(tmp_path, seed=0, n=24, v=40, doc_length=40, epsilon=0.0):
    prefix = tmp_path / f"sim{seed}"
    code = run(["simulate", "--n", n, "--doc-length", doc_length,
                "--v", v, "--epsilon", epsilon, "--seed", seed,
                "--out-prefix", prefix])
    assert code == 0
    return prefix


class TestSimulateCommand:
    def test_writes_three_files(self, tmp_path, capsys):
        prefix = simulate_small(tmp_path)
        capsys.readouterr()
        assert (tmp_path / "sim0.mtx").exists()
        assert (tmp_path / "sim0.labels.csv").exists()
        config = json.loads((tmp_path / "sim0.config.json").read_text())
        assert config["config"]["n_docs"] == 24
        assert config["manifest"]["command"] == "simulate"
        corpus = load_matrix_market(prefix.with_name("sim0.mtx"))
        assert corpus.n_docs == 24
        labels = load_labels_csv(tmp_path / "sim0.labels.csv")
        assert len(labels) == 24

    def test_default_flags_reproduce_reference_setting(self, capsys):
        from mmpca.cli import build_parser

        args = build_parser().parse_args(
            ["simulate", "--out-prefix", "x"])
        assert (args.n, args.doc_length, args.q_star, args.k_star,
                args.epsilon, args.lam, args.v) == (400, 250, 6, 4, 0.0, 1.0, 900)

    def test_epsilon_out_of_range_is_usage_error(self, tmp_path, capsys):
        code = run(["simulate", "--epsilon", "1.01",
                    "--out-prefix", tmp_path / "bad"])
        assert code == 2
        assert "epsilon" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path, capsys):
        simulate_small(tmp_path / "a", seed=5)
        simulate_small(tmp_path / "b", seed=5)
        capsys.readouterr()
        for name in ("sim5.mtx", "sim5.labels.csv"):
            assert ((tmp_path / "a" / name).read_bytes()
                    == (tmp_path / "b" / name).read_bytes())


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    """One small simulate+fit pipeline shared by the fit/eval tests."""
    tmp_path = tmp_path_factory.mktemp("cli_fit")
    prefix = simulate_small(tmp_path, seed=3)
    out = tmp_path / "run"
    code = run(["fit", "--input", tmp_path / "sim3.mtx",
                "--q", 4, "--k", 3, "--seed", 1,
                "--restarts", 2, "--epochs", 4,
                "--truth", tmp_path / "sim3.labels.csv",
                "--out", out])
    assert code == 0
    return tmp_path, out


class TestFitCommand:
    def test_outputs_and_schema(self, fitted, capsys):
        tmp_path, out = fitted
        payload = json.loads((out / "fit.json").read_text())
        assert len(payload["labels"]) == 24
        assert len(payload["pi"]) == 4
        assert np.isfinite(payload["bound"])
        assert payload["icl"] < payload["bound"]
        assert "ari" in payload
        trace = np.array(payload["bound_trace"])
        assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]))
        manifest = payload["manifest"]
        assert manifest["command"] == "fit"
        assert manifest["config"]["max_epochs"] == 4
        assert manifest["inputs"]
        with open(out / "beta.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["topic_0", "topic_1", "topic_2"]
        beta = np.array(rows[1:], dtype=float)
        assert np.allclose(beta.sum(axis=0), 1.0, atol=1e-8)

    def test_default_epochs_is_seven(self):
        from mmpca.cli import build_parser

        args = build_parser().parse_args(
            ["fit", "--input", "x.mtx", "--q", "2", "--k", "2"])
        assert args.epochs == 7
        assert args.restarts == 5

    def test_missing_input(self, tmp_path, capsys):
        code = run(["fit", "--input", tmp_path / "none.mtx",
                    "--q", 2, "--k", 2])
        assert code == 2

    def test_q_larger_than_n(self, tmp_path, capsys):
        simulate_small(tmp_path, seed=4, n=6)
        code = run(["fit", "--input", tmp_path / "sim4.mtx",
                    "--q", 10, "--k", 2])
        assert code == 2


class TestSelectCommand:
    def test_single_cell_grid(self, tmp_path, capsys):
        simulate_small(tmp_path, seed=6)
        out = tmp_path / "select.csv"
        code = run(["select", "--input", tmp_path / "sim6.mtx",
                    "--q-range", "3:3", "--k-range", "2:2",
                    "--restarts", 1, "--epochs", 3, "--seed", 0,
                    "--threads", 1, "--out", out])
        assert code == 0
        assert "best q=3 k=2" in capsys.readouterr().out
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["q"] == "3"
        assert (tmp_path / "select.csv.manifest.json").exists()

    def test_row_count_matches_grid(self, tmp_path, capsys):
        simulate_small(tmp_path, seed=7)
        out = tmp_path / "grid.csv"
        code = run(["select", "--input", tmp_path / "sim7.mtx",
                    "--q-range", "2:4", "--k-range", "2:3",
                    "--restarts", 1, "--epochs", 2, "--seed", 0,
                    "--threads", 1, "--out", out])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert all(np.isfinite(float(r["icl"])) for r in rows)

    def test_empty_range_is_usage_error(self, tmp_path, capsys):
        simulate_small(tmp_path, seed=8)
        code = run(["select", "--input", tmp_path / "sim8.mtx",
                    "--q-range", "4:2", "--k-range", "2:2"])
        assert code == 2


class TestEvalCommand:
    def test_perfect_and_permuted(self, tmp_path, capsys):
        from mmpca import save_labels_csv

        truth = tmp_path / "truth.csv"
        pred = tmp_path / "pred.csv"
        save_labels_csv(np.array([0, 0, 1, 1, 2, 2]), truth)
        save_labels_csv(np.array([2, 2, 0, 0, 1, 1]), pred)
        code = run(["eval", "--pred", pred, "--truth", truth,
                    "--out", tmp_path / "conf.csv"])
        assert code == 0
        assert "ari=1.000000" in capsys.readouterr().out

    def test_checkerboard_pair(self, tmp_path, capsys):
        from mmpca import save_labels_csv

        truth = tmp_path / "truth.csv"
        pred = tmp_path / "pred.csv"
        save_labels_csv(np.array([1, 1, 2, 2]), truth)
        save_labels_csv(np.array([1, 2, 1, 2]), pred)
        code = run(["eval", "--pred", pred, "--truth", truth,
                    "--out", tmp_path / "conf.csv"])
        assert code == 0
        assert "ari=-0.500000" in capsys.readouterr().out
        with open(tmp_path / "conf.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["truth\\pred", "1", "2"]
        assert rows[1] == ["1", "1", "1"]

    def test_length_mismatch(self, tmp_path, capsys):
        from mmpca import save_labels_csv

        save_labels_csv(np.array([0, 1]), tmp_path / "a.csv")
        save_labels_csv(np.array([0, 1, 1]), tmp_path / "b.csv")
        code = run(["eval", "--pred", tmp_path / "a.csv",
                    "--truth", tmp_path / "b.csv",
                    "--out", tmp_path / "c.csv"])
        assert code == 1


class TestBenchCommand:
    def test_noise_bench_schema(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        code = run(["bench", "noise", "--epsilon-grid", "0,0.5",
                    "--n", 18, "--replicates", 2, "--seed", 0,
                    "--restarts", 1, "--epochs", 2, "--threads", 1,
                    "--out", out])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        assert list(rows[0]) == ["seed", "epsilon", "lambda", "n", "ari",
                                 "bound", "wall_seconds"]
        seeds = {r["seed"] for r in rows}
        assert len(seeds) == 4          # distinct replicate seeds
        aris = {r["ari"] for r in rows}
        assert len(aris) >= 2

    def test_invalid_grid(self, tmp_path, capsys):
        code = run(["bench", "noise", "--epsilon-grid", "0:2:0.5",
                    "--out", tmp_path / "x.csv"])
        assert code == 2

    def test_parallel_replicates_match_sequential(self, tmp_path, capsys):
        outputs = []
        for threads, name in ((1, "seq.csv"), (2, "par.csv")):
            out = tmp_path / name
            code = run(["bench", "noise", "--epsilon-grid", "0,0.4",
                        "--n", 16, "--replicates", 2, "--seed", 5,
                        "--restarts", 1, "--epochs", 2,
                        "--threads", threads, "--out", out])
            assert code == 0
            with open(out, newline="") as fh:
                rows = list(csv.DictReader(fh))
            for row in rows:
                row.pop("wall_seconds")
            outputs.append(rows)
        assert outputs[0] == outputs[1]

    def test_time_bench_runs(self, tmp_path, capsys):
        out = tmp_path / "time.csv"
        code = run(["bench", "time", "--n-grid", "16,24",
                    "--replicates", 1, "--seed", 3, "--restarts", 1,
                    "--epochs", 2, "--threads", 1, "--out", out])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["n"] for r in rows] == ["16", "24"]
        assert all(float(r["wall_seconds"]) > 0 for r in rows)


class TestDeterminism:
    def test_repeat_fit_json_identical_modulo_timing(self, tmp_path, capsys):
        simulate_small(tmp_path, seed=9)
        payloads = []
        for run_dir in ("r1", "r2"):
            code = run(["fit", "--input", tmp_path / "sim9.mtx",
                        "--q", 3, "--k", 2, "--seed", 11,
                        "--restarts", 2, "--epochs", 3,
                        "--threads", 1, "--out", tmp_path / run_dir])
            assert code == 0
            payload = json.loads((tmp_path / run_dir / "fit.json").read_text())
            payload["manifest"].pop("wall_seconds")
            payloads.append(payload)
        assert payloads[0] == payloads[1]
