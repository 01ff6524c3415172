import csv
import io
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from sparsetuck.cli import build_parser, main
from sparsetuck.model import load_model, reconstruct_many, reconstruction_error
from sparsetuck.tensor import load_coo
from sparsetuck.trainer import evaluate_test

MODEL_FILES = ["core.coo", "factor_1.tsv", "factor_2.tsv", "factor_3.tsv"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--order", "3", "--dims", "15,12,10", "--ranks", "2", "--nnz", "600", "--noise", "0.01",
                 "--seed", "4", "--output", str(d / "train.coo"), "--truth-dir", str(d / "truth")]) == 0
    assert main(["synth", "--order", "3", "--dims", "15,12,10", "--ranks", "2", "--nnz", "60", "--noise", "0.01",
                 "--seed", "4", "--output", str(d / "test.coo")]) == 0
    return d


def decompose(data, out, *extra):
    return main(["decompose", "--input", str(data / "train.coo"), "--ranks", "2,2,2", "--output-dir", str(out),
                 *extra])


class TestDecompose:
    def test_outputs(self, data, tmp_path):
        out = tmp_path / "out"
        assert decompose(data, out, "--reg", "lf", "--lambda", "0.01", "--mode", "auto", "--seed", "7",
                         "--threads", "8", "--test-input", str(data / "test.coo")) == 0
        assert sorted(p.name for p in out.iterdir()) == sorted(MODEL_FILES + ["report.jsonl", "summary.json"])
        s = json.loads((out / "summary.json").read_text())
        for k in ("final_re", "final_test_re", "final_sparsity", "final_masked_fraction", "iterations",
                  "wall_time", "config"):
            assert k in s
        assert s["config"]["mode"] == "auto" and s["config"]["seed"] == 7
        lines = (out / "report.jsonl").read_text().splitlines()
        assert len(lines) == s["iterations"] + 1

    def test_manual_target(self, data, tmp_path):
        assert decompose(data, tmp_path, "--mode", "manual", "--sparsity", "0.6") == 0
        s = json.loads((tmp_path / "summary.json").read_text())
        assert s["final_sparsity"] >= 0.6 and s["final_masked_fraction"] >= 0.6

    def test_rerun_byte_identical(self, data, tmp_path):
        for name, th in (("a", "1"), ("b", "4")):
            assert decompose(data, tmp_path / name, "--mode", "auto", "--seed", "3", "--threads", th) == 0
        for f in MODEL_FILES:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_one_based_and_single_rank(self, data, tmp_path):
        t = load_coo(data / "train.coo")
        lines = [" ".join(str(i + 1) for i in a) + f" {float(v)!r}" for a, v in zip(t.indices, t.values)]
        (tmp_path / "one.coo").write_text("\n".join(lines) + "\n")
        assert main(["decompose", "--input", str(tmp_path / "one.coo"), "--one-based", "--ranks", "2",
                     "--max-iters", "3", "--output-dir", str(tmp_path / "o")]) == 0
        assert load_model(tmp_path / "o").ranks == (2, 2, 2)

    def test_env_threads(self, data, tmp_path, monkeypatch):
        monkeypatch.setenv("SPARSETUCK_THREADS", "2")
        assert decompose(data, tmp_path, "--max-iters", "2") == 0
        assert json.loads((tmp_path / "summary.json").read_text())["config"]["threads"] == 2

    @pytest.mark.parametrize("extra", [["--ranks", "2,2"], ["--lambda", "-1"], ["--sparsity", "1.5"]])
    def test_module_errors_exit_nonzero(self, data, tmp_path, extra, capsys):
        assert decompose(data, tmp_path, *extra) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_input(self, tmp_path, capsys):
        assert main(["decompose", "--input", str(tmp_path / "nope.coo"), "--ranks", "2",
                     "--output-dir", str(tmp_path)]) == 1
        assert "nope.coo" in capsys.readouterr().err

    def test_malformed_input_reports_line(self, tmp_path, capsys):
        (tmp_path / "bad.coo").write_text("0 0 1.0\n1 q 2.0\n")
        assert main(["decompose", "--input", str(tmp_path / "bad.coo"), "--ranks", "1",
                     "--output-dir", str(tmp_path / "o")]) == 1
        assert ":2:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def fitted(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert decompose(data, out, "--lambda", "1e-4") == 0
    return out


class TestPredictEvaluate:
    def test_predict_matches_library(self, data, fitted, tmp_path, capsys):
        t = load_coo(data / "test.coo")
        (tmp_path / "q.txt").write_text("".join(" ".join(map(str, a)) + "\n" for a in t.indices))
        assert main(["predict", "--model-dir", str(fitted), "--queries", str(tmp_path / "q.txt")]) == 0
        got = np.array([float(x) for x in capsys.readouterr().out.split()])
        np.testing.assert_array_equal(got, reconstruct_many(load_model(fitted), t.indices))

    def test_predict_near_training_values(self, data, fitted, tmp_path):
        t = load_coo(data / "train.coo")
        save = tmp_path / "q.coo"
        rows = zip(t.indices[:40], t.values)
        save.write_text("".join(" ".join(map(str, a)) + f" {float(v)!r}\n" for a, v in rows))
        assert main(["predict", "--model-dir", str(fitted), "--queries", str(save), "--output",
                     str(tmp_path / "p.txt")]) == 0
        got = np.loadtxt(tmp_path / "p.txt")
        assert got.shape == (40,) and np.max(np.abs(got - t.values[:40])) < 0.05

    def test_empty_queries(self, fitted, tmp_path):
        (tmp_path / "q.txt").write_text("")
        assert main(["predict", "--model-dir", str(fitted), "--queries", str(tmp_path / "q.txt"), "--output",
                     str(tmp_path / "p.txt")]) == 0
        assert (tmp_path / "p.txt").read_text() == ""

    def test_malformed_model_dir(self, fitted, tmp_path, capsys):
        (tmp_path / "q.txt").write_text("0 0 0\n")
        assert main(["predict", "--model-dir", str(tmp_path), "--queries", str(tmp_path / "q.txt")]) == 1
        bad = tmp_path / "m"
        bad.mkdir()
        for f in MODEL_FILES:
            (bad / f).write_bytes((fitted / f).read_bytes())
        (bad / "factor_2.tsv").write_text("1.0\tx\n")
        assert main(["predict", "--model-dir", str(bad), "--queries", str(tmp_path / "q.txt")]) == 1

    def test_query_order_mismatch(self, fitted, tmp_path):
        (tmp_path / "q.txt").write_text("0 0\n")
        assert main(["predict", "--model-dir", str(fitted), "--queries", str(tmp_path / "q.txt")]) == 1

    def test_evaluate_matches_library(self, data, fitted, capsys):
        assert main(["evaluate", "--model-dir", str(fitted), "--input", str(data / "train.coo"),
                     "--test-input", str(data / "test.coo")]) == 0
        out = json.loads(capsys.readouterr().out)
        m = load_model(fitted)
        assert out["re"] == pytest.approx(reconstruction_error(m, load_coo(data / "train.coo")), abs=1e-12)
        assert out["test_re"] == pytest.approx(evaluate_test(m, load_coo(data / "test.coo")), abs=1e-12)
        s = json.loads((fitted / "summary.json").read_text())
        assert out["re"] == pytest.approx(s["final_re"], abs=1e-12)

    def test_evaluate_perfect_and_zero(self, data, tmp_path, capsys):
        # noiseless synth + its truth gives RE 0; a zeroed copy gives RE 1
        assert main(["synth", "--dims", "8", "--ranks", "2", "--nnz", "100", "--output", str(tmp_path / "t.coo"),
                     "--truth-dir", str(tmp_path / "truth")]) == 0
        assert main(["evaluate", "--model-dir", str(tmp_path / "truth"), "--input", str(tmp_path / "t.coo")]) == 0
        assert json.loads(capsys.readouterr().out)["re"] < 1e-15
        (tmp_path / "truth" / "core.coo").write_text("# dims: 2 2 2\n")
        assert main(["evaluate", "--model-dir", str(tmp_path / "truth"), "--input", str(tmp_path / "t.coo")]) == 0
        assert json.loads(capsys.readouterr().out)["re"] == 1.0


class TestSynth:
    def test_large_config_fast_and_seeded(self, tmp_path):
        t0 = time.perf_counter()
        assert main(["synth", "--order", "3", "--dims", "1000", "--ranks", "3", "--nnz", "1000", "--seed", "1",
                     "--output", str(tmp_path / "a.coo"), "--truth-dir", str(tmp_path / "truth")]) == 0
        assert time.perf_counter() - t0 < 5.0
        assert main(["synth", "--order", "3", "--dims", "1000", "--ranks", "3", "--nnz", "1000", "--seed", "1",
                     "--output", str(tmp_path / "b.coo")]) == 0
        assert (tmp_path / "a.coo").read_bytes() == (tmp_path / "b.coo").read_bytes()
        t = load_coo(tmp_path / "a.coo")
        assert t.dims == (1000, 1000, 1000) and t.nnz == 1000
        assert reconstruction_error(load_model(tmp_path / "truth"), t) < 1e-12

    def test_infeasible(self, tmp_path, capsys):
        assert main(["synth", "--dims", "3", "--order", "2", "--nnz", "10", "--ranks", "1",
                     "--output", str(tmp_path / "x.coo")]) == 1
        assert "error" in capsys.readouterr().err


class TestBench:
    def _run(self, tmp_path, *extra):
        out = tmp_path / "b.csv"
        assert main(["bench", "--dims", "20", "--ranks", "2", "--nnz", "300", "--iters", "1", "--reps", "1",
                     "--output", str(out), *extra]) == 0
        return list(csv.DictReader(io.StringIO(out.read_text())))

    def test_single_cell(self, tmp_path):
        rows = self._run(tmp_path)
        assert len(rows) == 1 and rows[0]["threads"] == "1" and float(rows[0]["speedup"]) == 1.0

    def test_thread_sweep(self, tmp_path):
        rows = self._run(tmp_path, "--threads", "1,2,4,8")
        assert [r["threads"] for r in rows] == ["1", "2", "4", "8"]
        t1 = float(rows[0]["seconds_per_iter"])
        for r in rows:
            assert float(r["speedup"]) == pytest.approx(t1 / float(r["seconds_per_iter"]), rel=1e-9)


class TestDensity:
    def test_report(self, data, capsys):
        assert main(["density", "--model-dir", str(data / "truth"), "--mode", "1", "--top-k", "3",
                     "--one-based"]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert len(rows) == 3 and all(1 <= r["row"] <= 15 for r in rows)
        assert [r["nonzeros"] for r in rows] == sorted((r["nonzeros"] for r in rows), reverse=True)

    def test_bad_mode(self, data):
        assert main(["density", "--model-dir", str(data / "truth"), "--mode", "4"]) == 1


class TestParser:
    def test_help_lists_every_flag(self):
        text = build_parser()._subparsers._group_actions[0].choices["decompose"].format_help()
        for flag in ("--input", "--ranks", "--reg", "--lambda", "--mode", "--sparsity", "--elbow-threshold",
                     "--init-pr", "--max-pr", "--max-iters", "--tol", "--threads", "--seed", "--one-based",
                     "--test-input", "--output-dir"):
            assert flag in text
        assert "default: 0.01" in text

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["decompose", "--input", "x", "--ranks", "1", "--output-dir", "o", "--bogus"])
        assert e.value.code == 2 and "--bogus" in capsys.readouterr().err

    def test_bad_rank_list(self):
        with pytest.raises(SystemExit):
            main(["decompose", "--input", "x", "--ranks", "a,b", "--output-dir", "o"])

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "sparsetuck", "--help"], capture_output=True, text=True)
        assert r.returncode == 0
        for cmd in ("decompose", "predict", "evaluate", "synth", "bench", "density"):
            assert cmd in r.stdout
