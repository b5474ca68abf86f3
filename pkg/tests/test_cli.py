import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from hrdmil.cli import main, resolve_settings, build_parser
from hrdmil.evaluation import METRICS_SCHEMA
from hrdmil.upsampling import UpsampleParams, compute_budgets

TRAIN_FLAGS = ["--epochs", "3", "--lr", "3e-3", "--d-hidden", "8", "--k", "4", "--bagsize", "10", "--folds", "3"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    assert main(["synth", "--out-dir", str(out), "--n-patients", "50", "--patches", "20,40",
                 "--dim", "8", "--signal-dims", "2", "--signal-gain", "4", "--seed", "3"]) == 0
    return out


def _train(synth_dir, out, *extra):
    return main(["train", "--manifest", str(synth_dir / "manifest.json"), "--out-dir", str(out),
                 *TRAIN_FLAGS, *extra])


def _outputs(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "run_meta.json"}


class TestPipeline:
    def test_full_pipeline(self, synth_dir, tmp_path):
        m = str(synth_dir / "manifest.json")
        assert main(["cluster", "--manifest", m, "--out-dir", str(tmp_path / "cl"), "--k", "4"]) == 0
        clusters = json.loads((tmp_path / "cl" / "clusters.json").read_text())
        assert len(clusters["patients"]) == 50
        assert all(sum(r["sizes"]) == r["n_patches"] for r in clusters["patients"])

        assert main(["sample", "--manifest", m, "--out-dir", str(tmp_path / "sa"), "--k", "4",
                     "--bagsize", "10"]) == 0
        inst = json.loads((tmp_path / "sa" / "instances.json").read_text())["instances"]
        assert all(r["n"] == 10 for r in inst)

        assert _train(synth_dir, tmp_path / "tr") == 0
        assert _train(synth_dir, tmp_path / "tr_up", "--upsample") == 0
        for name in ("tr", "tr_up"):
            assert main(["eval", "--predictions", str(tmp_path / name / "cv_predictions.json"),
                         "--out-dir", str(tmp_path / name), "--threshold", "median"]) == 0
            doc = json.loads((tmp_path / name / "metrics.json").read_text())
            jsonschema.validate(doc, METRICS_SCHEMA)
        assert len(list((tmp_path / "tr" / "models").glob("fold*.npz"))) == 3

        assert main(["upsample", "--manifest", m, "--out-dir", str(tmp_path / "up"), "--k", "4",
                     "--bagsize", "10"]) == 0
        assert main(["report", "--metrics", str(tmp_path / "tr" / "metrics.json"),
                     str(tmp_path / "tr_up" / "metrics.json"), "--upsample", str(tmp_path / "up" / "upsample.json"),
                     "--out-dir", str(tmp_path / "rep")]) == 0
        report = json.loads((tmp_path / "rep" / "report.json").read_text())
        assert set(report["mean_rank"]) == {"attmil/cluster-weighted/S=10", "attmil/cluster-weighted/S=10/upsampled"}
        for chart in report["charts"]:
            assert (tmp_path / "rep" / chart).read_text().lstrip().startswith("<?xml")
        assert "upsampled_distribution.svg" in report["charts"]

    def test_eval_fixed_42(self, synth_dir, tmp_path):
        assert _train(synth_dir, tmp_path) == 0
        assert main(["eval", "--predictions", str(tmp_path / "cv_predictions.json"), "--out-dir", str(tmp_path),
                     "--threshold", "fixed:42"]) == 0
        doc = json.loads((tmp_path / "metrics.json").read_text())
        m = doc["metrics"]
        assert m["threshold"] == "fixed:42" and m["cutpoints"] == {"t": 42.0}
        preds = [p for f in json.loads((tmp_path / "cv_predictions.json").read_text())["folds"]
                 for p in f["predictions"]]
        tp = sum(p["y_true"] > 42 and p["y_hat"] > 42 for p in preds)
        fn = sum(p["y_true"] > 42 and not p["y_hat"] > 42 for p in preds)
        tn = sum(p["y_true"] <= 42 and not p["y_hat"] > 42 for p in preds)
        assert m["confusion"] == {"tp": tp, "fn": fn, "tn": tn, "fp": 50 - tp - fn - tn}
        assert doc["run"]["evaluation"]["threshold"] == "fixed:42"

    def test_upsample_budgets_match_histogram(self, synth_dir, tmp_path):
        assert main(["upsample", "--manifest", str(synth_dir / "manifest.json"), "--out-dir", str(tmp_path),
                     "--k", "4", "--bagsize", "10", "--bins", "7", "--alpha", "0.65", "--beta", "0.25"]) == 0
        doc = json.loads((tmp_path / "upsample.json").read_text())
        counts = doc["histogram"]["bin_counts"]
        assert sum(counts) == 50
        mx = max(counts)
        cap = int(np.floor(mx * 0.65 + 0.5))
        assert doc["budgets"] == [min(cap, int(np.floor((mx - c) * 0.25 + 0.5))) for c in counts]
        assert doc["budgets"] == compute_budgets(counts, UpsampleParams(7, 0.65, 0.25)).tolist()
        assert doc["n_total"] == 50 + sum(doc["budgets"])
        bins = doc["histogram"]["patient_bins"]
        for b, n_add in enumerate(doc["added_per_bin"]):
            rows = doc["synthesized"][sum(doc["added_per_bin"][:b]):][:n_add]
            assert all(r["id"] in bins[b] for r in rows)


    def test_bagsize_sweep_report(self, synth_dir, tmp_path):
        metrics = []
        for strategy in ("cluster-weighted", "random"):
            for bagsize in ("5", "15"):
                out = tmp_path / f"{strategy}{bagsize}"
                assert main(["train", "--manifest", str(synth_dir / "manifest.json"), "--out-dir", str(out),
                             "--epochs", "2", "--d-hidden", "4", "--k", "4", "--folds", "2",
                             "--strategy", strategy, "--bagsize", bagsize]) == 0
                assert main(["eval", "--predictions", str(out / "cv_predictions.json"), "--out-dir", str(out),
                             "--threshold", "median"]) == 0
                metrics.append(str(out / "metrics.json"))
        assert main(["report", "--metrics", *metrics, "--out-dir", str(tmp_path / "rep")]) == 0
        report = json.loads((tmp_path / "rep" / "report.json").read_text())
        assert {"auroc_vs_bagsize.svg", "sampling_strategies.svg", "rank_table.svg"} <= set(report["charts"])
        assert set(report["bagsize_correlation"]) == {"attmil"}
        rows = (tmp_path / "rep" / "bagsize_sweep.csv").read_text().splitlines()
        assert rows[0] == "arch,bagsize,auroc_median,rmse" and len(rows) == 5


class TestDeterminism:
    def test_repeat_and_threads(self, synth_dir, tmp_path):
        for name, threads in (("a", "1"), ("b", "1"), ("c", "3")):
            out = tmp_path / name
            assert _train(synth_dir, out, "--upsample", "--threads", threads) == 0
            assert main(["eval", "--predictions", str(out / "cv_predictions.json"), "--out-dir", str(out)]) == 0
            assert main(["report", "--metrics", str(out / "metrics.json"), "--out-dir", str(out / "rep")]) == 0
        a, b, c = (_outputs(tmp_path / n) for n in "abc")
        assert a.keys() == b.keys() == c.keys()
        assert "binned_rmse.svg" in {k.split("/")[-1] for k in a}
        for k in a:
            assert a[k] == b[k], k
            assert a[k] == c[k], k


class TestSettings:
    def test_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# demo\nbagsize = 50\nlr = 0.01\nupsample = yes\n")
        args = build_parser().parse_args(["train", "--manifest", "m", "--out-dir", "o", "--config", str(cfg),
                                          "--bagsize", "20"])
        settings, raw = resolve_settings(args)
        assert settings["bagsize"] == 20
        assert settings["lr"] == 0.01
        assert settings["upsample"] is True
        assert settings["k"] == 50
        assert raw.startswith("# demo")

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bagsise = 5\n")
        code = main(["sample", "--manifest", "x.json", "--out-dir", str(tmp_path), "--config", str(cfg)])
        assert code == 2
        assert capsys.readouterr().err.startswith("error: config: ")


class TestErrors:
    def test_bad_manifest_single_line(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"cohort": "x", "patients": [{"id": "P1", "hrd_score": 1, "files": ["no.milf"]}]}')
        proc = subprocess.run([sys.executable, "-m", "hrdmil", "cluster", "--manifest", str(tmp_path / "manifest.json"),
                               "--out-dir", str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == 2
        lines = proc.stderr.strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("error: missing-file: ")

    def test_bad_threshold(self, synth_dir, tmp_path, capsys):
        assert _train(synth_dir, tmp_path) == 0
        code = main(["eval", "--predictions", str(tmp_path / "cv_predictions.json"), "--out-dir", str(tmp_path),
                     "--threshold", "tertiles:40,10"])
        assert code == 2
        assert "error: config:" in capsys.readouterr().err
