import json

import numpy as np
import pytest

from tabpretrain import stats
from tabpretrain.cli import main

FAST = {
    "trials": 1,
    "seed": 0,
    "batch_size": 16,
    "hidden_dim": 8,
    "pretrain_max_epochs": 3,
    "finetune_max_epochs": 3,
    "val_build_epochs": 2,
}


def write_dataset(tmp_path, n=60, with_empty_column=False):
    rng = np.random.default_rng(0)
    names = ["f1", "f2", "target"]
    kinds = ["numerical", "numerical", "label"]
    if with_empty_column:
        names = ["f1", "f2", "blank", "target"]
        kinds = ["numerical", "numerical", "numerical", "label"]
    rows = [",".join(names)]
    for _ in range(n):
        x1, x2 = rng.normal(size=2)
        cells = [f"{x1:.5f}", f"{x2:.5f}"]
        if with_empty_column:
            cells.append("")
        cells.append("pos" if x1 + x2 > 0 else "neg")
        rows.append(",".join(cells))
    csv_path = tmp_path / "toy.csv"
    csv_path.write_text("\n".join(rows) + "\n")
    schema_path = tmp_path / "toy.schema.json"
    schema_path.write_text(json.dumps(dict(zip(names, kinds))))
    return str(csv_path), str(schema_path)


def write_config(tmp_path, **extra):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**FAST, **extra}))
    return str(path)


class TestValidate:
    def test_healthy_dataset_report(self, tmp_path, capsys):
        csv, schema = write_dataset(tmp_path)
        assert main(["validate", "--dataset", csv, "--schema", schema]) == 0
        out = capsys.readouterr().out
        assert "rows: 60" in out
        assert "classes (2)" in out
        assert "f1: numerical" in out

    def test_dropped_column_reported(self, tmp_path, capsys):
        csv, schema = write_dataset(tmp_path, with_empty_column=True)
        assert main(["validate", "--dataset", csv, "--schema", schema]) == 0
        assert "dropped all-missing columns: blank" in capsys.readouterr().out

    def test_missing_file_fails(self, tmp_path, capsys):
        _, schema = write_dataset(tmp_path)
        code = main(["validate", "--dataset", str(tmp_path / "nope.csv"), "--schema", schema])
        assert code == 1
        assert "validation failed" in capsys.readouterr().err

    def test_schema_without_label_fails(self, tmp_path, capsys):
        csv, _ = write_dataset(tmp_path)
        bad = tmp_path / "bad.schema.json"
        bad.write_text(json.dumps({"f1": "numerical", "f2": "numerical",
                                   "target": "numerical"}))
        assert main(["validate", "--dataset", csv, "--schema", str(bad)]) == 1

    def test_unknown_config_key_rejected(self, tmp_path):
        csv, schema = write_dataset(tmp_path)
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"learning_rte": 0.1}))
        with pytest.raises(SystemExit, match="learning_rte"):
            main(["validate", "--config", str(cfg), "--dataset", csv, "--schema", schema])


class TestRun:
    def test_control_single_trial(self, tmp_path, capsys):
        csv, schema = write_dataset(tmp_path)
        cfg = write_config(tmp_path)
        out = tmp_path / "results"
        code = main(["run", "--config", cfg, "--dataset", csv, "--schema", schema,
                     "--method", "control", "--out", str(out)])
        assert code == 0
        runs = stats.load_runs(out / "results.jsonl")
        assert len(runs) == 1
        assert runs[0].method_name == "control"
        assert runs[0].pretrain_epochs == 0
        assert 0.0 <= runs[0].test_accuracy <= 1.0
        assert (out / "config.json").exists()
        assert (out / "curves_toy_control_full_0.csv").exists()
        assert "trial 0" in capsys.readouterr().out

    def test_pretrained_method_records_pretrain_epochs(self, tmp_path):
        csv, schema = write_dataset(tmp_path)
        cfg = write_config(tmp_path)
        out = tmp_path / "results"
        code = main(["run", "--config", cfg, "--dataset", csv, "--schema", schema,
                     "--method", "scarf", "--out", str(out)])
        assert code == 0
        runs = stats.load_runs(out / "results.jsonl")
        assert runs[0].pretrain_epochs >= 1
        curves = (out / "curves_toy_scarf_full_0.csv").read_text()
        assert "pretrain,1," in curves and "finetune,1," in curves

    def test_rerun_resumes_completed_trials(self, tmp_path):
        csv, schema = write_dataset(tmp_path)
        cfg = write_config(tmp_path)
        out = tmp_path / "results"
        args = ["run", "--config", cfg, "--dataset", csv, "--schema", schema,
                "--method", "control", "--out", str(out)]
        assert main(args) == 0
        first = (out / "results.jsonl").read_bytes()
        assert main(args + ["--trials", "2"]) == 0
        runs = stats.load_runs(out / "results.jsonl")
        assert [r.trial_index for r in runs] == [0, 1]
        # trial 0 was not recomputed: its original line is an exact prefix
        assert (out / "results.jsonl").read_bytes().startswith(first)

    def test_same_seed_byte_identical_results(self, tmp_path):
        csv, schema = write_dataset(tmp_path)
        cfg = write_config(tmp_path)
        blobs = []
        for name in ("out_a", "out_b"):
            out = tmp_path / name
            assert main(["run", "--config", cfg, "--dataset", csv, "--schema", schema,
                         "--method", "scarf", "--out", str(out)]) == 0
            blobs.append((out / "results.jsonl").read_bytes())
        assert blobs[0] == blobs[1]

    def test_unknown_method_fails_cleanly(self, tmp_path, capsys):
        csv, schema = write_dataset(tmp_path)
        cfg = write_config(tmp_path)
        code = main(["run", "--config", cfg, "--dataset", csv, "--schema", schema,
                     "--method", "definitely_not_a_method", "--out", str(tmp_path / "o")])
        assert code == 1
        assert "failed" in capsys.readouterr().err

    def test_parallel_jobs_complete_all_trials(self, tmp_path):
        csv, schema = write_dataset(tmp_path)
        cfg = write_config(tmp_path, trials=3)
        out = tmp_path / "results"
        code = main(["run", "--config", cfg, "--dataset", csv, "--schema", schema,
                     "--method", "control", "--jobs", "2", "--out", str(out)])
        assert code == 0
        runs = stats.load_runs(out / "results.jsonl")
        assert sorted(r.trial_index for r in runs) == [0, 1, 2]


class TestReport:
    def _results(self, tmp_path):
        path = tmp_path / "results.jsonl"
        rng = np.random.default_rng(0)
        for d in ("d1", "d2"):
            for t in range(5):
                stats.append_run(path, stats.MethodRun(d, "scarf", t, 0, "full",
                                                       0.9 + rng.uniform(0, 0.01)))
                stats.append_run(path, stats.MethodRun(d, "control", t, 0, "full",
                                                       0.5 + rng.uniform(0, 0.01)))
        return str(path)

    def test_win_matrix_and_boxplot(self, tmp_path):
        results = self._results(tmp_path)
        out = tmp_path / "report"
        code = main(["report", "--results", results, "--methods", "scarf,control",
                     "--reference", "control", "--out", str(out)])
        assert code == 0
        matrix = (out / "win_matrix.csv").read_text()
        assert matrix.splitlines()[0] == "method,scarf,control,min_ratio"
        assert "scarf,,2/2,1.0000" in matrix
        box = (out / "box_plot.csv").read_text()
        assert box.count("scarf,control,") == 2

    def test_svg_is_well_formed(self, tmp_path):
        import xml.dom.minidom

        results = self._results(tmp_path)
        out = tmp_path / "report"
        code = main(["report", "--results", results, "--methods", "scarf,control",
                     "--svg", "--out", str(out)])
        assert code == 0
        xml.dom.minidom.parseString((out / "win_matrix.svg").read_text())

    def test_unknown_method_fails(self, tmp_path, capsys):
        results = self._results(tmp_path)
        code = main(["report", "--results", results, "--methods", "scarf,ghost"])
        assert code == 1
        assert "ghost" in capsys.readouterr().err

    def test_empty_results_fails(self, tmp_path, capsys):
        code = main(["report", "--results", str(tmp_path / "none.jsonl"),
                     "--methods", "control"])
        assert code == 1
