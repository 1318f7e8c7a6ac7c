"""CLI entry points and run-directory layout."""

import csv
import json

import numpy as np
import pytest

from nccl_lab.cli import main
from nccl_lab.geometry import PrototypeSet

SMALL_INI = """
[dataset]
classes = 4
samples_per_class = 25
test_per_class = 10
aux_per_class = 10
[tasks]
count = 2
classes_per_task = 2
[train]
epochs_first = 3
epochs_rest = 2
batch_size = 16
[loss]
e0 = 1
"""


@pytest.fixture()
def run_dir(tmp_path):
    cfg_path = tmp_path / "exp.ini"
    cfg_path.write_text(SMALL_INI)
    out = tmp_path / "runs"
    assert main(["run", "--config", str(cfg_path), "--seed", "0",
                 "--out", str(out)]) == 0
    dirs = list(out.glob("*/*"))
    assert len(dirs) == 1
    return dirs[0]


class TestRun:
    def test_artifacts_present(self, run_dir):
        for name in ("config.ini", "metrics.json", "losses.csv",
                     "reliability_bins.csv", "prototypes.csv"):
            assert (run_dir / name).exists(), name

    def test_run_dir_named_by_hash_and_seed(self, run_dir):
        assert run_dir.name == "0"
        assert len(run_dir.parent.name) == 12

    def test_metrics_content(self, run_dir):
        payload = json.loads((run_dir / "metrics.json").read_text())
        assert payload["seed"] == 0
        assert payload["config_id"] == run_dir.parent.name
        assert len(payload["acc_matrix"]) == 2
        assert payload["acc_matrix"][0][1] is None
        assert 0.0 <= payload["aece"] <= 1.0

    def test_metrics_bitwise_reproducible(self, run_dir, tmp_path):
        cfg_path = tmp_path / "exp.ini"
        out2 = tmp_path / "runs2"
        main(["run", "--config", str(cfg_path), "--seed", "0",
              "--out", str(out2)])
        second = next(out2.glob("*/*/metrics.json"))
        assert second.read_bytes() == (run_dir / "metrics.json").read_bytes()

    def test_prototypes_csv_parses(self, run_dir):
        ps = PrototypeSet.from_csv(run_dir / "prototypes.csv")
        assert ps.K == 4
        np.testing.assert_allclose(np.linalg.norm(ps.vectors, axis=1), 1.0,
                                   atol=1e-9)

    def test_losses_csv_layout(self, run_dir):
        rows = list(csv.DictReader(open(run_dir / "losses.csv")))
        assert len(rows) == 3 + 2
        assert set(rows[0]) == {"task", "epoch", "lr", "plasticity",
                                "distill", "total", "clamp_events"}
        assert float(rows[0]["distill"]) == 0.0

    def test_reliability_csv_layout(self, run_dir):
        rows = list(csv.DictReader(open(run_dir / "reliability_bins.csv")))
        assert len(rows) == 2 * 15
        counts = sum(int(r["count"]) for r in rows)
        assert counts == 2 * 20   # both test sets fall somewhere

    def test_multi_seed(self, tmp_path):
        cfg_path = tmp_path / "exp.ini"
        cfg_path.write_text(SMALL_INI)
        out = tmp_path / "runs"
        main(["run", "--config", str(cfg_path), "--seed", "0", "--seed", "1",
              "--out", str(out)])
        assert len(list(out.glob("*/*"))) == 2

    def test_matrix_mix_produces_paired_configs(self, tmp_path):
        cfg_path = tmp_path / "exp.ini"
        cfg_path.write_text(SMALL_INI)
        out = tmp_path / "runs"
        assert main(["run", "--config", str(cfg_path), "--seed", "0",
                     "--out", str(out), "--matrix-mix"]) == 0
        configs = sorted(p.name for p in out.iterdir())
        assert len(configs) == 2
        flags = set()
        for d in out.iterdir():
            text = (d / "0" / "config.ini").read_text()
            for line in text.splitlines():
                if line.startswith("enabled"):
                    flags.add(line.split("=")[1].strip())
                    break
        assert flags == {"true", "false"}


class TestCompare:
    def test_table_output(self, run_dir, capsys):
        assert main(["compare", "--runs", str(run_dir.parent.parent)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].split() == ["config", "seeds", "AA", "F",
                                    "AECE", "AOE"]
        assert lines[1].startswith(run_dir.parent.name)

    def test_empty_root_fails(self, tmp_path, capsys):
        assert main(["compare", "--runs", str(tmp_path)]) == 1
        assert "no metrics.json" in capsys.readouterr().err

    def test_csv_output(self, tmp_path):
        cfg_path = tmp_path / "exp.ini"
        cfg_path.write_text(SMALL_INI)
        out = tmp_path / "runs"
        main(["run", "--config", str(cfg_path), "--seed", "0",
              "--out", str(out), "--matrix-mix"])
        table = tmp_path / "table.csv"
        assert main(["compare", "--runs", str(out),
                     "--out", str(table)]) == 0
        rows = list(csv.DictReader(open(table)))
        assert set(rows[0]) == {"config_id", "metric", "seeds", "mean",
                                "std", "delta", "direction"}
        configs = {r["config_id"] for r in rows}
        assert len(configs) == 2
        baseline = min(configs)
        for r in rows:
            if r["config_id"] == baseline:
                # deltas are relative to the first config in sorted order
                assert float(r["delta"]) == 0.0
                assert r["direction"] == "="
            else:
                sign = {"+": 1, "-": -1, "=": 0}[r["direction"]]
                larger_better = r["metric"] == "average_accuracy"
                d = float(r["delta"])
                if sign == 0:
                    assert d == 0.0
                elif larger_better:
                    assert d * sign > 0
                else:
                    assert d * sign < 0

    def test_csv_identical_runs_zero_deltas(self, run_dir, tmp_path):
        table = tmp_path / "table.csv"
        assert main(["compare", "--runs", str(run_dir.parent.parent),
                     "--out", str(table)]) == 0
        rows = list(csv.DictReader(open(table)))
        assert rows
        assert all(float(r["delta"]) == 0.0 for r in rows)
        assert all(r["direction"] == "=" for r in rows)

    def test_csv_mismatched_datasets_rejected(self, tmp_path, capsys):
        out = tmp_path / "runs"
        for i, classes in enumerate((4, 6)):
            ini = SMALL_INI.replace("classes = 4", f"classes = {classes}")
            if classes == 6:
                ini = ini.replace("count = 2", "count = 3")
            cfg_path = tmp_path / f"exp{i}.ini"
            cfg_path.write_text(ini)
            main(["run", "--config", str(cfg_path), "--seed", "0",
                  "--out", str(out)])
        table = tmp_path / "table.csv"
        assert main(["compare", "--runs", str(out),
                     "--out", str(table)]) == 1
        assert "different [dataset]" in capsys.readouterr().err
        assert not table.exists()
