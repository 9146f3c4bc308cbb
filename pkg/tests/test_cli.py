"""End-to-end tests of the gen/train/eval/plot commands."""

from __future__ import annotations

import json
import warnings

import pytest

from src.cli import main
from src.network import load_checkpoint
from src.reporting import read_metrics, read_nmse_csv

SMALL_MODEL = {"width_divisor": 16, "convnext_depth": 1, "dropout": 0.0}


@pytest.fixture(autouse=True)
def _quiet_attention():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def small_dataset(tmp_path):
    out = tmp_path / "data"
    code = main(["gen", "--out", str(out), "--train", "4", "--val", "2", "--test", "2",
                 "--grid", "8x8", "--m-t", "2", "--seed", "3"])
    assert code == 0
    return out


def _write_config(path, **sections):
    path.write_text(json.dumps(sections), encoding="utf-8")
    return path


def _run_dir(runs):
    (run,) = [child for child in runs.iterdir() if child.is_dir()]
    return run


class TestGen:
    def test_empty_split_rejected(self, tmp_path, capsys):
        assert main(["gen", "--out", str(tmp_path / "d"), "--train", "0"]) == 2
        assert "empty split" in capsys.readouterr().err

    def test_existing_dataset_needs_force(self, small_dataset, capsys):
        capsys.readouterr()
        args = ["gen", "--out", str(small_dataset), "--train", "4", "--val", "2", "--test", "2",
                "--grid", "8x8", "--m-t", "2", "--seed", "3"]
        first_hash = json.loads((small_dataset / "manifest.json").read_text(encoding="utf-8"))["config_hash"]
        assert main(args) == 3
        assert "already contains" in capsys.readouterr().err
        assert main([*args, "--force"]) == 0
        assert f"hash      {first_hash}" in capsys.readouterr().out

    def test_summary(self, tmp_path, capsys):
        assert main(["gen", "--out", str(tmp_path / "d"), "--train", "1", "--val", "1", "--test", "1",
                     "--aperture", "8x16"]) == 0
        out = capsys.readouterr().out
        assert "32x16 ports" in out
        assert "wavelength=0.088174 m" in out

    def test_bad_grid_rejected(self, tmp_path):
        assert main(["gen", "--out", str(tmp_path / "d"), "--grid", "8by8"]) == 2


class TestEval:
    def test_oracle_on_default_grid(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(["gen", "--out", str(data), "--train", "1", "--val", "1", "--test", "3"]) == 0
        csv_path, plot_path, html_path = tmp_path / "o.csv", tmp_path / "o.png", tmp_path / "o.html"
        code = main(["eval", "--dataset", str(data), "--oracle", "--observed", "26,51,102,256",
                     "--snr", "0,10,20", "--csv", str(csv_path), "--plot", str(plot_path), "--html", str(html_path)])
        assert code == 0
        rows = read_nmse_csv(csv_path)
        assert len(rows) == 12
        assert all(row.nmse == 0.0 for row in rows)
        assert plot_path.stat().st_size > 0
        assert "oracle" in html_path.read_text(encoding="utf-8")
        assert "oracle" in capsys.readouterr().out

    def test_zero_predictor(self, small_dataset, tmp_path):
        csv_path = tmp_path / "z.csv"
        assert main(["eval", "--dataset", str(small_dataset), "--zero", "--observed", "26",
                     "--snr", "10", "--csv", str(csv_path)]) == 0
        (row,) = read_nmse_csv(csv_path)
        assert row.nmse == pytest.approx(1.0)

    def test_median_reduction(self, small_dataset, tmp_path):
        csv_path = tmp_path / "m.csv"
        assert main(["eval", "--dataset", str(small_dataset), "--zero", "--observed", "26",
                     "--snr", "10", "--reduction", "median", "--csv", str(csv_path)]) == 0
        (row,) = read_nmse_csv(csv_path)
        assert row.nmse == pytest.approx(1.0)

    def test_needs_exactly_one_predictor(self, small_dataset):
        assert main(["eval", "--dataset", str(small_dataset)]) == 2
        assert main(["eval", "--dataset", str(small_dataset), "--oracle", "--zero"]) == 2

    def test_count_beyond_port_count(self, small_dataset):
        assert main(["eval", "--dataset", str(small_dataset), "--oracle", "--observed", "65"]) == 2

    def test_missing_dataset(self, tmp_path):
        assert main(["eval", "--dataset", str(tmp_path / "none"), "--oracle"]) == 3


class TestTrain:
    def test_zero_epochs(self, small_dataset, tmp_path, capsys):
        runs = tmp_path / "runs"
        code = main(["train", "--dataset", str(small_dataset), "--runs-dir", str(runs), "--epochs", "0",
                     "--width-divisor", "16", "--convnext-depth", "1"])
        assert code == 0
        run = _run_dir(runs)
        assert (run / "last.ckpt").exists()
        assert not (run / "metrics.jsonl").exists()
        assert f"config      {run.name} (full)" in capsys.readouterr().out

    def test_ablation_run_logs_zero_beta(self, small_dataset, tmp_path):
        runs = tmp_path / "runs"
        code = main(["train", "--dataset", str(small_dataset), "--runs-dir", str(runs), "--epochs", "1",
                     "--batch-size", "2", "--ablation", "canet-b", "--snr", "10",
                     "--width-divisor", "16", "--convnext-depth", "1", "--dropout", "0"])
        assert code == 0
        records = read_metrics(_run_dir(runs) / "metrics.jsonl")
        assert len(records) == 2
        assert all(record["beta"] == 0.0 and not record["perturbed"] for record in records)

    def test_flag_rule_switch(self, small_dataset, tmp_path):
        runs = tmp_path / "runs"
        code = main(["train", "--dataset", str(small_dataset), "--runs-dir", str(runs), "--epochs", "0",
                     "--width-divisor", "16", "--convnext-depth", "1", "--csca-flag-rule", "maxpool"])
        assert code == 0
        loaded = load_checkpoint(_run_dir(runs) / "last.ckpt")
        assert loaded.arch.csca_flag_rule == "maxpool"
        assert loaded.metadata["config"]["model"]["csca_flag_rule"] == "maxpool"

    def test_missing_dataset(self, tmp_path):
        assert main(["train", "--dataset", str(tmp_path / "none"), "--runs-dir", str(tmp_path / "runs")]) == 3

    def test_unknown_config_key(self, small_dataset, tmp_path, capsys):
        config = _write_config(tmp_path / "c.json", optim={"learnig_rate": 1e-3})
        assert main(["train", "--dataset", str(small_dataset), "--config", str(config)]) == 2
        assert "optim.learnig_rate" in capsys.readouterr().err


class TestCheckpointEval:
    @pytest.fixture
    def trained(self, small_dataset, tmp_path):
        config = _write_config(tmp_path / "c.json", model=SMALL_MODEL, optim={"epochs": 0})
        runs = tmp_path / "runs"
        assert main(["train", "--dataset", str(small_dataset), "--config", str(config),
                     "--runs-dir", str(runs)]) == 0
        return _run_dir(runs) / "last.ckpt", config

    def test_matching_config_accepted(self, small_dataset, trained, tmp_path):
        checkpoint, config = trained
        csv_path = tmp_path / "n.csv"
        code = main(["eval", "--dataset", str(small_dataset), "--checkpoint", str(checkpoint),
                     "--config", str(config), "--observed", "26,51", "--snr", "10", "--csv", str(csv_path)])
        assert code == 0
        assert len(read_nmse_csv(csv_path)) == 2

    def test_config_hash_mismatch(self, small_dataset, trained, tmp_path, capsys):
        checkpoint, _ = trained
        other = _write_config(tmp_path / "other.json", model=SMALL_MODEL, optim={"epochs": 0, "learning_rate": 1e-3})
        code = main(["eval", "--dataset", str(small_dataset), "--checkpoint", str(checkpoint),
                     "--config", str(other), "--observed", "26"])
        assert code == 2
        assert "expected" in capsys.readouterr().err

    def test_baseline_written_alongside(self, small_dataset, trained, tmp_path, capsys):
        checkpoint, _ = trained
        csv_path = tmp_path / "n.csv"
        code = main(["eval", "--dataset", str(small_dataset), "--checkpoint", str(checkpoint),
                     "--baseline", str(checkpoint), "--observed", "26", "--snr", "10", "--csv", str(csv_path)])
        assert code == 0
        assert read_nmse_csv(csv_path) == read_nmse_csv(tmp_path / "n-baseline.csv")
        assert "(baseline)" in capsys.readouterr().out


def test_plot_overlays_tables(small_dataset, tmp_path, capsys):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["eval", "--dataset", str(small_dataset), "--zero", "--observed", "26,51",
                 "--snr", "0,10", "--csv", str(first)]) == 0
    assert main(["eval", "--dataset", str(small_dataset), "--oracle", "--observed", "26,51",
                 "--snr", "0,10", "--csv", str(second), "--overwrite-observed"]) == 0
    figure = tmp_path / "fig.png"
    assert main(["plot", str(first), str(second), "--out", str(figure), "--labels", "zero,oracle"]) == 0
    assert figure.stat().st_size > 0
    assert f"figure    {figure}" in capsys.readouterr().out
    assert main(["plot", str(first), "--out", str(figure), "--labels", "a,b"]) == 2
