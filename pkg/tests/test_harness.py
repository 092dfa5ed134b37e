import json
import os

import numpy as np
import pytest

from fedvgcn.cli import main
from fedvgcn.graph import make_synthetic_dataset, write_planetoid
from fedvgcn.harness import (
    ConfigError,
    ExperimentConfig,
    RunRecord,
    compare,
    read_records,
    run,
    subsample_dataset,
    write_records,
)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    ds = make_synthetic_dataset(n_nodes=40, n_features=16, n_classes=3, seed=1)
    write_planetoid(ds, str(d), "synth")
    return str(d)


def base_config(synth_dir, setting, **kw):
    defaults = dict(
        dataset_dir=synth_dir,
        name="synth",
        setting=setting,
        epochs=4,
        seed=3,
        learning_rate=1e-3,
        dropout=0.0,
        hidden=4,
        parallel_folds=1,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestValidation:
    def test_unknown_setting(self, synth_dir):
        with pytest.raises(ConfigError):
            base_config(synth_dir, "centralized").validate()

    def test_bad_ratio(self, synth_dir):
        with pytest.raises(ConfigError):
            base_config(synth_dir, "combined", feature_ratio=1.2).validate()

    def test_federated_rejects_unsup(self, synth_dir):
        with pytest.raises(ConfigError):
            base_config(synth_dir, "federated", unsup_weight=0.5).validate()

    def test_full_crypto_needs_big_keys(self, synth_dir):
        with pytest.raises(ConfigError):
            base_config(synth_dir, "federated", full_crypto=True, key_bits=512).validate()

    def test_accuracy_range_enforced(self):
        with pytest.raises(ConfigError):
            RunRecord(config={}, fold_accuracies=[1.5], mean_accuracy=1.5, wall_time_s=0.0)


class TestRunSettings:
    def test_combined(self, synth_dir):
        rec = run(base_config(synth_dir, "combined"))
        assert len(rec.fold_accuracies) == 5
        assert 0.0 <= rec.mean_accuracy <= 1.0
        assert rec.counters is None

    def test_isolated_views_differ_from_combined(self, synth_dir):
        rec_a = run(base_config(synth_dir, "isolated_a"))
        rec_b = run(base_config(synth_dir, "isolated_b"))
        assert rec_a.config["setting"] == "isolated_a"
        assert len(rec_b.fold_accuracies) == 5

    def test_federated_produces_counters(self, synth_dir):
        rec = run(base_config(synth_dir, "federated", epochs=2))
        assert rec.counters is not None
        assert rec.counters["total_units"] > 0
        assert len(rec.fold_accuracies) == 5

    def test_zero_epochs_runs(self, synth_dir):
        rec = run(base_config(synth_dir, "combined", epochs=0))
        assert len(rec.fold_accuracies) == 5

    def test_determinism_same_seed(self, synth_dir):
        r1 = run(base_config(synth_dir, "federated", epochs=2))
        r2 = run(base_config(synth_dir, "federated", epochs=2))
        assert r1.fold_accuracies == r2.fold_accuracies
        assert r1.final_losses == r2.final_losses

    def test_parallel_folds_match_serial(self, synth_dir):
        serial = run(base_config(synth_dir, "federated", epochs=2, parallel_folds=1))
        parallel = run(base_config(synth_dir, "federated", epochs=2, parallel_folds=3))
        assert serial.fold_accuracies == parallel.fold_accuracies

    def test_missing_dataset(self, synth_dir):
        from fedvgcn.graph import DataError

        with pytest.raises(DataError):
            run(base_config(synth_dir, "combined", name="ghost"))


class TestSubsample:
    def test_subsample_shapes(self):
        ds = make_synthetic_dataset(n_nodes=50, n_features=8, seed=2)
        sub = subsample_dataset(ds, 20, seed=1)
        assert sub.n_nodes == 20
        assert all(0 <= i < 20 and 0 <= j < 20 for i, j in sub.edges)

    def test_subsample_noop_when_bigger(self):
        ds = make_synthetic_dataset(n_nodes=20, n_features=8, seed=2)
        assert subsample_dataset(ds, 100, seed=1) is ds


class TestRecordsAndCompare:
    def test_roundtrip(self, synth_dir, tmp_path):
        rec = run(base_config(synth_dir, "combined", epochs=1))
        path = str(tmp_path / "records.jsonl")
        write_records([rec], path)
        back = read_records(path)
        assert len(back) == 1
        assert back[0].mean_accuracy == rec.mean_accuracy
        assert back[0].config["setting"] == "combined"

    def test_compare_table(self, synth_dir, tmp_path):
        recs = [
            run(base_config(synth_dir, s, epochs=1))
            for s in ("isolated_a", "isolated_b", "federated", "combined")
        ]
        out = str(tmp_path / "merged.jsonl")
        table = compare(recs, out_path=out)
        assert "GraphSage_A" in table
        assert "FedVGraphSage" in table
        assert "GraphSage_A+B" in table
        assert "synth" in table
        assert len(read_records(out)) == 4

    def test_compare_single_record(self, synth_dir):
        rec = run(base_config(synth_dir, "combined", epochs=1))
        table = compare([rec])
        assert table.count("\n") == 1

    def test_compare_empty_rejected(self):
        with pytest.raises(ConfigError):
            compare([])


class TestCli:
    def test_run_and_stats_and_compare(self, synth_dir, tmp_path, capsys):
        out = str(tmp_path / "rec.jsonl")
        code = main(
            [
                "run", "--dataset", synth_dir, "--name", "synth",
                "--setting", "combined", "--epochs", "1", "--seed", "1",
                "--learning-rate", "1e-3", "--dropout", "0.0", "--hidden", "4",
                "--out", out,
            ]
        )
        assert code == 0
        assert os.path.exists(out)
        assert main(["stats", "--dataset", synth_dir, "--name", "synth"]) == 0
        captured = capsys.readouterr()
        assert "nodes:    40" in captured.out
        assert main(["compare", out]) == 0

    def test_config_error_exit_code(self, synth_dir, capsys):
        code = main(
            [
                "run", "--dataset", synth_dir, "--name", "synth",
                "--setting", "combined", "--feature-ratio", "2.0",
            ]
        )
        assert code == 2

    def test_data_error_exit_code(self, tmp_path, capsys):
        code = main(
            [
                "run", "--dataset", str(tmp_path), "--name", "nothere",
                "--setting", "combined",
            ]
        )
        assert code == 3

    def test_stats_detects_drift_for_known_names(self, tmp_path, capsys):
        ds = make_synthetic_dataset(n_nodes=15, n_features=6, seed=0)
        write_planetoid(ds, str(tmp_path), "cora")
        code = main(["stats", "--dataset", str(tmp_path), "--name", "cora"])
        assert code == 3
        assert "drift" in capsys.readouterr().err

    def test_stats_scans_directory_without_name(self, tmp_path, capsys):
        for name in ("alpha", "beta"):
            ds = make_synthetic_dataset(n_nodes=12, n_features=5, seed=1)
            write_planetoid(ds, str(tmp_path), name)
        assert main(["stats", "--dataset", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "alpha" in out and "beta" in out

    def test_stats_empty_directory(self, tmp_path):
        assert main(["stats", "--dataset", str(tmp_path)]) == 3
