"""Experiment harness: presets, config plumbing, results table, determinism."""

import dataclasses
import json

import pytest

from qeforge.experiments import (
    ENSEMBLE_KINDS,
    ENSEMBLE_ROSTERS,
    PRESET_RECIPES,
    PRESETS,
    ExperimentConfig,
    _donor_langs,
    _donor_pair,
    config_hash,
    desk_estimator_config,
    desk_predictor_config,
    ensure_benchmark,
    load_experiment_config,
    missing_benchmark_files,
    pooled_label,
    run_experiment_preset,
    update_results_table,
    worker_count,
)
from qeforge.synthetic import BenchmarkSpec, write_benchmark

TINY_SPEC = BenchmarkSpec(
    high_resource_qe_train=24, low_resource_qe_train=16, qe_valid=12, qe_test=12,
    parallel_base=16, parallel_pool=500, parallel_valid=6,
)


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    data = tmp_path_factory.mktemp("bench") / "data"
    write_benchmark(data, TINY_SPEC)
    return data


def tiny_config(data_root, out_dir, **kw):
    defaults = dict(
        data_root=str(data_root), out_dir=str(out_dir), eval_pairs=("en-de",),
        predictor=dataclasses.replace(desk_predictor_config(), hidden=8, emb_dim=6,
                                      epochs=1, batch_size=8, k_negatives=3),
        estimator=dataclasses.replace(desk_estimator_config(), hidden=6, epochs=1,
                                      batch_size=8),
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestPresetRegistry:
    def test_all_presets_present(self):
        # [PAPER] the ablation grid: baseline, architecture/loss variants,
        # data tiers, per-language pretraining, and stacked ensembles.
        expected = {
            "baseline", "transformer", "nce", "neg", "D1", "D2", "D3", "D5",
            "pretrain-et", "pretrain-ne", "pretrain-ro", "pretrain-de", "pretrain-zh",
            "ridge-ensemble", "gbt-ensemble", "ensemble-all",
        }
        assert set(PRESETS) == expected
        assert len(PRESETS) == 16

    def test_ensemble_all_roster_mirrors_best_row(self):
        # [PAPER] the strongest reported combination stacks the baseline,
        # all four data tiers, and all five pretraining donors.
        roster = ENSEMBLE_ROSTERS["ensemble-all"]
        assert len(roster) == 10
        assert set(roster) == {
            "base", "D1", "D2", "D3", "D5",
            "pretrain-de", "pretrain-zh", "pretrain-ro", "pretrain-et", "pretrain-ne",
        }

    def test_small_rosters_have_four_diverse_members(self):
        # [TRIVIAL]
        for preset in ("ridge-ensemble", "gbt-ensemble"):
            assert len(ENSEMBLE_ROSTERS[preset]) == 4
        assert ENSEMBLE_KINDS["ridge-ensemble"] == "ridge"
        assert ENSEMBLE_KINDS["gbt-ensemble"] == "gbt"
        assert ENSEMBLE_KINDS["ensemble-all"] is None  # defers to config

    def test_donor_helpers(self):
        # [TRIVIAL] each pretraining language maps to the pair containing it
        assert _donor_pair("et") == "et-en"
        assert _donor_pair("zh") == "en-zh"
        with pytest.raises(ValueError, match="no synthetic pair"):
            _donor_pair("fr")
        assert _donor_langs("pretrain-ro") == ["ro"]
        assert _donor_langs("baseline") == []
        assert _donor_langs("ensemble-all") == ["de", "zh", "ro", "et", "ne"]


class TestConfig:
    def test_validation_errors(self):
        # [TRIVIAL]
        with pytest.raises(ValueError, match="ensemble_kind"):
            ExperimentConfig(ensemble_kind="forest").validate()
        with pytest.raises(ValueError, match="ensemble_folds"):
            ExperimentConfig(ensemble_folds=1).validate()
        with pytest.raises(ValueError, match="evaluation pair"):
            ExperimentConfig(eval_pairs=()).validate()
        with pytest.raises(ValueError):
            ExperimentConfig(eval_pairs=("ende",)).validate()
        with pytest.raises(ValueError, match="ridge_grid"):
            ExperimentConfig(ridge_grid=()).validate()
        with pytest.raises(ValueError, match=">= 0"):
            ExperimentConfig(ridge_grid=(-1.0,)).validate()

    def test_hash_covers_seed_and_settings(self):
        a, b = ExperimentConfig(seed=1), ExperimentConfig(seed=2)
        assert config_hash(a) != config_hash(b)
        assert config_hash(a) == config_hash(ExperimentConfig(seed=1))
        c = ExperimentConfig(seed=1, predictor=dataclasses.replace(
            desk_predictor_config(), epochs=3))
        assert config_hash(a) != config_hash(c)

    def test_load_round_trip(self, bench, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "seed": 9,
            "data_root": str(bench),
            "out_dir": str(tmp_path / "runs"),
            "eval_pairs": ["en-de"],
            "predictor": {"epochs": 2, "hidden": 8},
            "estimator": {"epochs": 3},
            "ensemble_kind": "ridge",
        }))
        config = load_experiment_config(path)
        assert config.seed == 9
        assert config.eval_pairs == ("en-de",)
        assert config.predictor.epochs == 2 and config.predictor.hidden == 8
        assert config.predictor.arch == "rnn"  # untouched default
        assert config.estimator.epochs == 3
        assert config.ensemble_kind == "ridge"

    def test_load_rejects_unknown_fields(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"mystery": 1}')
        with pytest.raises(ValueError, match="unknown config fields: mystery"):
            load_experiment_config(path)
        path.write_text('{"predictor": {"width": 3}}')
        with pytest.raises(ValueError, match="bad predictor settings"):
            load_experiment_config(path)
        path.write_text("not json")
        with pytest.raises(ValueError, match="not valid JSON"):
            load_experiment_config(path)

    def test_load_checks_referenced_paths(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"data_root": str(tmp_path / "absent")}))
        with pytest.raises(FileNotFoundError, match="make_synthetic_data"):
            load_experiment_config(path)


class TestResultsTable:
    def test_insert_replace_and_union(self, tmp_path):
        # [TRIVIAL] one row per (preset, config_hash); columns grow as needed
        table = tmp_path / "results.tsv"
        update_results_table(table, {"preset": "baseline", "config_hash": "aaa",
                                     "seed": "1", "en-de": "0.1000"})
        update_results_table(table, {"preset": "baseline", "config_hash": "aaa",
                                     "seed": "1", "en-de": "0.2000"})
        lines = table.read_text().splitlines()
        assert lines[0] == "preset\tconfig_hash\tseed\ten-de"
        assert lines[1:] == ["baseline\taaa\t1\t0.2000"]

        update_results_table(table, {"preset": "nce", "config_hash": "bbb",
                                     "seed": "1", "en-zh": "0.3000"})
        lines = table.read_text().splitlines()
        assert lines[0] == "preset\tconfig_hash\tseed\ten-de\ten-zh"
        assert lines[1] == "baseline\taaa\t1\t0.2000\t"
        assert lines[2] == "nce\tbbb\t1\t\t0.3000"

    def test_same_preset_different_config_keeps_both(self, tmp_path):
        table = tmp_path / "results.tsv"
        update_results_table(table, {"preset": "baseline", "config_hash": "aaa", "seed": "1"})
        update_results_table(table, {"preset": "baseline", "config_hash": "ccc", "seed": "2"})
        assert len(table.read_text().splitlines()) == 3


class TestHelpers:
    def test_pooled_label(self):
        # [TRIVIAL] the stock pair set keeps the table's pooled column name
        assert pooled_label(("en-de", "en-zh")) == "zh+de"
        assert pooled_label(("en-zh", "en-de")) == "zh+de"
        assert pooled_label(("en-de",)) == "pooled"
        assert pooled_label(("et-en", "ne-en")) == "pooled"

    def test_worker_count(self, monkeypatch):
        monkeypatch.delenv("QEFORGE_THREADS", raising=False)
        assert worker_count() == 1
        monkeypatch.setenv("QEFORGE_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("QEFORGE_THREADS", "zero")
        with pytest.raises(ValueError, match="QEFORGE_THREADS"):
            worker_count()

    def test_ensure_benchmark_materializes_once(self, tmp_path):
        root = tmp_path / "d"
        assert missing_benchmark_files(root)
        ensure_benchmark(root, TINY_SPEC)
        assert not missing_benchmark_files(root)
        marker = next(root.rglob("*.tsv"))
        before = marker.read_bytes()
        ensure_benchmark(root, TINY_SPEC)  # no-op when complete
        assert marker.read_bytes() == before


class TestRunPreset:
    def test_unknown_preset_lists_valid_tags(self, bench, tmp_path):
        with pytest.raises(ValueError, match="baseline.*ensemble-all"):
            run_experiment_preset("bogus", tiny_config(bench, tmp_path / "runs"))

    def test_missing_data_names_generator_script(self, tmp_path):
        config = tiny_config(tmp_path / "absent", tmp_path / "runs")
        with pytest.raises(FileNotFoundError, match="make_synthetic_data"):
            run_experiment_preset("baseline", config)

    def test_zero_epochs_rejected(self, bench, tmp_path):
        # [TRIVIAL] degenerate config must error, not silently no-op
        config = tiny_config(bench, tmp_path / "runs")
        config = dataclasses.replace(
            config, predictor=dataclasses.replace(config.predictor, epochs=0))
        with pytest.raises(ValueError, match="epochs"):
            run_experiment_preset("baseline", config)

    def test_baseline_artifacts_and_results_row(self, bench, tmp_path):
        config = tiny_config(bench, tmp_path / "runs")
        report = run_experiment_preset("baseline", config)
        assert "en-de" in report.per_language

        run_dir = tmp_path / "runs" / f"baseline-{config_hash(dataclasses.replace(config, preset='baseline'))}"
        for name in ("manifest.json", "report.txt", "report.json",
                     "en-de.dev.pred.tsv", "en-de.test.pred.tsv",
                     "en-de.predictor.ckpt", "en-de.estimator.ckpt"):
            assert (run_dir / name).exists(), name
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["preset"] == "baseline"
        assert manifest["seed"] == config.seed
        assert manifest["config_hash"] in run_dir.name
        assert "base" in manifest["submodel_dev_pearson"]["en-de"]

        # one row per (preset, config hash), replaced on rerun
        run_experiment_preset("baseline", config)
        lines = (tmp_path / "runs" / "results.tsv").read_text().splitlines()
        assert len(lines) == 2 and lines[1].startswith("baseline\t")

    def test_reruns_are_byte_identical(self, bench, tmp_path):
        # [DERIVED: determinism check by re-run]
        preds = []
        for d in ("a", "b"):
            config = tiny_config(bench, tmp_path / d, seed=7)
            run_experiment_preset("baseline", config)
            run_dir = next((tmp_path / d).glob("baseline-*"))
            preds.append((run_dir / "en-de.test.pred.tsv").read_bytes())
        assert preds[0] == preds[1]

    def test_parallel_workers_match_serial(self, bench, tmp_path, monkeypatch):
        # [DERIVED] per-task seeding makes worker count irrelevant to output
        results = {}
        for mode, threads in (("serial", "1"), ("parallel", "2")):
            monkeypatch.setenv("QEFORGE_THREADS", threads)
            config = tiny_config(bench, tmp_path / mode,
                                 eval_pairs=("en-de", "en-zh"))
            run_experiment_preset("baseline", config)
            run_dir = next((tmp_path / mode).glob("baseline-*"))
            results[mode] = [(run_dir / f"{p}.test.pred.tsv").read_bytes()
                             for p in ("en-de", "en-zh")]
        assert results["serial"] == results["parallel"]

    def test_ensemble_preset_artifacts(self, bench, tmp_path):
        config = tiny_config(bench, tmp_path / "runs")
        report = run_experiment_preset("gbt-ensemble", config)
        assert "en-de" in report.per_language
        run_dir = next((tmp_path / "runs").glob("gbt-ensemble-*"))
        for name in ("en-de.features.dev.csv", "en-de.meta.json", "en-de.cv.json",
                     "en-de.test.pred.tsv", "manifest.json"):
            assert (run_dir / name).exists(), name
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert set(manifest["submodel_dev_pearson"]["en-de"]) == {"base", "nce", "neg", "D2"}
        cv = json.loads((run_dir / "en-de.cv.json").read_text())
        assert cv["kind"] == "gbt"

    def test_pretrain_preset_trains_donor(self, bench, tmp_path):
        config = tiny_config(bench, tmp_path / "runs")
        run_experiment_preset("pretrain-et", config)
        run_dir = next((tmp_path / "runs").glob("pretrain-et-*"))
        assert (run_dir / "donor-et-en.ckpt").exists()
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert "donor-et-en.ckpt" in manifest["artifacts"]
