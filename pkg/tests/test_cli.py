import json
from pathlib import Path

import pytest

from pseudolab import cli, fixtures
from pseudolab.cli import main


def _write_config(directory: Path, dataset, overrides=None) -> Path:
    entries = fixtures.write_corpus_files(dataset.store, directory / "corpus")
    train_tsv = directory / "train.tsv"
    test_tsv = directory / "test.tsv"
    fixtures.write_labeled_tsv(dataset.labeled_train, train_tsv)
    fixtures.write_labeled_tsv(dataset.labeled_test, test_tsv)
    config = {
        "corpora": entries,
        "labeled_train": str(train_tsv),
        "labeled_test": str(test_tsv),
        "output_dir": str(directory / "out"),
        "retrieval": {"hashed_dim": 128, "ngram_min": 3, "ngram_max": 4},
        "archetypes": [
            {"name": "a", "hashed_dim": 128, "ngram_min": 3, "ngram_max": 5},
            {"name": "b", "hashed_dim": 64, "ngram_min": 2, "ngram_max": 4},
            {"name": "c", "hashed_dim": 96, "ngram_min": 4, "ngram_max": 6, "batch_size": 20},
        ],
        "k": 15,
        "seeds": [1, 2, 3],
        "n_folds": 5,
        "hyper_pseudo": {"max_epochs": 2},
        "hyper_fine": {"max_epochs": 3},
        "hyper_baseline": {"max_epochs": 3},
    }
    config.update(overrides or {})
    path = directory / "config.json"
    path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return path


STAGES = (
    "ingest",
    "featurize",
    "index",
    "train-baseline",
    "pseudolabel",
    "train-ensemble",
)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    directory = tmp_path_factory.mktemp("cli_pipeline")
    dataset = fixtures.make_synthetic_dataset(
        n_corpus=400, n_train=40, n_test=10, seed=5
    )
    config_path = _write_config(directory, dataset)
    for command in STAGES:
        assert main([command, "--config", str(config_path)]) == 0, command
    return directory, config_path, dataset


class TestFullPipeline:
    def test_artifacts_exist(self, pipeline):
        directory, _, _ = pipeline
        out = directory / "out"
        for name in (
            cli.STORE,
            cli.CORPUS_STATS,
            cli.FEATURE_STATS,
            cli.CORPUS_VECTORS,
            cli.CORPUS_IDS,
            cli.INDEX,
            cli.BASELINE_MODEL,
            cli.PSEUDO_LABELS,
            cli.PSEUDO_STATS,
            cli.PSEUDO_TABLE,
            cli.BUNDLE,
        ):
            assert (out / name).exists(), name
        assert not (out / ".lock").exists()
        assert not list(out.glob("*.tmp"))

    def test_manifest_records_all_stages(self, pipeline):
        directory, _, _ = pipeline
        manifest = json.loads((directory / "out" / "manifest.json").read_text())
        recorded = set(manifest["stages"])
        for stage in STAGES:
            assert stage in recorded
            info = manifest["stages"][stage]
            assert info["outputs"]
            assert all(len(d) == 64 for d in info["outputs"].values())

    def test_pseudo_table_rendered(self, pipeline):
        directory, _, _ = pipeline
        table = (directory / "out" / cli.PSEUDO_TABLE).read_text()
        assert table.splitlines()[0].startswith("Data Source")

    def test_predict(self, pipeline):
        directory, config_path, dataset = pipeline
        input_path = directory / "sentences.txt"
        input_path.write_text(
            "\n".join(s.text for s in dataset.labeled_test[:5]) + "\n",
            encoding="utf-8",
        )
        assert (
            main(["predict", "--config", str(config_path), "--input", str(input_path)])
            == 0
        )
        lines = (directory / "out" / cli.PREDICTIONS).read_text().splitlines()
        assert len(lines) == 5
        for i, line in enumerate(lines, start=1):
            idx, score = line.split("\t")
            assert int(idx) == i
            assert 1.0 <= float(score) <= 7.0
            assert len(score.split(".")[1]) == 3

    def test_predict_requires_input(self, pipeline):
        _, config_path, _ = pipeline
        assert main(["predict", "--config", str(config_path)]) == 1

    def test_evaluate(self, pipeline):
        directory, config_path, _ = pipeline
        assert main(["evaluate", "--config", str(config_path)]) == 0
        report = json.loads((directory / "out" / cli.EVAL_JSON).read_text())
        assert report["setting"] == "ensemble_mean"
        assert len(report["per_fold_rmse"]) == 5
        assert 0.0 <= report["fold_mean_rmse"] <= 3.0
        table = (directory / "out" / cli.EVAL_TABLE).read_text()
        assert table.startswith("Setting")

    def test_lock_blocks_second_command(self, pipeline):
        directory, config_path, _ = pipeline
        lock = directory / "out" / ".lock"
        lock.write_text("12345")
        try:
            assert main(["ingest", "--config", str(config_path)]) == 1
        finally:
            lock.unlink()


class TestValidation:
    def test_invalid_k_rejected_before_any_work(self, tmp_path):
        dataset = fixtures.make_synthetic_dataset(n_corpus=50, n_train=10, n_test=5, seed=1)
        config_path = _write_config(tmp_path, dataset, {"k": 0})
        assert main(["ingest", "--config", str(config_path)]) == 1
        assert not (tmp_path / "out").exists()

    def test_missing_corpus_file(self, tmp_path):
        dataset = fixtures.make_synthetic_dataset(n_corpus=50, n_train=10, n_test=5, seed=1)
        config_path = _write_config(
            tmp_path,
            dataset,
            {"corpora": [{"path": str(tmp_path / "nope.txt"), "source": "wiki"}]},
        )
        assert main(["ingest", "--config", str(config_path)]) == 1

    def test_bad_setting(self, tmp_path):
        dataset = fixtures.make_synthetic_dataset(n_corpus=50, n_train=10, n_test=5, seed=1)
        config_path = _write_config(tmp_path, dataset, {"setting": "magic"})
        assert main(["ingest", "--config", str(config_path)]) == 1

    def test_malformed_json_config(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json", encoding="utf-8")
        assert main(["ingest", "--config", str(path)]) == 1

    def test_missing_config_flag(self):
        assert main(["ingest"]) == 1

    def test_unknown_command(self):
        assert main(["frobnicate", "--config", "x.json"]) == 1


class TestStaleness:
    @pytest.fixture()
    def two_stage_dir(self, tmp_path):
        dataset = fixtures.make_synthetic_dataset(
            n_corpus=80, n_train=10, n_test=5, seed=2
        )
        config_path = _write_config(tmp_path, dataset)
        assert main(["ingest", "--config", str(config_path)]) == 0
        return tmp_path, config_path

    def test_featurize_without_ingest(self, tmp_path):
        dataset = fixtures.make_synthetic_dataset(n_corpus=50, n_train=10, n_test=5, seed=1)
        config_path = _write_config(tmp_path, dataset)
        assert main(["featurize", "--config", str(config_path)]) == 2

    def test_modified_upstream_detected(self, two_stage_dir, capsys):
        directory, config_path = two_stage_dir
        store = directory / "out" / cli.STORE
        store.write_text(
            store.read_text(encoding="utf-8") + "\n", encoding="utf-8"
        )
        assert main(["featurize", "--config", str(config_path)]) == 2
        err = capsys.readouterr().err
        assert "store.jsonl" in err
        assert "ingest" in err

    def test_force_overrides_staleness(self, two_stage_dir):
        directory, config_path = two_stage_dir
        store = directory / "out" / cli.STORE
        store.write_text(store.read_text(encoding="utf-8") + "\n", encoding="utf-8")
        assert main(["featurize", "--config", str(config_path), "--force"]) == 0

    def test_rerun_after_upstream_rerun_succeeds(self, two_stage_dir):
        directory, config_path = two_stage_dir
        (directory / "out" / cli.STORE).unlink()
        assert main(["featurize", "--config", str(config_path)]) == 2
        assert main(["ingest", "--config", str(config_path)]) == 0
        assert main(["featurize", "--config", str(config_path)]) == 0
