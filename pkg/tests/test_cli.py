import json
import os

import pytest

from kgformer.cli import main
from kgformer.config import RunSettings, parse_config_file
from kgformer.synthetic import write_toy_dataset


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    return write_toy_dataset(tmp_path_factory.mktemp("toyraw"))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory, toy_files):
    out = tmp_path_factory.mktemp("toydata")
    assert (
        main(
            [
                "ingest",
                "--train", str(toy_files / "train.tsv"),
                "--valid", str(toy_files / "valid.tsv"),
                "--test", str(toy_files / "test.tsv"),
                "--texts", str(toy_files / "texts.tsv"),
                "--out", str(out),
            ]
        )
        == 0
    )
    return out


FAST = [
    "--set", "encoder.d_model=16", "--set", "encoder.n_heads=2",
    "--set", "encoder.n_layers=1", "--set", "encoder.d_ff=32",
    "--set", "sampler.budget_hr=2", "--set", "sampler.budget_h=2",
    "--set", "sampler.budget_r=2",
]


class TestConfigFile:
    def test_parse_and_precedence(self, tmp_path, monkeypatch):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nseed = 3\ntrain.epochs = 7\nfusion.lambda = 0.25\n")
        settings = RunSettings.load(cfg, overrides={"train.epochs": "9"}, env={})
        assert settings["train.epochs"] == 9  # CLI beats file
        assert settings["fusion.lambda"] == 0.25
        assert settings.seed == 3
        env_settings = RunSettings.load(cfg, env={"IGT_SEED": "42"})
        assert env_settings.seed == 42  # env beats everything

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("bogus.key = 1\n")
        with pytest.raises(ValueError, match="unknown configuration"):
            RunSettings.load(cfg, env={})

    def test_malformed_line(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("just words\n")
        with pytest.raises(ValueError, match="key = value"):
            parse_config_file(cfg)


class TestCliSurface:
    def test_sample_dump(self, data_dir, capsys):
        assert main([
            "sample", "--data", str(data_dir),
            "--head", "e0", "--relation", "rel0", "--tail", "e21",
        ]) == 0
        out = capsys.readouterr().out
        assert out.startswith("TT\te0\trel0\t?")
        assert "POS:" in out and "NEG:" in out

    def test_inspect_prints_grids(self, data_dir, capsys):
        assert main([
            "inspect", "--data", str(data_dir),
            "--head", "e0", "--relation", "rel0", "--tail", "e21",
        ]) == 0
        out = capsys.readouterr().out
        assert "P (signed token distances):" in out
        assert "D (token-kind codes):" in out

    def test_diagnostics(self, data_dir, tmp_path, capsys):
        out_json = tmp_path / "diag.json"
        assert main([
            "diagnostics", "--data", str(data_dir), "--queries", "40",
            "--out", str(out_json), *FAST,
        ]) == 0
        block = json.loads(out_json.read_text())
        assert block["count"] == 40
        assert block["a_it"] >= 1.0

    def test_train_eval_export_round_trip(self, data_dir, tmp_path, capsys):
        run_dir = tmp_path / "run"
        assert main([
            "train", "--data", str(data_dir), "--out", str(run_dir), "--quiet",
            "--set", "train.epochs=1", "--set", "train.batch_size=64",
            "--set", "train.grad_accumulation=1", *FAST,
        ]) == 0
        assert (run_dir / "best.ckpt").exists()
        assert (run_dir / "train_log.jsonl").exists()

        assert main([
            "eval", "--data", str(data_dir), "--checkpoint", str(run_dir / "best.ckpt"),
            "--split", "test", *FAST,
        ]) == 0
        out = capsys.readouterr().out
        assert "MRR" in out
        assert (run_dir / "metrics.json").exists()

        prefix = tmp_path / "report"
        assert main([
            "export-report", "--run", str(run_dir), "--out", str(prefix), "--label", "toy",
        ]) == 0
        assert prefix.with_suffix(".json").exists()
        text = prefix.with_suffix(".txt").read_text()
        assert "toy" in text and "Hits@10" in text

    def test_seed_env_var(self, data_dir, capsys, monkeypatch):
        monkeypatch.setenv("IGT_SEED", "123")
        assert main([
            "sample", "--data", str(data_dir),
            "--head", "e0", "--relation", "rel0",
        ]) == 0

    def test_text_embedding_init_path(self, data_dir, tmp_path):
        import numpy as np
        from kgformer.config import RunSettings
        from kgformer.datasets import load_dataset

        ds = load_dataset(data_dir)
        vectors = np.random.default_rng(0).normal(size=(ds.catalog.num_words, 8))
        emb_file = tmp_path / "words.npy"
        np.save(emb_file, vectors.astype(np.float32))
        settings = RunSettings.load(
            overrides={
                "encoder.d_model": 16, "encoder.n_heads": 2, "encoder.n_layers": 1,
                "encoder.d_ff": 32, "encoder.text_embedding_file": str(emb_file),
            },
            env={},
        )
        model = settings.build_model(ds.kg, ds.catalog)
        # text-derived rows replace the Gaussian init deterministically
        again = settings.build_model(ds.kg, ds.catalog)
        import torch

        assert torch.equal(model.encoder.embedding.weight, again.encoder.embedding.weight)
