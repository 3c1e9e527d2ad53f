"""Exporter tests, including the primary-toolkit integration round trip.

The integration test talks to the primary toolkit only through its external
surfaces: the dataset ingest CLI, the IGTKG1 snapshot format (to resolve
surface names to integer ids), the IGTEMB1 cache this package writes, and
the train/eval CLI.
"""

import json
import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kg_embedding_exporter.export import ExportJob, export, load_pairs_file, load_texts_file
from kg_embedding_exporter.cli import main as export_main

D = 32  # width of the built-in tiny model


def texts_for(n_entities=12, n_relations=3):
    entity = {i: f"node number {i}" for i in range(n_entities)}
    relation = {r: f"link kind {r}" for r in range(n_relations)}
    return entity, relation


def ten_pairs():
    return [(i, i % 3) for i in range(10)]


def run_job(tmp_path, pairs=None, entity_texts=None, relation_texts=None, name="cache.bin"):
    entity, relation = texts_for()
    job = ExportJob(
        model="tiny:7",
        pairs=pairs if pairs is not None else ten_pairs(),
        entity_texts=entity_texts if entity_texts is not None else entity,
        relation_texts=relation_texts if relation_texts is not None else relation,
        out_path=tmp_path / name,
    )
    export(job)
    return job


def parse_cache(path):
    raw = Path(path).read_bytes()
    assert raw[:7] == b"IGTEMB1"
    pooling, d_llm, count = struct.unpack_from("<BQQ", raw, 7)
    off = 24
    records = []
    for _ in range(count):
        kind, a, b = struct.unpack_from("<BQQ", raw, off)
        off += 17
        vec = np.frombuffer(raw, dtype="<f4", count=d_llm, offset=off)
        off += 4 * d_llm
        records.append((kind, a, b, vec))
    assert off == len(raw)
    return pooling, d_llm, records


class TestExport:
    def test_ten_pair_export_counts(self, tmp_path):
        job = run_job(tmp_path)
        pooling, d_llm, records = parse_cache(job.out_path)
        assert pooling == 1  # mean pooling flagged
        assert d_llm == D == job.d_llm
        kinds = [k for k, *_ in records]
        assert kinds.count(2) == 10  # pairs
        assert kinds.count(0) == 10  # distinct entities
        assert kinds.count(1) == 3  # distinct relations
        assert all(np.isfinite(vec).all() for *_, vec in records)

    def test_reexport_byte_identical(self, tmp_path):
        a = run_job(tmp_path, name="a.bin")
        b = run_job(tmp_path, name="b.bin")
        assert a.out_path.read_bytes() == b.out_path.read_bytes()

    def test_overwrite_idempotent(self, tmp_path):
        job = run_job(tmp_path)
        first = job.out_path.read_bytes()
        run_job(tmp_path)
        assert job.out_path.read_bytes() == first

    def test_missing_text_reported_job_continues(self, tmp_path, capsys):
        entity, relation = texts_for()
        del entity[3]
        job = ExportJob(
            model="tiny:7",
            pairs=ten_pairs(),
            entity_texts=entity,
            relation_texts=relation,
            out_path=tmp_path / "partial.bin",
        )
        export(job, log=sys.stdout)
        assert len(job.errors) == 1 and "entity 3" in job.errors[0]
        _, _, records = parse_cache(job.out_path)
        assert sum(1 for k, *_ in records if k == 2) == 9

    def test_file_inputs_and_cli(self, tmp_path):
        pairs_file = tmp_path / "pairs.tsv"
        pairs_file.write_text("".join(f"{h}\t{r}\n" for h, r in ten_pairs()))
        texts_file = tmp_path / "texts.tsv"
        entity, relation = texts_for()
        with texts_file.open("w") as fh:
            for i, text in entity.items():
                fh.write(f"entity\t{i}\t{text}\n")
            for r, text in relation.items():
                fh.write(f"relation\t{r}\t{text}\n")
        out = tmp_path / "cli.bin"
        rc = export_main(
            ["--model", "tiny:7", "--pairs-file", str(pairs_file),
             "--texts", str(texts_file), "--out", str(out)]
        )
        assert rc == 0
        _, d_llm, records = parse_cache(out)
        assert d_llm == D
        assert load_pairs_file(pairs_file) == ten_pairs()

    def test_malformed_inputs_rejected(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("only-one-field\n")
        with pytest.raises(ValueError):
            load_pairs_file(bad)
        with pytest.raises(ValueError):
            load_texts_file(bad, {}, {})


# -- integration with the primary toolkit -----------------------------------

SNAPSHOT_MAGIC = b"IGTKG1"


def read_snapshot_vocabs(path):
    """Minimal reader for the primary's documented IGTKG1 snapshot format."""
    raw = Path(path).read_bytes()
    assert raw[:6] == SNAPSHOT_MAGIC
    n_e, n_r, n_base, n_t, flags = struct.unpack_from("<QQQQQ", raw, 6)
    off = 46
    names = []
    for _ in range(n_e + n_r):
        (ln,) = struct.unpack_from("<Q", raw, off)
        off += 8
        names.append(raw[off : off + ln].decode("utf-8"))
        off += ln
    return names[:n_e], names[n_e:]


def primary_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "kgformer.cli", *args],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="module")
def toy_setup(tmp_path_factory):
    pytest.importorskip("kgformer", reason="primary toolkit not installed")
    tmp = tmp_path_factory.mktemp("integration")
    raw = tmp / "raw"
    from kgformer.synthetic import write_toy_dataset  # dataset generator only

    write_toy_dataset(raw)
    proc = primary_cli(
        "ingest",
        "--train", str(raw / "train.tsv"),
        "--valid", str(raw / "valid.tsv"),
        "--test", str(raw / "test.tsv"),
        "--texts", str(raw / "texts.tsv"),
        "--out", str(tmp / "data"),
    )
    assert proc.returncode == 0, proc.stderr
    return tmp


FAST_FLAGS = [
    "--set", "encoder.d_model=16", "--set", "encoder.n_heads=2",
    "--set", "encoder.n_layers=1", "--set", "encoder.d_ff=32",
    "--set", "sampler.budget_hr=2", "--set", "sampler.budget_h=2",
    "--set", "sampler.budget_r=2",
    "--set", "model.provider=cache", "--set", "fusion.lambda=0",
    "--set", "provider.d_llm=32",
]


class TestPrimaryIntegration:
    def test_eval_round_trip_with_lambda_zero(self, toy_setup, tmp_path):
        tmp = toy_setup
        entities, relations = read_snapshot_vocabs(tmp / "data" / "graph.kg")
        ent_id = {name: i for i, name in enumerate(entities)}
        rel_id = {name: i for i, name in enumerate(relations)}

        # cover every eval query in both directions: (h, r) and (t, r^-1)
        pairs = set()
        for split in ("valid.tsv", "test.tsv"):
            for line in (tmp / "data" / split).read_text().splitlines():
                h, r, t = line.split("\t")
                pairs.add((ent_id[h], rel_id[r]))
                pairs.add((ent_id[t], rel_id["inverse of " + r]))
        assert len(pairs) >= 10  # the criterion's ten-pair export, and then some

        pairs_file = tmp_path / "pairs.tsv"
        pairs_file.write_text("".join(f"{h}\t{r}\n" for h, r in sorted(pairs)))
        texts_file = tmp_path / "texts.tsv"
        with texts_file.open("w") as fh:
            for name, i in ent_id.items():
                fh.write(f"entity\t{i}\t{name}\n")
            for name, i in rel_id.items():
                fh.write(f"relation\t{i}\t{name}\n")

        cache = tmp_path / "cache.bin"
        rc = export_main(
            ["--model", "tiny:11", "--pairs-file", str(pairs_file),
             "--texts", str(texts_file), "--out", str(cache)]
        )
        assert rc == 0

        # byte-identical re-export
        again = tmp_path / "cache2.bin"
        export_main(
            ["--model", "tiny:11", "--pairs-file", str(pairs_file),
             "--texts", str(texts_file), "--out", str(again)]
        )
        assert cache.read_bytes() == again.read_bytes()

        run_dir = tmp_path / "run"
        cache_flags = ["--set", f"model.embedding_cache={cache}"]
        proc = primary_cli(
            "train", "--data", str(tmp / "data"), "--out", str(run_dir), "--quiet",
            "--set", "train.epochs=0", *FAST_FLAGS, *cache_flags,
        )
        assert proc.returncode == 0, proc.stderr
        proc = primary_cli(
            "eval", "--data", str(tmp / "data"),
            "--checkpoint", str(run_dir / "best.ckpt"), "--split", "test",
            *FAST_FLAGS, *cache_flags,
        )
        assert proc.returncode == 0, proc.stderr
        assert "MRR" in proc.stdout
        report = json.loads((run_dir / "metrics.json").read_text())
        n_test = len((tmp / "data" / "test.tsv").read_text().splitlines())
        assert report["num_queries"] == 2 * n_test  # both directions
