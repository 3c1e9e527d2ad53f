"""Dataset bundles: ingest split files into a directory with a graph snapshot."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

from .kg import (
    KnowledgeGraph,
    TextCatalog,
    Triple,
    Vocabulary,
    add_inverse_relations,
    load_snapshot,
    load_text_file,
    load_triples,
    save_snapshot,
)

GRAPH_FILE = "graph.kg"
VALID_FILE = "valid.tsv"
TEST_FILE = "test.tsv"
TEXTS_FILE = "texts.tsv"


@dataclass
class Dataset:
    kg: KnowledgeGraph  # doubled training graph
    catalog: TextCatalog
    valid: list[Triple]  # base-relation ids
    test: list[Triple]


def ingest(train_path, valid_path=None, test_path=None, text_paths=(), out_dir=".") -> Path:
    """Build a dataset directory: doubled-train snapshot, normalized eval
    splits, merged text catalog file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entities, relations = Vocabulary(), Vocabulary()
    train = load_triples(train_path, entities, relations)
    kg = add_inverse_relations(KnowledgeGraph(entities, relations, train))
    save_snapshot(kg, out_dir / GRAPH_FILE)

    for src, dest in ((valid_path, VALID_FILE), (test_path, TEST_FILE)):
        if src is None:
            continue
        kept, skipped = [], 0
        with Path(src).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{src}: malformed line {line!r}")
                h, r, t = parts
                if h in entities and t in entities and r in relations:
                    kept.append((h, r, t))
                else:
                    skipped += 1
        if skipped:
            warnings.warn(f"{src}: skipped {skipped} triples with unseen entities/relations")
        with (out_dir / dest).open("w", encoding="utf-8") as fh:
            for h, r, t in kept:
                fh.write(f"{h}\t{r}\t{t}\n")

    texts: dict[str, str] = {}
    for p in text_paths:
        texts.update(load_text_file(p))
    if texts:
        with (out_dir / TEXTS_FILE).open("w", encoding="utf-8") as fh:
            for key in sorted(texts):
                fh.write(f"{key}\t{texts[key]}\n")
    return out_dir


def load_dataset(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    kg = load_snapshot(data_dir / GRAPH_FILE)
    if not kg.doubled:
        raise ValueError("dataset snapshot must contain the doubled graph")
    texts = {}
    if (data_dir / TEXTS_FILE).exists():
        texts = load_text_file(data_dir / TEXTS_FILE)
    catalog = TextCatalog.build(kg, texts)

    def load_split(name: str) -> list[Triple]:
        path = data_dir / name
        if not path.exists():
            return []
        return load_triples(path, kg.entities, kg.relations, frozen=True)

    return Dataset(kg=kg, catalog=catalog, valid=load_split(VALID_FILE), test=load_split(TEST_FILE))
