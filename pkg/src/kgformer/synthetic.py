"""Deterministic rule-generated toy graph for end-to-end checks and demos.

Sixty entities in twelve families of five; each of the four relations links
every entity to every member of the family a fixed shift away (+1, +2, +3
and +4 mod 12). Enumeration order is canonical, so files
and splits are byte-stable across runs.
"""

from __future__ import annotations

from pathlib import Path

NUM_ENTITIES = 60
FAMILY_SIZE = 5
NUM_FAMILIES = NUM_ENTITIES // FAMILY_SIZE
RELATION_SHIFTS = (1, 2, 3, 4)


def entity_name(i: int) -> str:
    return f"e{i}"


def relation_name(k: int) -> str:
    return f"rel{k}"


def toy_triples() -> list[tuple[str, str, str]]:
    triples = []
    for k, shift in enumerate(RELATION_SHIFTS):
        for i in range(NUM_ENTITIES):
            target_family = (i // FAMILY_SIZE + shift) % NUM_FAMILIES
            for j in range(target_family * FAMILY_SIZE, (target_family + 1) * FAMILY_SIZE):
                triples.append((entity_name(i), relation_name(k), entity_name(j)))
    return triples


def toy_split() -> tuple[list, list, list]:
    """80/10/10 by canonical index: positions 8 and 9 of every block of ten
    go to valid and test."""
    triples = toy_triples()
    train, valid, test = [], [], []
    for idx, triple in enumerate(triples):
        bucket = idx % 10
        (valid if bucket == 8 else test if bucket == 9 else train).append(triple)
    return train, valid, test


def toy_texts() -> dict[str, str]:
    """Family-level entity descriptions (members share them, like surnames)
    and opaque relation descriptions (as with identifier-style property
    names): the text channel narrows candidates but cannot resolve a query
    alone."""
    texts = {
        entity_name(i): f"member of family {i // FAMILY_SIZE}" for i in range(NUM_ENTITIES)
    }
    texts.update({relation_name(k): "related to" for k in range(len(RELATION_SHIFTS))})
    return texts


def write_toy_dataset(out_dir) -> Path:
    """Raw split files plus the text catalog, ready for ``ingest``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, valid, test = toy_split()
    for name, triples in (("train", train), ("valid", valid), ("test", test)):
        with (out_dir / f"{name}.tsv").open("w", encoding="utf-8") as fh:
            for h, r, t in triples:
                fh.write(f"{h}\t{r}\t{t}\n")
    with (out_dir / "texts.tsv").open("w", encoding="utf-8") as fh:
        for key, text in toy_texts().items():
            fh.write(f"{key}\t{text}\n")
    return out_dir
