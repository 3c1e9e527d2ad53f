"""Run prompts through a causal LM and write the IGTEMB1 embedding cache.

Per (head, relation) pair: the prompt's last-token final-layer hidden state.
Per entity/relation: the mean of the input embeddings over the description's
token span inside the prompt (flagged as mean pooling in the header).
Records that cannot be produced (missing texts) are reported and skipped;
the job continues. Re-exports overwrite and are byte-identical.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .models import TinyCausalBackend, load_backend
from .prompt import build_prompt

CACHE_MAGIC = b"IGTEMB1"
KIND_ENTITY, KIND_RELATION, KIND_PAIR = 0, 1, 2
POOLING_MEAN = 1


@dataclass
class ExportJob:
    model: str
    pairs: list[tuple[int, int]]
    entity_texts: dict[int, str]
    relation_texts: dict[int, str]
    out_path: Path
    d_llm: int = 0  # filled from the model's hidden size

    errors: list[str] = field(default_factory=list)


def load_pairs_file(path) -> list[tuple[int, int]]:
    """TSV lines ``<entity_id>\t<relation_id>``."""
    pairs = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{line_no}: expected <entity_id>\\t<relation_id>")
        pairs.append((int(parts[0]), int(parts[1])))
    return pairs


def load_texts_file(path, entity_texts: dict, relation_texts: dict) -> None:
    """TSV lines ``entity|relation\t<id>\t<description>``."""
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t", 2)
        if len(parts) != 3 or parts[0] not in ("entity", "relation"):
            raise ValueError(
                f"{path}:{line_no}: expected entity|relation\\t<id>\\t<description>"
            )
        target = entity_texts if parts[0] == "entity" else relation_texts
        target[int(parts[1])] = parts[2]


def _write_cache(path, d_llm, entities, relations, pairs) -> None:
    records = []
    for e in sorted(entities):
        records.append((KIND_ENTITY, e, 0, entities[e]))
    for r in sorted(relations):
        records.append((KIND_RELATION, r, 0, relations[r]))
    for h, r in sorted(pairs):
        records.append((KIND_PAIR, h, r, pairs[(h, r)]))
    with Path(path).open("wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<BQQ", POOLING_MEAN, d_llm, len(records)))
        for kind, a, b, vec in records:
            vec = np.asarray(vec, dtype="<f4")
            if vec.shape != (d_llm,):
                raise ValueError(f"vector shape {vec.shape} != ({d_llm},)")
            fh.write(struct.pack("<BQQ", kind, a, b))
            fh.write(vec.tobytes())


def export(job: ExportJob, log=sys.stderr) -> Path:
    """Produce the cache file for every resolvable pair in the job."""
    torch.set_num_threads(1)  # keeps re-exports byte-identical
    vocab_words = [
        w
        for text in list(job.entity_texts.values()) + list(job.relation_texts.values())
        for w in TinyCausalBackend.words_of(text)
    ]
    backend = load_backend(job.model, vocab_words=vocab_words)
    job.d_llm = backend.hidden_size

    entities: dict[int, np.ndarray] = {}
    relations: dict[int, np.ndarray] = {}
    pairs: dict[tuple[int, int], np.ndarray] = {}
    for h, r in job.pairs:
        missing = []
        if h not in job.entity_texts:
            missing.append(f"entity {h}")
        if r not in job.relation_texts:
            missing.append(f"relation {r}")
        if missing:
            msg = f"pair ({h}, {r}): no text for {', '.join(missing)}; skipped"
            job.errors.append(msg)
            print(f"warning: {msg}", file=log)
            continue
        segments = build_prompt(job.entity_texts[h], job.relation_texts[r])
        inputs, hidden, spans = backend.encode(segments.pieces)
        e_start, e_end = spans[segments.entity_piece]
        r_start, r_end = spans[segments.relation_piece]
        entities.setdefault(h, inputs[e_start:e_end].mean(dim=0).numpy().astype("<f4"))
        relations.setdefault(r, inputs[r_start:r_end].mean(dim=0).numpy().astype("<f4"))
        pairs[(h, r)] = hidden[-1].numpy().astype("<f4")

    _write_cache(job.out_path, job.d_llm, entities, relations, pairs)
    return Path(job.out_path)
