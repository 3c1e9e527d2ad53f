import os
from pathlib import Path

import numpy as np
import pytest
import torch

from kgformer.kg import KnowledgeGraph, Triple, Vocabulary, add_inverse_relations

torch.set_num_threads(1)


def graph_from(named_triples, doubled=False) -> KnowledgeGraph:
    """Build a graph from (head, relation, tail) name strings."""
    entities, relations = Vocabulary(), Vocabulary()
    triples = [
        Triple(entities.add(h), relations.add(r), entities.add(t))
        for h, r, t in named_triples
    ]
    kg = KnowledgeGraph(entities, relations, triples)
    return add_inverse_relations(kg) if doubled else kg


@pytest.fixture
def tiny_kg():
    return graph_from([("a", "r", "b"), ("b", "r", "c"), ("a", "s", "c")])


def fb15k237_dir():
    """FB15k-237 split directory, if the dataset is available locally."""
    candidates = [os.environ.get("KGFORMER_FB15K237"), "data/FB15k-237", "/root/data/FB15k-237"]
    for cand in candidates:
        if cand and (Path(cand) / "train.txt").exists():
            return Path(cand)
    return None


def requires_fb15k237():
    return pytest.mark.skipif(
        fb15k237_dir() is None,
        reason="FB15k-237 not available (set KGFORMER_FB15K237 to the split directory)",
    )
