"""Ranking metrics, filtered evaluation driver, and input-size diagnostics."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from .kg import KnowledgeGraph, Triple
from .positions import BucketMap, build_distance_matrix, bucketize
from .sampling import SamplerConfig, Subgraph, extract_subgraph


def rank_candidates(probabilities, gold: int, known_true=frozenset()) -> int:
    """Filtered rank of the gold entity.

    Other known-true entities leave contention; exact ties with the gold
    probability count half, rounded up (conservative, deterministic).
    """
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    n = p.shape[0]
    if not 0 <= gold < n:
        raise KeyError(f"gold entity {gold} outside the {n}-way score vector")
    removed = np.zeros(n, dtype=bool)
    for e in known_true:
        removed[e] = True
    removed[gold] = False
    gold_p = p[gold]
    alive = ~removed
    higher = int(((p > gold_p) & alive).sum())
    ties = int(((p == gold_p) & alive).sum()) - 1  # gold itself is alive
    return 1 + higher + (ties + 1) // 2 if ties > 0 else 1 + higher


def mrr(ranks) -> float:
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks to average")
    return float(np.mean([1.0 / r for r in ranks]))


def hits_at_k(ranks, k: int) -> float:
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks to average")
    return float(np.mean([1.0 if r <= k else 0.0 for r in ranks]))


@dataclass(frozen=True)
class RankingResult:
    head: int
    relation: int
    gold: int
    rank: int
    scores_digest: str

    @staticmethod
    def digest_scores(probabilities) -> str:
        arr = np.asarray(probabilities, dtype="<f4")
        return hashlib.sha1(arr.tobytes()).hexdigest()[:12]


@dataclass
class Diagnostics:
    """Running means over a stream of query subgraphs."""

    a_it: float = 0.0  # triples per input, target included
    a_il: float = 0.0  # deduplicated token-layout length
    a_bbr: float = 0.0  # finite distance entries outside the exact bucket span
    count: int = 0

    def update(self, subgraph: Subgraph, bucket_map: BucketMap) -> None:
        _, beyond = bucketize(build_distance_matrix(subgraph), bucket_map)
        self.count += 1
        w = 1.0 / self.count
        self.a_it += (subgraph.num_triples - self.a_it) * w
        self.a_il += (subgraph.num_tokens - self.a_il) * w
        self.a_bbr += (beyond - self.a_bbr) * w

    def as_dict(self) -> dict:
        return {"a_it": self.a_it, "a_il": self.a_il, "a_bbr": self.a_bbr, "count": self.count}


def collect_diagnostics(subgraphs, bucket_map: BucketMap) -> Diagnostics:
    diag = Diagnostics()
    for sub in subgraphs:
        diag.update(sub, bucket_map)
    if diag.count == 0:
        raise ValueError("diagnostics need a non-empty subgraph stream")
    return diag


def build_filter_index(kg: KnowledgeGraph, *triple_sets) -> dict[tuple[int, int], set[int]]:
    """(head, relation) -> known-true tails, over base triples of all splits,
    expanded to both query directions of the doubled graph."""
    if not kg.doubled:
        raise ValueError("filter index requires the inverse-doubled graph")
    base = kg.num_base_relations
    index: dict[tuple[int, int], set[int]] = {}
    for triples in triple_sets:
        for h, r, t in triples:
            if r >= base:
                h, r, t = t, r - base, h
            index.setdefault((h, r), set()).add(t)
            index.setdefault((t, r + base), set()).add(h)
    return index


def evaluation_queries(kg: KnowledgeGraph, triples) -> list[tuple[int, int, int, str]]:
    """Each test triple as a tail query plus its inverse-relation head query."""
    queries = []
    for h, r, t in triples:
        queries.append((h, r, t, "tail"))
        queries.append((t, kg.inverse_relation(r), h, "head"))
    return queries


def evaluate(
    model,
    kg: KnowledgeGraph,
    triples,
    sampler_config: SamplerConfig,
    filter_index=None,
    raw: bool = False,
    seed: int = 0,
    batch_size: int = 64,
    with_diagnostics: bool = False,
    keep_results: bool = False,
) -> dict:
    """Filtered (default) or raw ranking of every triple in both directions."""
    queries = evaluation_queries(kg, triples)
    if not queries:
        raise ValueError("no evaluation queries")
    bucket_map = model.encoder.tables.distance_map
    diag = Diagnostics() if with_diagnostics else None
    ranks = {"tail": [], "head": []}
    results: list[RankingResult] = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(queries), batch_size):
            chunk = queries[start : start + batch_size]
            subs = []
            for qi, (h, r, gold, _) in enumerate(chunk, start=start):
                rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 7, qi)))
                subs.append(extract_subgraph(kg, h, r, gold, sampler_config, rng))
            probs = model.score(subs).double().cpu().numpy()
            for row, sub, (h, r, gold, direction) in zip(probs, subs, chunk):
                if diag is not None:
                    diag.update(sub, bucket_map)
                known = {gold} if raw or filter_index is None else (
                    filter_index.get((h, r), {gold})
                )
                rank = rank_candidates(row, gold, known)
                ranks[direction].append(rank)
                if keep_results:
                    results.append(
                        RankingResult(h, r, gold, rank, RankingResult.digest_scores(row))
                    )
    all_ranks = ranks["tail"] + ranks["head"]
    report = {
        "num_queries": len(all_ranks),
        "mrr": mrr(all_ranks),
        "hits": {k: hits_at_k(all_ranks, k) for k in (1, 3, 10)},
        "directions": {
            d: {
                "num_queries": len(rs),
                "mrr": mrr(rs) if rs else None,
                "hits": {k: hits_at_k(rs, k) for k in (1, 3, 10)} if rs else None,
            }
            for d, rs in ranks.items()
        },
        "protocol": "raw" if raw else "filtered",
    }
    if diag is not None:
        report["diagnostics"] = diag.as_dict()
    if keep_results:
        report["results"] = [r.__dict__ for r in results]
    return report


def format_report_table(report: dict, label: str = "model") -> str:
    """Plain-text summary with the usual comparison-table column layout."""

    def hits_of(block):  # JSON round-trips turn the int keys into strings
        return {int(k): v for k, v in block["hits"].items()}

    header = f"{'Method':<16}{'MRR':>8}{'Hits@1':>9}{'Hits@3':>9}{'Hits@10':>9}"
    rows = [header, "-" * len(header)]
    hits = hits_of(report)
    rows.append(
        f"{label:<16}{report['mrr']:>8.3f}{hits[1]:>9.3f}{hits[3]:>9.3f}{hits[10]:>9.3f}"
    )
    for d, sub in report.get("directions", {}).items():
        if sub.get("mrr") is None:
            continue
        h = hits_of(sub)
        rows.append(
            f"{label + ':' + d:<16}{sub['mrr']:>8.3f}{h[1]:>9.3f}{h[3]:>9.3f}{h[10]:>9.3f}"
        )
    diag = report.get("diagnostics")
    if diag:
        rows.append(
            f"diagnostics: A.IT {diag['a_it']:.2f}  A.IL {diag['a_il']:.2f}  "
            f"A.BBR {diag['a_bbr']:.2f}  (n={diag['count']})"
        )
    return "\n".join(rows)
