"""Neighborhood subgraph extraction around a (head, relation, ?) query.

Three triple sets are sampled under one total budget: same-head-same-relation
neighbors and same-head-other-relation neighbors (both expanded ring by ring
up to a radius), plus distant triples sharing only the query relation.
Selection within a candidate pool is sequential weighted sampling without
replacement, weighted by the total degree of the entity a candidate triple
would newly attach.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kg import KnowledgeGraph, Triple

MASK_SLOT = -1

SECTION_TARGET = "tt"
SECTION_HEAD_RELATION = "hr"
SECTION_HEAD = "h"
SECTION_RELATION = "r"


@dataclass(frozen=True)
class SamplerConfig:
    radius: int = 2
    budget_hr: int = 5
    budget_h: int = 5
    budget_r: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if min(self.budget_hr, self.budget_h, self.budget_r) < 0:
            raise ValueError("budgets must be non-negative")
        if self.total_budget <= 0:
            raise ValueError("total budget must be positive")

    @property
    def total_budget(self) -> int:
        return self.budget_hr + self.budget_h + self.budget_r


@dataclass(frozen=True)
class Token:
    """One slot in the subgraph layout.

    Entities are deduplicated (one token regardless of occurrence count),
    every triple occurrence gets its own relation token, and the target's
    unknown tail is a single mask token. ``key`` is a layout-independent
    identity used to orient distance ties.
    """

    kind: str  # "entity" | "relation" | "mask"
    ref: int  # entity id / relation id / MASK_SLOT
    key: tuple

    @property
    def is_relation(self) -> bool:
        return self.kind == "relation"

    def sort_key(self) -> tuple:
        return self.key


@dataclass(frozen=True)
class Subgraph:
    head: int
    relation: int
    gold_tail: int | None
    triples: tuple[Triple, ...]  # target first, its tail is MASK_SLOT
    sections: tuple[str, ...]  # parallel to triples: tt/hr/h/r
    rings: tuple[int, ...]  # 0 for target and distant triples
    tokens: tuple[Token, ...]
    token_triples: tuple[tuple[int, int, int], ...]  # (head, rel, tail) token positions
    entity_positions: dict[int, int]  # entity id -> token position
    mask_position: int
    pos_entities: frozenset[int]
    neg_entities: frozenset[int]
    underfilled: bool = False

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    def token_edges(self) -> list[tuple[int, int]]:
        edges = []
        for ih, ir, it in self.token_triples:
            edges.append((ih, ir))
            edges.append((ir, it))
        return edges

    def relation_occurrence_positions(self, relation: int, sections: set[str]) -> list[int]:
        """Token positions of ``relation`` occurrences within the given sections."""
        out = []
        for (_, ir, _), section in zip(self.token_triples, self.sections):
            if section in sections and self.tokens[ir].ref == relation:
                out.append(ir)
        return out

    @property
    def target_token_positions(self) -> tuple[int, int, int]:
        """(head, relation, mask) token positions of the target triple."""
        return self.token_triples[0]


def _coerce_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def weighted_sample_without_replacement(
    items: Sequence, weights: Sequence[float], budget: int, rng
) -> list:
    """Draw up to ``budget`` distinct items, each draw proportional to the
    remaining items' weights. Zero-total pools fall back to uniform draws."""
    if budget <= 0 or not items:
        return []
    rng = _coerce_rng(rng)
    w = np.asarray(weights, dtype=np.float64).copy()
    if w.shape != (len(items),):
        raise ValueError("weights must match items")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    alive = np.ones(len(items), dtype=bool)
    picked: list[int] = []
    for _ in range(min(budget, len(items))):
        total = w.sum()
        if total > 0:
            cum = np.cumsum(w)
            idx = int(np.searchsorted(cum, rng.random() * total, side="right"))
            idx = min(idx, len(items) - 1)
            if not alive[idx]:  # fp edge against a zeroed slot
                idx = int(np.flatnonzero(alive)[0])
        else:
            choices = np.flatnonzero(alive)
            idx = int(choices[rng.integers(len(choices))])
        picked.append(idx)
        alive[idx] = False
        w[idx] = 0.0
    return [items[i] for i in picked]


def _expand_ring(
    kg: KnowledgeGraph,
    frontier: list[int],
    taken: set[Triple],
    forbidden: Triple | None,
) -> tuple[list[Triple], list[float]]:
    """Candidate triples touching the frontier (either direction, any
    relation), weighted by the opposite endpoint's total degree."""
    candidates: list[Triple] = []
    weights: list[float] = []
    seen: set[Triple] = set()
    for entity in frontier:
        for idx in kg.by_head[entity]:
            t = kg.triples[idx]
            if t in taken or t in seen or t == forbidden:
                continue
            seen.add(t)
            candidates.append(t)
            weights.append(kg.total_degree(t.tail))
        for idx in kg.by_tail[entity]:
            t = kg.triples[idx]
            if t in taken or t in seen or t == forbidden:
                continue
            seen.add(t)
            candidates.append(t)
            weights.append(kg.total_degree(t.head))
    return candidates, weights


def _sample_rings(
    kg: KnowledgeGraph,
    ring1: tuple[list[Triple], list[float]],
    head: int,
    budget: int,
    radius: int,
    rng,
    taken: set[Triple],
    forbidden: Triple | None,
) -> list[tuple[Triple, int]]:
    """Spend the budget greedily at ring 1, flowing leftovers outward."""
    sampled: list[tuple[Triple, int]] = []
    known = {head}
    candidates, weights = ring1
    for ring in range(1, radius + 1):
        if budget <= 0:
            break
        if ring > 1:
            frontier = [
                e
                for t, r in sampled
                if r == ring - 1
                for e in (t.head, t.tail)
                if e not in known
            ]
            # preserve first-reach order, dedup
            frontier = list(dict.fromkeys(frontier))
            known.update(frontier)
            if not frontier:
                break
            candidates, weights = _expand_ring(kg, frontier, taken, forbidden)
        chosen = weighted_sample_without_replacement(candidates, weights, budget, rng)
        for t in chosen:
            taken.add(t)
            sampled.append((t, ring))
        budget -= len(chosen)
    return sampled


def sample_head_relation_neighbors(
    kg: KnowledgeGraph,
    head: int,
    relation: int,
    excluded_tail: int | None,
    budget: int,
    radius: int,
    rng,
    taken: set[Triple] | None = None,
) -> list[tuple[Triple, int]]:
    """Triples sharing the query head and relation (ring 1, gold tail
    excluded), expanded ring by ring with any relation."""
    rng = _coerce_rng(rng)
    taken = set() if taken is None else taken
    forbidden = None if excluded_tail is None else Triple(head, relation, excluded_tail)
    candidates, weights = [], []
    for idx in kg.by_head[head]:
        t = kg.triples[idx]
        if t.relation == relation and t.tail != excluded_tail and t not in taken:
            candidates.append(t)
            weights.append(kg.total_degree(t.tail))
    return _sample_rings(kg, (candidates, weights), head, budget, radius, rng, taken, forbidden)


def sample_head_neighbors(
    kg: KnowledgeGraph,
    head: int,
    relation: int,
    budget: int,
    radius: int,
    rng,
    taken: set[Triple] | None = None,
    gold_tail: int | None = None,
) -> list[tuple[Triple, int]]:
    """Triples touching the query head in either direction with a different
    relation (ring 1), expanded ring by ring with any relation."""
    rng = _coerce_rng(rng)
    taken = set() if taken is None else taken
    forbidden = None if gold_tail is None else Triple(head, relation, gold_tail)
    candidates, weights = [], []
    seen: set[Triple] = set()
    for idx in kg.by_head[head]:
        t = kg.triples[idx]
        if t.relation != relation and t not in taken and t not in seen:
            seen.add(t)
            candidates.append(t)
            weights.append(kg.total_degree(t.tail))
    for idx in kg.by_tail[head]:
        t = kg.triples[idx]
        if t.relation != relation and t not in taken and t not in seen:
            seen.add(t)
            candidates.append(t)
            weights.append(kg.total_degree(t.head))
    return _sample_rings(kg, (candidates, weights), head, budget, radius, rng, taken, forbidden)


def sample_relation_distant(
    kg: KnowledgeGraph,
    head: int,
    gold_tail: int | None,
    relation: int,
    budget: int,
    rng,
    taken: set[Triple] | None = None,
) -> list[Triple]:
    """Triples with the query relation whose endpoints avoid the query head
    and the gold tail; weight is the sum of both endpoints' degrees."""
    rng = _coerce_rng(rng)
    taken = set() if taken is None else taken
    banned = {head} if gold_tail is None else {head, gold_tail}
    candidates, weights = [], []
    for idx in kg.by_relation[relation]:
        t = kg.triples[idx]
        if t.head in banned or t.tail in banned or t in taken:
            continue
        candidates.append(t)
        weights.append(kg.total_degree(t.head) + kg.total_degree(t.tail))
    chosen = weighted_sample_without_replacement(candidates, weights, budget, rng)
    taken.update(chosen)
    return chosen


def _uniform_fill(
    kg: KnowledgeGraph,
    relation: int,
    budget: int,
    rng,
    taken: set[Triple],
    forbidden: Triple | None,
) -> list[Triple]:
    """Underfill completion: uniform draws over triples whose relation
    differs from the query relation."""
    if budget <= 0:
        return []
    candidates = [
        t
        for t in kg.triples
        if t.relation != relation and t not in taken and t != forbidden
    ]
    if not candidates:
        return []
    rng = _coerce_rng(rng)
    order = rng.permutation(len(candidates))[:budget]
    chosen = [candidates[i] for i in order]
    taken.update(chosen)
    return chosen


def _build_layout(triples: Sequence[Triple]) -> tuple[list[Token], list[tuple[int, int, int]], dict[int, int], int]:
    tokens: list[Token] = []
    token_triples: list[tuple[int, int, int]] = []
    entity_positions: dict[int, int] = {}
    mask_position = -1

    def entity_token(entity: int) -> int:
        nonlocal mask_position
        if entity == MASK_SLOT:
            if mask_position < 0:
                mask_position = len(tokens)
                tokens.append(Token("mask", MASK_SLOT, (1,)))
            return mask_position
        pos = entity_positions.get(entity)
        if pos is None:
            pos = len(tokens)
            entity_positions[entity] = pos
            tokens.append(Token("entity", entity, (0, entity)))
        return pos

    for triple in triples:
        ih = entity_token(triple.head)
        ir = len(tokens)
        tokens.append(Token("relation", triple.relation, (2, *triple)))
        it = entity_token(triple.tail)
        token_triples.append((ih, ir, it))
    return tokens, token_triples, entity_positions, mask_position


def extract_subgraph(
    kg: KnowledgeGraph,
    head: int,
    relation: int,
    gold_tail: int | None,
    config: SamplerConfig,
    rng=None,
) -> Subgraph:
    """Assemble the full query subgraph: target triple first, then the three
    sampled sets, with underfilled local budgets flowing into the distant set
    and, past that, into a uniform fill. Emits a warning (and sets the
    ``underfilled`` flag) when the graph cannot supply the total budget.
    """
    if not 0 <= head < kg.num_entities:
        raise KeyError(f"entity id out of range: {head}")
    if not 0 <= relation < kg.num_relations:
        raise KeyError(f"relation id out of range: {relation}")
    rng = _coerce_rng(config.seed if rng is None else rng)

    taken: set[Triple] = set()
    forbidden = None if gold_tail is None else Triple(head, relation, gold_tail)
    hr = sample_head_relation_neighbors(
        kg, head, relation, gold_tail, config.budget_hr, config.radius, rng, taken
    )
    hn = sample_head_neighbors(
        kg, head, relation, config.budget_h, config.radius, rng, taken, gold_tail
    )
    shortfall = (config.budget_hr - len(hr)) + (config.budget_h - len(hn))
    distant = sample_relation_distant(
        kg, head, gold_tail, relation, config.budget_r + shortfall, rng, taken
    )
    missing = config.total_budget - (len(hr) + len(hn) + len(distant))
    fill = _uniform_fill(kg, relation, missing, rng, taken, forbidden)

    underfilled = len(hr) + len(hn) + len(distant) + len(fill) < config.total_budget
    if underfilled:
        warnings.warn(
            f"subgraph for ({head}, {relation}) underfilled: "
            f"{len(hr) + len(hn) + len(distant) + len(fill)} < {config.total_budget}",
            stacklevel=2,
        )

    triples = [Triple(head, relation, MASK_SLOT)]
    sections = [SECTION_TARGET]
    rings = [0]
    for t, ring in hr:
        triples.append(t)
        sections.append(SECTION_HEAD_RELATION)
        rings.append(ring)
    for t, ring in hn:
        triples.append(t)
        sections.append(SECTION_HEAD)
        rings.append(ring)
    for t in distant + fill:
        triples.append(t)
        sections.append(SECTION_RELATION)
        rings.append(0)

    tokens, token_triples, entity_positions, mask_position = _build_layout(triples)

    pos = frozenset(t.tail for t, ring in hr if ring == 1)
    neg = frozenset(entity_positions) - pos

    return Subgraph(
        head=head,
        relation=relation,
        gold_tail=gold_tail,
        triples=tuple(triples),
        sections=tuple(sections),
        rings=tuple(rings),
        tokens=tuple(tokens),
        token_triples=tuple(token_triples),
        entity_positions=entity_positions,
        mask_position=mask_position,
        pos_entities=pos,
        neg_entities=neg,
        underfilled=underfilled,
    )


def subgraph_from_parts(
    head: int,
    relation: int,
    gold_tail: int | None,
    sampled: Sequence[tuple[Triple, str, int]] = (),
    underfilled: bool = False,
) -> Subgraph:
    """Assemble a subgraph from explicit (triple, section, ring) parts.

    Bypasses sampling; used by fixtures, oracles and format tooling. The
    pos/neg partition follows the same rule as extraction."""
    triples = [Triple(head, relation, MASK_SLOT)]
    sections = [SECTION_TARGET]
    rings = [0]
    for triple, section, ring in sampled:
        triples.append(Triple(*triple))
        sections.append(section)
        rings.append(ring)
    tokens, token_triples, entity_positions, mask_position = _build_layout(triples)
    pos = frozenset(
        t.tail
        for t, section, ring in ((tr, s, rg) for tr, s, rg in sampled)
        if section == SECTION_HEAD_RELATION and ring == 1
    )
    neg = frozenset(entity_positions) - pos
    return Subgraph(
        head=head,
        relation=relation,
        gold_tail=gold_tail,
        triples=tuple(triples),
        sections=tuple(sections),
        rings=tuple(rings),
        tokens=tuple(tokens),
        token_triples=tuple(token_triples),
        entity_positions=entity_positions,
        mask_position=mask_position,
        pos_entities=pos,
        neg_entities=neg,
        underfilled=underfilled,
    )


_DUMP_TAGS = {
    SECTION_TARGET: "TT",
    SECTION_HEAD_RELATION: "HR",
    SECTION_HEAD: "H",
    SECTION_RELATION: "R",
}


def dump_subgraph(subgraph: Subgraph, kg: KnowledgeGraph) -> str:
    """Textual dump: tagged triple lines followed by POS:/NEG: entity lines."""
    lines = []
    for triple, section in zip(subgraph.triples, subgraph.sections):
        tail = "?" if triple.tail == MASK_SLOT else kg.entities.name_of(triple.tail)
        lines.append(
            "\t".join(
                (
                    _DUMP_TAGS[section],
                    kg.entities.name_of(triple.head),
                    kg.relations.name_of(triple.relation),
                    tail,
                )
            )
        )
    order = {e: p for e, p in subgraph.entity_positions.items()}
    pos = sorted(subgraph.pos_entities, key=order.get)
    neg = sorted(subgraph.neg_entities, key=order.get)
    lines.append("POS:\t" + "\t".join(kg.entities.name_of(e) for e in pos))
    lines.append("NEG:\t" + "\t".join(kg.entities.name_of(e) for e in neg))
    return "\n".join(lines)
