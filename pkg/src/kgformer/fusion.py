"""Coupling between the graph encoder and a prompt-embedding provider.

A provider turns the query pair into a prompt-context vector (last token,
final hidden layer) and exposes its base entity/relation input embeddings.
The graph encoder's outputs are blended into those inputs with a convex mix
(weight lambda) through a width adapter; the provider's context vector is
then prepended to every classifier input. Two providers ship: a small
trainable transformer over the instruction-style prompt layout (full
feedback loop), and a file-backed cache of precomputed vectors (mix weight
zero only, because with a nonzero mix the provider's inputs depend on live
encoder outputs).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .kg import TextCatalog
from .pooling import PoolingOperator
from .sampling import (
    SECTION_HEAD,
    SECTION_HEAD_RELATION,
    SECTION_RELATION,
    SECTION_TARGET,
    Subgraph,
)

RELATION_SCOPES = ("r", "mr_l", "mr_g")

_SCOPE_SECTIONS = {
    "mr_l": {SECTION_TARGET, SECTION_HEAD_RELATION, SECTION_HEAD},
    "mr_g": {SECTION_TARGET, SECTION_HEAD_RELATION, SECTION_HEAD, SECTION_RELATION},
}


@dataclass(frozen=True)
class FusionConfig:
    lam: float = 0.5  # convex mix weight; 0 keeps provider inputs untouched
    relation_scope: str = "mr_g"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.relation_scope not in RELATION_SCOPES:
            raise ValueError(f"relation_scope must be one of {RELATION_SCOPES}")


def pool_relation_context(
    token_states: torch.Tensor,
    subgraph: Subgraph,
    scope: str,
    pooler: PoolingOperator,
) -> torch.Tensor:
    """Context vector for the query relation.

    Scope ``r`` is the target occurrence's token state verbatim; ``mr_l``
    pools every occurrence of the query relation in the target and the two
    head-anchored sets; ``mr_g`` additionally pools occurrences from the
    distant set.
    """
    if scope == "r":
        return token_states[subgraph.target_token_positions[1]]
    if scope not in _SCOPE_SECTIONS:
        raise ValueError(f"unknown relation scope: {scope!r}")
    positions = subgraph.relation_occurrence_positions(
        subgraph.relation, _SCOPE_SECTIONS[scope]
    )
    return pooler(token_states[positions])


def fuse_entity(
    t_llm: torch.Tensor, t_enc: torch.Tensor, adapter: nn.Module, lam: float
) -> torch.Tensor:
    """(1 - lam) * provider embedding + lam * adapter(encoder embedding)."""
    if lam == 0.0:
        return t_llm
    projected = adapter(t_enc)
    if projected.shape[-1] != t_llm.shape[-1]:
        raise ValueError(
            f"adapter output width {projected.shape[-1]} != provider width {t_llm.shape[-1]}"
        )
    if lam == 1.0:
        return projected
    return (1.0 - lam) * t_llm + lam * projected


def fuse_relation(
    t_llm: torch.Tensor, t_rel_context: torch.Tensor, adapter: nn.Module, lam: float
) -> torch.Tensor:
    return fuse_entity(t_llm, t_rel_context, adapter, lam)


def concat_classifier_input(
    t_prompt: torch.Tensor | None, pooled: torch.Tensor
) -> torch.Tensor:
    """Prepend the prompt-context vector; identity when the provider is
    absent or zero-width."""
    if t_prompt is None or t_prompt.shape[-1] == 0:
        return pooled
    return torch.cat((t_prompt, pooled), dim=-1)


# -- instruction prompt layout ---------------------------------------------

PROMPT_INTRO = (
    "suppose that you are an excellent linguist studying a three word "
    "language given the following dictionary"
).split()
PROMPT_HEADER = "input type description".split()
PROMPT_HEAD_TYPE = "head entity".split()
PROMPT_REL_TYPE = ["relation"]
PROMPT_ASK = "please complete the last word of the sentence".split()
PROMPT_RESPONSE = ["response"]

TEMPLATE_WORDS = tuple(
    dict.fromkeys(
        PROMPT_INTRO + PROMPT_HEADER + PROMPT_HEAD_TYPE + PROMPT_REL_TYPE
        + PROMPT_ASK + PROMPT_RESPONSE
    )
)

MAX_DESCRIPTION_WORDS = 24


class StubPromptModel(nn.Module):
    """Small trainable causal transformer over the instruction prompt.

    Entities and relations are single indivisible prompt tokens whose input
    embeddings can be replaced by fused vectors; their dictionary lines also
    spell out the catalog description words, which the base embedding pooling
    runs over. The returned context vector is the final hidden state at the
    last prompt position.
    """

    requires_zero_lambda = False

    def __init__(
        self,
        catalog: TextCatalog,
        d_llm: int = 64,
        n_layers: int = 2,
        n_heads: int = 2,
        max_len: int = 192,
    ):
        super().__init__()
        self.d_llm = d_llm
        self.n_templ = len(TEMPLATE_WORDS)
        self.n_words = catalog.num_words
        self.n_entities = len(catalog.entity_tokens)
        self.n_relations = len(catalog.relation_tokens)
        self._word_index = {w: i for i, w in enumerate(TEMPLATE_WORDS)}
        vocab = self.n_templ + self.n_words + self.n_entities + self.n_relations + 1
        self.embedding = nn.Embedding(vocab, d_llm)
        nn.init.normal_(self.embedding.weight, std=0.02)
        self.positional = nn.Embedding(max_len, d_llm)
        nn.init.normal_(self.positional.weight, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=d_llm,
            nhead=n_heads,
            dim_feedforward=4 * d_llm,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=n_layers, enable_nested_tensor=False)
        self.surface_pool = PoolingOperator(d_llm, d_llm)
        self.max_len = max_len
        self._entity_words = [t[:MAX_DESCRIPTION_WORDS] for t in catalog.entity_tokens]
        self._relation_words = [t[:MAX_DESCRIPTION_WORDS] for t in catalog.relation_tokens]
        self._layout_cache: dict[tuple[int, int], tuple[list[int], list[int], list[int]]] = {}

    # token id helpers
    def _word(self, w: str) -> int:
        return self._word_index[w]

    def _catalog_word(self, w: int) -> int:
        return self.n_templ + w

    def _entity_token(self, e: int) -> int:
        return self.n_templ + self.n_words + e

    def _relation_token(self, r: int) -> int:
        return self.n_templ + self.n_words + self.n_entities + r

    @property
    def _qmark_token(self) -> int:
        return self.n_templ + self.n_words + self.n_entities + self.n_relations

    def prompt_layout(self, head: int, relation: int) -> tuple[list[int], list[int], list[int]]:
        """(token ids, head-slot positions, relation-slot positions)."""
        cached = self._layout_cache.get((head, relation))
        if cached is not None:
            return cached
        ids: list[int] = []
        h_slots: list[int] = []
        r_slots: list[int] = []

        def emit(token: int):
            ids.append(token)

        def emit_entity():
            h_slots.append(len(ids))
            emit(self._entity_token(head))

        def emit_relation():
            r_slots.append(len(ids))
            emit(self._relation_token(relation))

        for w in PROMPT_INTRO + PROMPT_HEADER:
            emit(self._word(w))
        emit_entity()
        for w in PROMPT_HEAD_TYPE:
            emit(self._word(w))
        for w in self._entity_words[head]:
            emit(self._catalog_word(w))
        emit_relation()
        for w in PROMPT_REL_TYPE:
            emit(self._word(w))
        for w in self._relation_words[relation]:
            emit(self._catalog_word(w))
        for w in PROMPT_ASK:
            emit(self._word(w))
        emit_entity()
        emit_relation()
        emit(self._qmark_token)
        for w in PROMPT_RESPONSE:
            emit(self._word(w))
        emit_entity()
        emit_relation()
        if len(ids) > self.max_len:
            raise ValueError(f"prompt of {len(ids)} tokens exceeds cap {self.max_len}")
        layout = (ids, h_slots, r_slots)
        self._layout_cache[(head, relation)] = layout
        return layout

    def base_entity_embeddings(self, entity_ids) -> torch.Tensor:
        """Pooled input embeddings of each entity's description words."""
        rows = []
        for e in entity_ids:
            tokens = torch.tensor(
                [self._catalog_word(w) for w in self._entity_words[int(e)]],
                dtype=torch.long,
                device=self.embedding.weight.device,
            )
            rows.append(self.surface_pool(self.embedding(tokens)))
        return torch.stack(rows)

    def base_relation_embeddings(self, relation_ids) -> torch.Tensor:
        rows = []
        for r in relation_ids:
            tokens = torch.tensor(
                [self._catalog_word(w) for w in self._relation_words[int(r)]],
                dtype=torch.long,
                device=self.embedding.weight.device,
            )
            rows.append(self.surface_pool(self.embedding(tokens)))
        return torch.stack(rows)

    def prompt_embeddings(
        self,
        heads,
        relations,
        fused_h: torch.Tensor | None = None,
        fused_r: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Final hidden state at the last prompt position, one per pair.

        ``fused_h``/``fused_r`` replace the input embeddings at every
        occurrence of the pair's entity/relation prompt tokens.
        """
        layouts = [self.prompt_layout(int(h), int(r)) for h, r in zip(heads, relations)]
        max_t = max(len(ids) for ids, _, _ in layouts)
        device = self.embedding.weight.device
        batch = torch.zeros(len(layouts), max_t, dtype=torch.long, device=device)
        pad = torch.ones(len(layouts), max_t, dtype=torch.bool, device=device)
        for i, (ids, _, _) in enumerate(layouts):
            batch[i, : len(ids)] = torch.tensor(ids, dtype=torch.long, device=device)
            pad[i, : len(ids)] = False
        x = self.embedding(batch)
        if fused_h is not None:
            x = x.clone()
            for i, (ids, h_slots, r_slots) in enumerate(layouts):
                x[i, h_slots] = fused_h[i]
                x[i, r_slots] = fused_r[i]
        x = x + self.positional.weight[:max_t]
        causal = torch.triu(torch.ones(max_t, max_t, dtype=torch.bool, device=device), diagonal=1)
        hidden = self.blocks(x, mask=causal, src_key_padding_mask=pad)
        last = torch.tensor([len(ids) - 1 for ids, _, _ in layouts], device=device)
        return hidden[torch.arange(len(layouts), device=device), last]


# -- embedding cache file ---------------------------------------------------

CACHE_MAGIC = b"IGTEMB1"
_KIND_ENTITY, _KIND_RELATION, _KIND_PAIR = 0, 1, 2
POOLING_FLAGS = {"aggregate": 0, "mean": 1}
_POOLING_NAMES = {v: k for k, v in POOLING_FLAGS.items()}


@dataclass
class EmbeddingCache:
    d_llm: int
    pooling: str
    entities: dict[int, np.ndarray] = field(default_factory=dict)
    relations: dict[int, np.ndarray] = field(default_factory=dict)
    pairs: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)


def write_embedding_cache(path, cache: EmbeddingCache) -> None:
    """Fixed-width records after a (magic, pooling flag, width, count) header."""
    records = []
    for e in sorted(cache.entities):
        records.append((_KIND_ENTITY, e, 0, cache.entities[e]))
    for r in sorted(cache.relations):
        records.append((_KIND_RELATION, r, 0, cache.relations[r]))
    for h, r in sorted(cache.pairs):
        records.append((_KIND_PAIR, h, r, cache.pairs[(h, r)]))
    with Path(path).open("wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<BQQ", POOLING_FLAGS[cache.pooling], cache.d_llm, len(records)))
        for kind, a, b, vec in records:
            vec = np.asarray(vec, dtype="<f4")
            if vec.shape != (cache.d_llm,):
                raise ValueError(f"vector shape {vec.shape} != ({cache.d_llm},)")
            fh.write(struct.pack("<BQQ", kind, a, b))
            fh.write(vec.tobytes())


def read_embedding_cache(path) -> EmbeddingCache:
    """Strict reader: validates magic, header consistency, record kinds,
    uniqueness and finiteness."""
    raw = Path(path).read_bytes()
    if raw[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise ValueError(f"not an embedding cache (bad magic {raw[:7]!r})")
    off = len(CACHE_MAGIC)
    pooling_flag, d_llm, count = struct.unpack_from("<BQQ", raw, off)
    off += 17
    if pooling_flag not in _POOLING_NAMES:
        raise ValueError(f"unknown pooling flag {pooling_flag}")
    if d_llm == 0:
        raise ValueError("cache width must be positive")
    rec_size = 17 + 4 * d_llm
    if len(raw) - off != count * rec_size:
        raise ValueError(
            f"file size mismatch: {len(raw) - off} payload bytes for {count} records of {rec_size}"
        )
    cache = EmbeddingCache(d_llm=int(d_llm), pooling=_POOLING_NAMES[pooling_flag])
    for _ in range(count):
        kind, a, b = struct.unpack_from("<BQQ", raw, off)
        off += 17
        vec = np.frombuffer(raw, dtype="<f4", count=d_llm, offset=off).copy()
        off += 4 * d_llm
        if not np.isfinite(vec).all():
            raise ValueError("non-finite vector in embedding cache")
        if kind == _KIND_ENTITY:
            target, key = cache.entities, int(a)
        elif kind == _KIND_RELATION:
            target, key = cache.relations, int(a)
        elif kind == _KIND_PAIR:
            target, key = cache.pairs, (int(a), int(b))
        else:
            raise ValueError(f"unknown record kind {kind}")
        if key in target:
            raise ValueError(f"duplicate cache record for {key}")
        target[key] = vec
    return cache


class CacheEmbeddingProvider:
    """Precomputed prompt embeddings keyed by ids; valid only with lam = 0,
    since a nonzero mix would make the provider's inputs depend on live
    encoder outputs that the cache cannot reflect."""

    requires_zero_lambda = True

    def __init__(self, cache: EmbeddingCache):
        self.cache = cache
        self.d_llm = cache.d_llm

    @classmethod
    def from_file(cls, path) -> "CacheEmbeddingProvider":
        return cls(read_embedding_cache(path))

    def _lookup(self, table: dict, key, what: str) -> np.ndarray:
        try:
            return table[key]
        except KeyError:
            raise KeyError(f"embedding cache has no {what} record for {key}") from None

    def base_entity_embeddings(self, entity_ids) -> torch.Tensor:
        vecs = [self._lookup(self.cache.entities, int(e), "entity") for e in entity_ids]
        return torch.from_numpy(np.stack(vecs))

    def base_relation_embeddings(self, relation_ids) -> torch.Tensor:
        vecs = [self._lookup(self.cache.relations, int(r), "relation") for r in relation_ids]
        return torch.from_numpy(np.stack(vecs))

    def prompt_embeddings(self, heads, relations, fused_h=None, fused_r=None) -> torch.Tensor:
        vecs = [
            self._lookup(self.cache.pairs, (int(h), int(r)), "pair")
            for h, r in zip(heads, relations)
        ]
        return torch.from_numpy(np.stack(vecs))
