"""Graph transformer over subgraph token layouts.

Attention scores carry an additive bias assembled from two bucket-indexed
per-head tables: one over signed token distances, one over token-kind
distinction codes. Unreachable token pairs share a single learnable slot in
both tables so every token can still attend everywhere. Tables are shared by
all layers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .kg import TextCatalog
from .pooling import PoolingOperator
from .positions import (
    bucketize,
    build_distance_matrix,
    build_distinction_matrix,
    distance_buckets,
    distinction_buckets,
)
from .sampling import Subgraph

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 1024
    dropout: float = 0.0
    max_exact_distance: int = 15
    share_unreachable_code: bool = True  # distinction matrix reuses the distance G2G mask

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0 or self.n_layers < 0 or self.d_ff <= 0:
            raise ValueError("encoder dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def num_distance_buckets(self) -> int:
        return distance_buckets(self.max_exact_distance).num_buckets


def attention_with_bias(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    p_buckets: torch.Tensor,
    d_buckets: torch.Tensor,
    f1_table: torch.Tensor,
    f2_table: torch.Tensor,
    key_valid: torch.Tensor | None = None,
) -> torch.Tensor:
    """softmax(Q Kᵀ / sqrt(d) + (f1[P] + f2[D]) / 2) V, per head.

    q/k/v: (..., heads, T, d_head); bucket matrices: (..., T, T) indexing the
    (num_buckets, heads) tables. ``key_valid`` masks padded key positions.
    """
    d_head = q.shape[-1]
    scores = q @ k.transpose(-1, -2) / math.sqrt(d_head)
    bias = 0.5 * (f1_table[p_buckets] + f2_table[d_buckets])  # (..., T, T, heads)
    scores = scores + bias.movedim(-1, -3)
    if key_valid is not None:
        # every real layout has >= 3 valid tokens, so no row is fully masked;
        # padded query rows yield finite garbage that is never read
        scores = scores.masked_fill(~key_valid.unsqueeze(-2).unsqueeze(-3), float("-inf"))
    return torch.softmax(scores, dim=-1) @ v


class BiasTables(nn.Module):
    """Per-head bias lookups for distance and distinction buckets.

    The final bucket of each map is the unreachable slot; both lookups draw
    it from the same parameter, initialized from the farthest exact-distance
    bucket. One instance is shared by every encoder layer.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.distance_map = distance_buckets(config.max_exact_distance)
        self.distinction_map = distinction_buckets()
        n_heads = config.n_heads
        self.distance_weights = nn.Parameter(
            torch.randn(self.distance_map.num_buckets - 1, n_heads) * INIT_STD
        )
        self.distinction_weights = nn.Parameter(
            torch.randn(self.distinction_map.num_buckets - 1, n_heads) * INIT_STD
        )
        farthest = self.distance_map.num_buckets - 2
        self.unreachable_weight = nn.Parameter(self.distance_weights[farthest].detach().clone())

    def full_tables(self) -> tuple[torch.Tensor, torch.Tensor]:
        row = self.unreachable_weight.unsqueeze(0)
        return (
            torch.cat((self.distance_weights, row), dim=0),
            torch.cat((self.distinction_weights, row), dim=0),
        )


class BiasedSelfAttention(nn.Module):
    def __init__(self, config: EncoderConfig, tables: BiasTables):
        super().__init__()
        self.n_heads = config.n_heads
        self.d_head = config.d_model // config.n_heads
        self.tables = tables
        self.q_proj = nn.Linear(config.d_model, config.d_model)
        self.k_proj = nn.Linear(config.d_model, config.d_model)
        self.v_proj = nn.Linear(config.d_model, config.d_model)
        self.out_proj = nn.Linear(config.d_model, config.d_model)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.d_head).transpose(1, 2)

    def forward(
        self,
        x: torch.Tensor,
        p_buckets: torch.Tensor,
        d_buckets: torch.Tensor,
        valid: torch.Tensor | None,
    ) -> torch.Tensor:
        f1, f2 = self.tables.full_tables()
        out = attention_with_bias(
            self._split(self.q_proj(x)),
            self._split(self.k_proj(x)),
            self._split(self.v_proj(x)),
            p_buckets,
            d_buckets,
            f1,
            f2,
            key_valid=valid,
        )
        b, _, t, _ = out.shape
        return self.out_proj(out.transpose(1, 2).reshape(b, t, -1))


class EncoderLayer(nn.Module):
    def __init__(self, config: EncoderConfig, tables: BiasTables):
        super().__init__()
        self.attn = BiasedSelfAttention(config, tables)
        self.norm1 = nn.LayerNorm(config.d_model)
        self.norm2 = nn.LayerNorm(config.d_model)
        self.ff = nn.Sequential(
            nn.Linear(config.d_model, config.d_ff),
            nn.ReLU(),
            nn.Linear(config.d_ff, config.d_model),
        )
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, p_buckets, d_buckets, valid):
        x = x + self.dropout(self.attn(self.norm1(x), p_buckets, d_buckets, valid))
        x = x + self.dropout(self.ff(self.norm2(x)))
        return x


@dataclass
class EncodedBatch:
    """Padded tensors for a batch of subgraph layouts."""

    subgraphs: list[Subgraph]
    rows: torch.Tensor  # (B, T) embedding-row indices
    valid: torch.Tensor  # (B, T) bool
    p_buckets: torch.Tensor  # (B, T, T)
    d_buckets: torch.Tensor  # (B, T, T)
    beyond_range: int  # finite distance entries outside the exact bucket span

    def __len__(self) -> int:
        return len(self.subgraphs)


class GraphEncoder(nn.Module):
    """Expanded-vocabulary embeddings + a pre-norm biased-attention stack.

    The embedding table holds one row per entity, one per relation and a
    trailing mask row; occurrences share their row at distinct layout
    positions. A zero-layer stack reduces to the embedding lookup.
    """

    def __init__(self, config: EncoderConfig, num_entities: int, num_relations: int):
        super().__init__()
        self.config = config
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.embedding = nn.Embedding(num_entities + num_relations + 1, config.d_model)
        nn.init.normal_(self.embedding.weight, std=INIT_STD)
        self.tables = BiasTables(config)
        self.layers = nn.ModuleList(
            EncoderLayer(config, self.tables) for _ in range(config.n_layers)
        )

    @property
    def mask_row(self) -> int:
        return self.num_entities + self.num_relations

    def token_row(self, token) -> int:
        if token.kind == "entity":
            return token.ref
        if token.kind == "relation":
            return self.num_entities + token.ref
        return self.mask_row

    def init_from_text(
        self,
        catalog: TextCatalog,
        word_embeddings: torch.Tensor,
        text_pooler: PoolingOperator,
    ) -> None:
        """Replace entity/relation rows with pooled base-token text embeddings."""
        if word_embeddings.shape[0] < catalog.num_words:
            raise ValueError(
                f"embedding file covers {word_embeddings.shape[0]} words, "
                f"catalog needs {catalog.num_words}"
            )
        with torch.no_grad():
            for e, tokens in enumerate(catalog.entity_tokens):
                self.embedding.weight[e] = text_pooler(word_embeddings[tokens])
            for r, tokens in enumerate(catalog.relation_tokens):
                self.embedding.weight[self.num_entities + r] = text_pooler(
                    word_embeddings[tokens]
                )

    def build_batch(self, subgraphs: list[Subgraph], device=None) -> EncodedBatch:
        n = max(sub.num_tokens for sub in subgraphs)
        b = len(subgraphs)
        rows = torch.zeros(b, n, dtype=torch.long, device=device)
        valid = torch.zeros(b, n, dtype=torch.bool, device=device)
        p_idx = torch.zeros(b, n, n, dtype=torch.long, device=device)
        d_idx = torch.zeros(b, n, n, dtype=torch.long, device=device)
        beyond_total = 0
        for i, sub in enumerate(subgraphs):
            t = sub.num_tokens
            rows[i, :t] = torch.tensor([self.token_row(tok) for tok in sub.tokens])
            valid[i, :t] = True
            distances = build_distance_matrix(sub)
            codes = build_distinction_matrix(
                sub, distances, share_unreachable=self.config.share_unreachable_code
            )
            pb, beyond = bucketize(distances, self.tables.distance_map)
            db, _ = bucketize(codes, self.tables.distinction_map)
            p_idx[i, :t, :t] = torch.from_numpy(pb)
            d_idx[i, :t, :t] = torch.from_numpy(db)
            beyond_total += beyond
        return EncodedBatch(list(subgraphs), rows, valid, p_idx, d_idx, beyond_total)

    def embed(self, batch: EncodedBatch) -> torch.Tensor:
        return self.embedding(batch.rows)

    def forward(self, batch: EncodedBatch) -> torch.Tensor:
        x = self.embed(batch)
        for layer in self.layers:
            x = layer(x, batch.p_buckets, batch.d_buckets, batch.valid)
        return x

    def encode_one(self, subgraph: Subgraph) -> torch.Tensor:
        """Token states (T, d_model) for a single subgraph."""
        return self.forward(self.build_batch([subgraph]))[0, : subgraph.num_tokens]


def config_digest(**parts) -> str:
    """Stable digest over config fields and vocabulary sizes for checkpoints."""
    blob = repr(sorted(parts.items())).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
