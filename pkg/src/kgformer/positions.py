"""Relative distance / distinction matrices over a subgraph token layout, plus bucketing.

Each triple occurrence contributes a directed token chain head -> relation ->
tail with unit hops, entities shared across occurrences. The distance matrix
holds signed minimal hop counts (positive along the edge direction), the
distinction matrix a 4-way token-kind code; pairs with no directed path in
either direction carry the UNREACHABLE sentinel and attend through a shared
learnable bias slot.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

# Sentinel for token pairs with no directed path either way. Kept far outside
# any real hop count so bucket clipping can never alias it.
UNREACHABLE = np.int64(2**31)

# Distinction codes, by (row kind, column kind).
ENTITY_ENTITY = 0
ENTITY_RELATION = 1
RELATION_ENTITY = 2
RELATION_RELATION = 3


@dataclass(frozen=True)
class BucketMap:
    """Clip-to-range bucketing of signed integers, with one extra bucket
    reserved for UNREACHABLE entries.

    Values in [lo, hi] map injectively to 0..hi-lo; out-of-range finite
    values clip onto the boundary buckets and are counted as beyond-range.
    """

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty bucket range [{self.lo}, {self.hi}]")

    @property
    def num_buckets(self) -> int:
        return self.hi - self.lo + 2

    @property
    def unreachable_bucket(self) -> int:
        return self.hi - self.lo + 1


def distance_buckets(max_exact_distance: int = 15) -> BucketMap:
    """Signed-distance buckets; 32 total for the default threshold of 15."""
    return BucketMap(-max_exact_distance, max_exact_distance)


def distinction_buckets() -> BucketMap:
    """Identity buckets for the 4 distinction codes plus the shared slot."""
    return BucketMap(0, 3)


def bucketize(matrix: np.ndarray, bucket_map: BucketMap) -> tuple[np.ndarray, int]:
    """Map a signed integer matrix to bucket indices.

    Returns the index matrix and the count of finite entries that fell
    outside [lo, hi] (the beyond-range diagnostic).
    """
    matrix = np.asarray(matrix, dtype=np.int64)
    unreachable = matrix == UNREACHABLE
    clipped = np.clip(matrix, bucket_map.lo, bucket_map.hi)
    indices = (clipped - bucket_map.lo).astype(np.int64)
    indices[unreachable] = bucket_map.unreachable_bucket
    beyond = int((((matrix < bucket_map.lo) | (matrix > bucket_map.hi)) & ~unreachable).sum())
    return indices, beyond


def _directed_hops(num_tokens: int, edges: list[tuple[int, int]]) -> np.ndarray:
    """All-pairs minimal directed hop counts by BFS; -1 where unreachable."""
    adj: list[list[int]] = [[] for _ in range(num_tokens)]
    for a, b in edges:
        adj[a].append(b)
    hops = np.full((num_tokens, num_tokens), -1, dtype=np.int64)
    for src in range(num_tokens):
        hops[src, src] = 0
        queue = deque([src])
        while queue:
            node = queue.popleft()
            d = hops[src, node] + 1
            for nxt in adj[node]:
                if hops[src, nxt] < 0:
                    hops[src, nxt] = d
                    queue.append(nxt)
    return hops


def build_distance_matrix(subgraph) -> np.ndarray:
    """Signed minimal-hop distances between all token pairs.

    Positive k when a directed path row->column of k hops exists (and is no
    longer than the reverse), negative when only the reverse direction
    reaches, UNREACHABLE when neither does. Equal two-way distances are
    oriented by the canonical token key so the matrix stays antisymmetric
    and permutation-equivariant.
    """
    n = len(subgraph.tokens)
    hops = _directed_hops(n, subgraph.token_edges())
    keys = [tok.sort_key() for tok in subgraph.tokens]
    out = np.full((n, n), UNREACHABLE, dtype=np.int64)
    np.fill_diagonal(out, 0)
    for i in range(n):
        for j in range(i + 1, n):
            fwd, back = hops[i, j], hops[j, i]
            if fwd < 0 and back < 0:
                continue
            if back < 0 or (0 <= fwd < back):
                val = fwd
            elif fwd < 0 or back < fwd:
                val = -back
            else:  # fwd == back: orient the tie by token identity
                val = fwd if keys[i] < keys[j] else -fwd
            out[i, j] = val
            out[j, i] = -val
    return out


def build_distinction_matrix(
    subgraph, distances: np.ndarray, share_unreachable: bool = True
) -> np.ndarray:
    """Token-kind code matrix; shares the distance matrix's UNREACHABLE mask
    unless ``share_unreachable`` is disabled (ablation variant)."""
    n = len(subgraph.tokens)
    if distances.shape != (n, n):
        raise ValueError(f"distance matrix shape {distances.shape} does not match {n} tokens")
    is_rel = np.array([tok.is_relation for tok in subgraph.tokens], dtype=bool)
    codes = (2 * is_rel[:, None] + is_rel[None, :]).astype(np.int64)
    if share_unreachable:
        codes[distances == UNREACHABLE] = UNREACHABLE
    return codes


def format_grid(matrix: np.ndarray, unreachable_char: str = "G") -> str:
    """Aligned integer grid with ``G`` in UNREACHABLE cells (inspect dump)."""
    cells = [
        [unreachable_char if v == UNREACHABLE else str(int(v)) for v in row]
        for row in np.asarray(matrix)
    ]
    width = max((len(c) for row in cells for c in row), default=1)
    return "\n".join(" ".join(c.rjust(width) for c in row) for row in cells)
