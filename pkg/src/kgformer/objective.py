"""Multi-classification objective over a query subgraph.

The target triple's pooled representation is classified against every entity
in the graph. Subgraph entities additionally contribute auxiliary terms: the
tails of ring-1 same-head-same-relation triples are pushed up (positive set),
every other subgraph entity including the query head is pushed down (negative
set), with the negative weight capped adaptively so it can never dominate.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
import torch.nn.functional as F
from torch import nn

from .pooling import PoolingOperator
from .sampling import Subgraph


class ClassifierHead(nn.Module):
    """MLP from a pooled representation to one logit per entity."""

    def __init__(self, d_in: int, d_hidden: int, num_entities: int):
        super().__init__()
        self.d_in = d_in
        self.num_entities = num_entities
        self.net = nn.Sequential(
            nn.Linear(d_in, d_hidden),
            nn.ReLU(),
            nn.Linear(d_hidden, num_entities),
        )

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        if pooled.shape[-1] != self.d_in:
            raise ValueError(f"classifier expects width {self.d_in}, got {pooled.shape[-1]}")
        return self.net(pooled)


def pool_triple_repr(
    t_head: torch.Tensor,
    t_rel: torch.Tensor,
    t_cand: torch.Tensor,
    pooler: PoolingOperator,
) -> torch.Tensor:
    """Pooled representation of one (head, relation, candidate) token triple."""
    return pooler(torch.stack((t_head, t_rel, t_cand), dim=-2))


def classify(pooled: torch.Tensor, head: ClassifierHead) -> torch.Tensor:
    """Probability vector over all entities."""
    return torch.softmax(head(pooled), dim=-1)


def loss_ce(probabilities: torch.Tensor, gold: int) -> torch.Tensor:
    """Negative log-likelihood of the gold entity."""
    n = probabilities.shape[-1]
    if not 0 <= gold < n:
        raise KeyError(f"gold entity {gold} outside the {n}-way classifier")
    return -torch.log(probabilities[..., gold])


def adaptive_beta2(l_pos: float, l_neg: float) -> float:
    """Adaptive cap on the subtracted negative term.

    1 while the positive loss dominates, otherwise half the pos/neg ratio,
    so the subtracted quantity saturates at 0.5 * l_pos. Defined as 1 when
    both losses are zero; treated as a constant (no gradient flows through).
    """
    if l_pos < 0 or l_neg < 0:
        raise ValueError("losses must be non-negative")
    if l_pos > l_neg:
        return 1.0
    if l_neg == 0.0:
        return 1.0
    return 0.5 * l_pos / l_neg


@dataclass(frozen=True)
class LossBreakdown:
    l_ce: float
    l_pos: float
    l_neg: float
    beta2: float
    total: float
    pos_count: int
    neg_count: int

    def as_dict(self) -> dict:
        return asdict(self)


def total_loss(l_ce: float, l_pos: float, l_neg: float, beta1: float,
               pos_count: int = 0, neg_count: int = 0) -> LossBreakdown:
    """Combine the components: total = l_ce + beta1 * (l_pos - beta2 * l_neg)."""
    beta2 = adaptive_beta2(l_pos, l_neg)
    total = l_ce + beta1 * (l_pos - beta2 * l_neg)
    return LossBreakdown(l_ce, l_pos, l_neg, beta2, total, pos_count, neg_count)


def _candidate_relation_position(subgraph: Subgraph, entity: int) -> int:
    """Occurrence-specific relation token for a candidate entity: the first
    subgraph triple carrying it (as tail, else head); target slot otherwise."""
    for (_, ir, _), triple in zip(subgraph.token_triples[1:], subgraph.triples[1:]):
        if triple.tail == entity:
            return ir
    for (_, ir, _), triple in zip(subgraph.token_triples[1:], subgraph.triples[1:]):
        if triple.head == entity:
            return ir
    return subgraph.target_token_positions[1]


def candidate_loss(
    token_states: torch.Tensor,
    subgraph: Subgraph,
    entities,
    triple_pooler: PoolingOperator,
    head: ClassifierHead,
    prefix: torch.Tensor | None = None,
    use_occurrence_relation: bool = False,
) -> torch.Tensor:
    """Mean classification loss over constructed (head, relation, entity)
    inputs, one per candidate entity; zero for an empty candidate set."""
    entities = sorted(entities)
    if not entities:
        return token_states.new_zeros(())
    ih, ir, _ = subgraph.target_token_positions
    losses = []
    for entity in entities:
        rel_pos = (
            _candidate_relation_position(subgraph, entity) if use_occurrence_relation else ir
        )
        pooled = pool_triple_repr(
            token_states[ih],
            token_states[rel_pos],
            token_states[subgraph.entity_positions[entity]],
            triple_pooler,
        )
        if prefix is not None and prefix.numel():
            pooled = torch.cat((prefix, pooled), dim=-1)
        logits = head(pooled)
        losses.append(F.cross_entropy(logits, logits.new_tensor(entity, dtype=torch.long)))
    return torch.stack(losses).mean()


def loss_pos(token_states, subgraph, triple_pooler, head, prefix=None,
             use_occurrence_relation=False) -> torch.Tensor:
    return candidate_loss(
        token_states, subgraph, subgraph.pos_entities, triple_pooler, head,
        prefix, use_occurrence_relation,
    )


def loss_neg(token_states, subgraph, triple_pooler, head, prefix=None,
             use_occurrence_relation=False) -> torch.Tensor:
    return candidate_loss(
        token_states, subgraph, subgraph.neg_entities, triple_pooler, head,
        prefix, use_occurrence_relation,
    )


def subgraph_loss(
    token_states: torch.Tensor,
    subgraph: Subgraph,
    triple_pooler: PoolingOperator,
    head: ClassifierHead,
    beta1: float,
    prefix: torch.Tensor | None = None,
    use_occurrence_relation: bool = False,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Full objective for one subgraph; returns the differentiable total and
    a detached breakdown. The adaptive weight is a constant per step."""
    if subgraph.gold_tail is None:
        raise ValueError("training loss requires the gold tail")
    ih, ir, imask = subgraph.target_token_positions
    pooled = pool_triple_repr(
        token_states[ih], token_states[ir], token_states[imask], triple_pooler
    )
    if prefix is not None and prefix.numel():
        pooled = torch.cat((prefix, pooled), dim=-1)
    logits = head(pooled)
    l_ce = F.cross_entropy(logits, logits.new_tensor(subgraph.gold_tail, dtype=torch.long))
    l_pos = loss_pos(token_states, subgraph, triple_pooler, head, prefix, use_occurrence_relation)
    l_neg = loss_neg(token_states, subgraph, triple_pooler, head, prefix, use_occurrence_relation)
    beta2 = adaptive_beta2(l_pos.detach().item(), l_neg.detach().item())
    total = l_ce + beta1 * (l_pos - beta2 * l_neg)
    breakdown = LossBreakdown(
        l_ce.detach().item(), l_pos.detach().item(), l_neg.detach().item(),
        beta2, total.detach().item(),
        len(subgraph.pos_entities), len(subgraph.neg_entities),
    )
    return total, breakdown
