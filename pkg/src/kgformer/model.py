"""End-to-end completion model: encoder, poolers, fusion, classifier."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import EncoderConfig, GraphEncoder, config_digest
from .fusion import FusionConfig, fuse_entity, fuse_relation, pool_relation_context
from .objective import ClassifierHead, LossBreakdown, adaptive_beta2
from .pooling import PoolingOperator
from .sampling import Subgraph


class CompletionModel(nn.Module):
    """Scores (head, relation, ?) queries against all entities.

    One encoder pass per subgraph serves the target and every pos/neg
    construction; the optional provider contributes a prompt-context prefix
    that widens the classifier input.
    """

    def __init__(
        self,
        encoder_config: EncoderConfig,
        num_entities: int,
        num_relations: int,
        provider=None,
        fusion: FusionConfig | None = None,
        d_hidden: int | None = None,
        use_occurrence_relation: bool = False,
    ):
        super().__init__()
        fusion = fusion or FusionConfig()
        if provider is not None and provider.requires_zero_lambda and fusion.lam != 0.0:
            raise ValueError("this provider only supports lambda = 0")
        self.fusion = fusion
        self.use_occurrence_relation = use_occurrence_relation
        self.encoder = GraphEncoder(encoder_config, num_entities, num_relations)
        d = encoder_config.d_model
        self.triple_pooler = PoolingOperator(d, d)
        self.relation_pooler = PoolingOperator(d, d)
        self.provider = provider  # registered as submodule when trainable
        self.d_llm = provider.d_llm if provider is not None else 0
        self.adapter = nn.Linear(d, self.d_llm) if self.d_llm else None
        self.head = ClassifierHead(d + self.d_llm, d_hidden or d, num_entities)

    @property
    def num_entities(self) -> int:
        return self.encoder.num_entities

    def digest(self) -> str:
        cfg = self.encoder.config
        return config_digest(
            d_model=cfg.d_model,
            n_heads=cfg.n_heads,
            n_layers=cfg.n_layers,
            d_ff=cfg.d_ff,
            max_exact_distance=cfg.max_exact_distance,
            share_unreachable_code=cfg.share_unreachable_code,
            num_entities=self.encoder.num_entities,
            num_relations=self.encoder.num_relations,
            d_llm=self.d_llm,
            relation_scope=self.fusion.relation_scope,
            use_occurrence_relation=self.use_occurrence_relation,
            d_hidden=self.head.net[0].out_features,
        )

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """Disjoint, exhaustive split: encoder / provider / other."""
        groups = {
            "encoder": list(self.encoder.parameters()),
            "provider": [],
            "other": list(self.triple_pooler.parameters())
            + list(self.relation_pooler.parameters())
            + list(self.head.parameters()),
        }
        if isinstance(self.provider, nn.Module):
            groups["provider"] = list(self.provider.parameters())
        if self.adapter is not None:
            groups["other"] += list(self.adapter.parameters())
        return groups

    # -- forward pieces ----------------------------------------------------

    def _prompt_prefix(self, subgraphs: list[Subgraph], token_states: torch.Tensor
                       ) -> torch.Tensor | None:
        if self.provider is None or self.d_llm == 0:
            return None
        heads = [sub.head for sub in subgraphs]
        relations = [sub.relation for sub in subgraphs]
        base_h = self.provider.base_entity_embeddings(heads)
        base_r = self.provider.base_relation_embeddings(relations)
        if self.fusion.lam == 0.0:
            # slots receive the base embeddings verbatim (exact mix endpoint)
            return self.provider.prompt_embeddings(heads, relations, base_h, base_r)
        enc_h = torch.stack(
            [token_states[i, sub.target_token_positions[0]] for i, sub in enumerate(subgraphs)]
        )
        rel_ctx = torch.stack(
            [
                pool_relation_context(
                    token_states[i], sub, self.fusion.relation_scope, self.relation_pooler
                )
                for i, sub in enumerate(subgraphs)
            ]
        )
        fused_h = fuse_entity(base_h, enc_h, self.adapter, self.fusion.lam)
        fused_r = fuse_relation(base_r, rel_ctx, self.adapter, self.fusion.lam)
        return self.provider.prompt_embeddings(heads, relations, fused_h, fused_r)

    def _target_pooled(self, subgraphs, token_states) -> torch.Tensor:
        idx = torch.tensor(
            [sub.target_token_positions for sub in subgraphs],
            dtype=torch.long,
            device=token_states.device,
        )  # (B, 3)
        gathered = token_states[
            torch.arange(len(subgraphs)).unsqueeze(-1), idx
        ]  # (B, 3, d)
        return self.triple_pooler(gathered)

    def forward_batch(self, subgraphs: list[Subgraph]):
        batch = self.encoder.build_batch(subgraphs)
        token_states = self.encoder(batch)
        prefix = self._prompt_prefix(subgraphs, token_states)
        pooled = self._target_pooled(subgraphs, token_states)
        if prefix is not None:
            pooled = torch.cat((prefix, pooled), dim=-1)
        logits = self.head(pooled)
        return logits, token_states, prefix

    def score(self, subgraphs: list[Subgraph]) -> torch.Tensor:
        """Probability rows over all entities, one per query."""
        logits, _, _ = self.forward_batch(subgraphs)
        return torch.softmax(logits, dim=-1)

    def _candidate_relation_position(self, sub: Subgraph, entity: int) -> int:
        if not self.use_occurrence_relation:
            return sub.target_token_positions[1]
        from .objective import _candidate_relation_position

        return _candidate_relation_position(sub, entity)

    def loss_batch(
        self,
        subgraphs: list[Subgraph],
        beta1: float,
        beta2_override=None,
    ) -> tuple[torch.Tensor, list[LossBreakdown]]:
        """Mean total loss over the batch plus per-item breakdowns.

        ``beta2_override`` pins the adaptive weights to given constants
        (finite-difference checks hold them at their forward values)."""
        logits, token_states, prefix = self.forward_batch(subgraphs)
        device = token_states.device
        golds = torch.tensor([sub.gold_tail for sub in subgraphs], device=device)
        if (golds < 0).any():
            raise ValueError("training loss requires gold tails")
        l_ce = F.cross_entropy(logits, golds, reduction="none")

        item_idx: list[int] = []
        cand_entity: list[int] = []
        cand_tok: list[int] = []
        rel_tok: list[int] = []
        head_tok: list[int] = []
        is_pos: list[bool] = []
        for i, sub in enumerate(subgraphs):
            ih, ir, _ = sub.target_token_positions
            for entity in sorted(sub.pos_entities):
                item_idx.append(i)
                cand_entity.append(entity)
                cand_tok.append(sub.entity_positions[entity])
                rel_tok.append(self._candidate_relation_position(sub, entity))
                head_tok.append(ih)
                is_pos.append(True)
            for entity in sorted(sub.neg_entities):
                item_idx.append(i)
                cand_entity.append(entity)
                cand_tok.append(sub.entity_positions[entity])
                rel_tok.append(self._candidate_relation_position(sub, entity))
                head_tok.append(ih)
                is_pos.append(False)

        b = len(subgraphs)
        l_pos = torch.zeros(b, device=device, dtype=l_ce.dtype)
        l_neg = torch.zeros_like(l_pos)
        if item_idx:
            items = torch.tensor(item_idx, device=device)
            stacked = torch.stack(
                (
                    token_states[items, torch.tensor(head_tok, device=device)],
                    token_states[items, torch.tensor(rel_tok, device=device)],
                    token_states[items, torch.tensor(cand_tok, device=device)],
                ),
                dim=-2,
            )  # (M, 3, d)
            pooled = self.triple_pooler(stacked)
            if prefix is not None:
                pooled = torch.cat((prefix[items], pooled), dim=-1)
            cand_logits = self.head(pooled)
            ce = F.cross_entropy(
                cand_logits, torch.tensor(cand_entity, device=device), reduction="none"
            )
            pos_mask = torch.tensor(is_pos, device=device)
            ones = torch.ones_like(ce)
            pos_count = torch.zeros(b, device=device, dtype=l_ce.dtype).index_add_(
                0, items[pos_mask], ones[pos_mask]
            )
            neg_count = torch.zeros_like(pos_count).index_add_(
                0, items[~pos_mask], ones[~pos_mask]
            )
            l_pos.index_add_(0, items[pos_mask], ce[pos_mask])
            l_neg.index_add_(0, items[~pos_mask], ce[~pos_mask])
            l_pos = l_pos / pos_count.clamp_min(1.0)
            l_neg = l_neg / neg_count.clamp_min(1.0)

        if beta2_override is None:
            beta2_values = [
                adaptive_beta2(p, n)
                for p, n in zip(l_pos.detach().tolist(), l_neg.detach().tolist())
            ]
        else:
            beta2_values = list(beta2_override)
        beta2 = torch.tensor(beta2_values, device=device, dtype=l_ce.dtype)
        totals = l_ce + beta1 * (l_pos - beta2 * l_neg)
        ce_v, pos_v, neg_v, tot_v = (
            t.detach().tolist() for t in (l_ce, l_pos, l_neg, totals)
        )
        breakdowns = [
            LossBreakdown(
                ce_v[i],
                pos_v[i],
                neg_v[i],
                float(beta2[i]),
                tot_v[i],
                len(subgraphs[i].pos_entities),
                len(subgraphs[i].neg_entities),
            )
            for i in range(b)
        ]
        return totals.mean(), breakdowns
