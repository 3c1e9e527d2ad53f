"""Order-free sequence compression: mean/max/min/std aggregates + projection."""

from __future__ import annotations

import torch
from torch import nn


class PoolingOperator(nn.Module):
    """Compress a token-vector sequence to one vector.

    Concatenates the four order-free aggregates (mean, max, min, population
    std) along the feature axis and applies a learned linear projection from
    4*d_in to d_out. Sequences must be non-empty.
    """

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.project = nn.Linear(4 * d_in, d_out)

    def aggregate(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """(..., L, d_in) -> (..., 4*d_in) without the projection."""
        if x.shape[-2] == 0:
            raise ValueError("cannot pool an empty sequence")
        if mask is None:
            mean = x.mean(dim=-2)
            mx = x.amax(dim=-2)
            mn = x.amin(dim=-2)
            sq = (x * x).mean(dim=-2)
        else:
            mask = mask.unsqueeze(-1)
            count = mask.sum(dim=-2)
            if (count == 0).any():
                raise ValueError("cannot pool an empty sequence")
            mean = (x * mask).sum(dim=-2) / count
            neg_inf = torch.finfo(x.dtype).min
            mx = x.masked_fill(~mask, neg_inf).amax(dim=-2)
            mn = x.masked_fill(~mask, -neg_inf).amin(dim=-2)
            sq = (x * x * mask).sum(dim=-2) / count
        var = (sq - mean * mean).clamp_min(0.0)
        # exact 0 for zero spread, finite gradient elsewhere
        std = torch.where(var > 0, var.clamp_min(1e-24).sqrt(), torch.zeros_like(var))
        return torch.cat((mean, mx, mn, std), dim=-1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        return self.project(self.aggregate(x, mask))
