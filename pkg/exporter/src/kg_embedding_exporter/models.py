"""Causal-LM backends: Hugging Face checkpoints, or a deterministic built-in
tiny transformer for fully offline runs (selector format `tiny:<seed>[:width]`)."""

from __future__ import annotations

import re

import torch
from torch import nn


class ModelBackend:
    """Uniform surface over backends.

    ``encode(pieces)`` tokenizes each prompt piece separately (no special
    tokens) so per-piece token spans are exact, then returns the per-token
    input embeddings, the final-layer hidden states, and the piece spans.
    """

    hidden_size: int

    def encode(self, pieces):  # -> (input_embeddings, hidden_states, spans)
        raise NotImplementedError


class TinyCausalBackend(ModelBackend):
    """Randomly initialized word-level causal transformer.

    Everything is derived deterministically from the seed and the sorted
    vocabulary of the texts it will see, so re-exports are byte-identical.
    """

    def __init__(self, seed: int, hidden_size: int = 32, n_layers: int = 2, n_heads: int = 2,
                 vocab_words=()):
        self.seed = seed
        self.hidden_size = hidden_size
        words = sorted(set(vocab_words))
        self.vocab = {w: i + 1 for i, w in enumerate(words)}  # 0 = unknown
        gen = torch.Generator().manual_seed(seed)
        d = hidden_size
        self.embedding = torch.randn(len(self.vocab) + 1, d, generator=gen) * 0.02
        self.positional = torch.randn(512, d, generator=gen) * 0.02
        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=n_heads, dim_feedforward=4 * d, dropout=0.0,
            batch_first=True, norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=n_layers, enable_nested_tensor=False)
        with torch.no_grad():
            for p in self.blocks.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.02)
        self.blocks.eval()

    @staticmethod
    def words_of(text: str) -> list[str]:
        return re.findall(r"\S+", text.lower()) or ["<blank>"]

    def _ids(self, text: str) -> list[int]:
        return [self.vocab.get(w, 0) for w in self.words_of(text)]

    def encode(self, pieces):
        spans = []
        ids: list[int] = []
        for piece in pieces:
            start = len(ids)
            ids.extend(self._ids(piece))
            spans.append((start, len(ids)))
        if len(ids) > self.positional.shape[0]:
            raise ValueError(f"prompt of {len(ids)} tokens exceeds the 512-token cap")
        tokens = torch.tensor(ids, dtype=torch.long)
        inputs = self.embedding[tokens]
        x = (inputs + self.positional[: len(ids)]).unsqueeze(0)
        causal = torch.triu(torch.ones(len(ids), len(ids), dtype=torch.bool), diagonal=1)
        with torch.no_grad():
            hidden = self.blocks(x, mask=causal)[0]
        return inputs, hidden, spans


class HuggingFaceBackend(ModelBackend):
    """Any AutoModelForCausalLM checkpoint (hub id or local path)."""

    def __init__(self, model_id: str):
        try:
            from transformers import AutoModelForCausalLM, AutoTokenizer
        except ImportError as exc:  # pragma: no cover
            raise RuntimeError("install transformers to use Hugging Face models") from exc
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModelForCausalLM.from_pretrained(
            model_id, torch_dtype=torch.float32
        ).eval()
        self.hidden_size = int(self.model.config.hidden_size)

    def encode(self, pieces):
        spans = []
        ids: list[int] = []
        for piece in pieces:
            start = len(ids)
            ids.extend(self.tokenizer.encode(piece, add_special_tokens=False))
            spans.append((start, len(ids)))
        tokens = torch.tensor([ids], dtype=torch.long)
        with torch.no_grad():
            inputs = self.model.get_input_embeddings()(tokens)[0]
            out = self.model(tokens, output_hidden_states=True)
        return inputs, out.hidden_states[-1][0], spans


def load_backend(model_id: str, vocab_words=()) -> ModelBackend:
    if model_id.startswith("tiny:"):
        parts = model_id.split(":")
        seed = int(parts[1])
        width = int(parts[2]) if len(parts) > 2 else 32
        return TinyCausalBackend(seed, hidden_size=width, vocab_words=vocab_words)
    return HuggingFaceBackend(model_id)
