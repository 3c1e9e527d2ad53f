"""Flat key=value run configuration with file < CLI < environment layering."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .encoder import EncoderConfig
from .fusion import CacheEmbeddingProvider, FusionConfig, StubPromptModel
from .model import CompletionModel
from .sampling import SamplerConfig
from .training import TrainConfig

SEED_ENV_VAR = "IGT_SEED"

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_bool(raw: str) -> bool:
    try:
        return _BOOL[raw.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {raw!r}") from None


# key -> (coercion, default); every SamplerConfig/TrainConfig/FusionConfig key
# is reachable from here (documented in the README).
CONFIG_KEYS: dict[str, tuple] = {
    "seed": (int, 0),
    "sampler.radius": (int, 2),
    "sampler.budget_hr": (int, 5),
    "sampler.budget_h": (int, 5),
    "sampler.budget_r": (int, 5),
    "encoder.d_model": (int, 256),
    "encoder.n_heads": (int, 4),
    "encoder.n_layers": (int, 4),
    "encoder.d_ff": (int, 1024),
    "encoder.dropout": (float, 0.0),
    "encoder.max_exact_distance": (int, 15),
    "encoder.share_unreachable_code": (_parse_bool, True),
    "encoder.text_embedding_file": (str, ""),
    "fusion.lambda": (float, 0.5),
    "fusion.relation_scope": (str, "mr_g"),
    "model.provider": (str, "none"),
    "model.embedding_cache": (str, ""),
    "model.d_hidden": (int, 0),  # 0 -> d_model
    "model.use_occurrence_relation": (_parse_bool, False),
    "provider.d_llm": (int, 64),
    "provider.n_layers": (int, 2),
    "provider.n_heads": (int, 2),
    "train.epochs": (int, 10),
    "train.batch_size": (int, 32),
    "train.grad_accumulation": (int, 4),
    "train.beta1": (float, 0.5),
    "train.lr_encoder": (float, 1e-4),
    "train.lr_provider": (float, 1e-5),
    "train.lr_other": (float, 1e-3),
    "train.warmup_encoder": (float, 0.02),
    "train.warmup_provider": (float, 0.04),
    "train.warmup_other": (float, 0.01),
    "train.weight_decay": (float, 0.01),
    "train.val_every": (int, 0),
}


def parse_config_file(path) -> dict[str, str]:
    """``key = value`` lines; blank lines and #-comments ignored."""
    values: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{line_no}: expected key = value")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


@dataclass
class RunSettings:
    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, config_file=None, overrides: dict | None = None, env=None) -> "RunSettings":
        """Defaults, then file values, then CLI overrides; IGT_SEED wins last."""
        env = os.environ if env is None else env
        raw: dict[str, str] = {}
        if config_file:
            raw.update(parse_config_file(config_file))
        raw.update({k: str(v) for k, v in (overrides or {}).items()})
        values = {}
        for key, (coerce, default) in CONFIG_KEYS.items():
            values[key] = coerce(raw.pop(key)) if key in raw else default
        if raw:
            raise ValueError(f"unknown configuration keys: {sorted(raw)}")
        if env.get(SEED_ENV_VAR):
            values["seed"] = int(env[SEED_ENV_VAR])
        return cls(values)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def sampler_config(self) -> SamplerConfig:
        v = self.values
        return SamplerConfig(
            radius=v["sampler.radius"],
            budget_hr=v["sampler.budget_hr"],
            budget_h=v["sampler.budget_h"],
            budget_r=v["sampler.budget_r"],
            seed=v["seed"],
        )

    def encoder_config(self) -> EncoderConfig:
        v = self.values
        return EncoderConfig(
            d_model=v["encoder.d_model"],
            n_heads=v["encoder.n_heads"],
            n_layers=v["encoder.n_layers"],
            d_ff=v["encoder.d_ff"],
            dropout=v["encoder.dropout"],
            max_exact_distance=v["encoder.max_exact_distance"],
            share_unreachable_code=v["encoder.share_unreachable_code"],
        )

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(
            lam=self.values["fusion.lambda"],
            relation_scope=self.values["fusion.relation_scope"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            grad_accumulation=v["train.grad_accumulation"],
            beta1=v["train.beta1"],
            lr_encoder=v["train.lr_encoder"],
            lr_provider=v["train.lr_provider"],
            lr_other=v["train.lr_other"],
            warmup_encoder=v["train.warmup_encoder"],
            warmup_provider=v["train.warmup_provider"],
            warmup_other=v["train.warmup_other"],
            weight_decay=v["train.weight_decay"],
            val_every=v["train.val_every"],
            seed=v["seed"],
        )

    def build_provider(self, catalog):
        kind = self.values["model.provider"]
        if kind == "none":
            return None
        if kind == "stub":
            return StubPromptModel(
                catalog,
                d_llm=self.values["provider.d_llm"],
                n_layers=self.values["provider.n_layers"],
                n_heads=self.values["provider.n_heads"],
            )
        if kind == "cache":
            path = self.values["model.embedding_cache"]
            if not path:
                raise ValueError("model.embedding_cache is required for the cache provider")
            return CacheEmbeddingProvider.from_file(path)
        raise ValueError(f"unknown provider kind: {kind!r}")

    def build_model(self, kg, catalog) -> CompletionModel:
        torch.manual_seed(self.seed)
        provider = self.build_provider(catalog)
        model = CompletionModel(
            self.encoder_config(),
            kg.num_entities,
            kg.num_relations,
            provider=provider,
            fusion=self.fusion_config(),
            d_hidden=self.values["model.d_hidden"] or None,
            use_occurrence_relation=self.values["model.use_occurrence_relation"],
        )
        text_file = self.values["encoder.text_embedding_file"]
        if text_file:
            import numpy as np

            from .pooling import PoolingOperator

            vectors = torch.from_numpy(np.load(text_file)).to(torch.float32)
            pooler = PoolingOperator(vectors.shape[1], self.values["encoder.d_model"])
            model.encoder.init_from_text(catalog, vectors, pooler)
        return model

    def as_dict(self) -> dict:
        return dict(self.values)
