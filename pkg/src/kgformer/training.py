"""Training orchestration: schedules, batching, checkpoints, determinism."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .evaluation import evaluate
from .kg import KnowledgeGraph
from .model import CompletionModel
from .sampling import SamplerConfig, extract_subgraph

CHECKPOINT_MAGIC = b"IGTCK1"

GROUP_NAMES = ("encoder", "provider", "other")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    grad_accumulation: int = 4
    beta1: float = 0.5
    lr_encoder: float = 1e-4
    lr_provider: float = 1e-5
    lr_other: float = 1e-3
    warmup_encoder: float = 0.02
    warmup_provider: float = 0.04
    warmup_other: float = 0.01
    weight_decay: float = 0.01
    val_every: int = 0  # epochs between validations; 0 = only at the end
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.grad_accumulation < 1:
            raise ValueError("batch size and accumulation must be positive")
        for name in GROUP_NAMES:
            if getattr(self, f"lr_{name}") <= 0:
                raise ValueError("learning rates must be positive")
            if not 0.0 <= getattr(self, f"warmup_{name}") < 1.0:
                raise ValueError("warm-up fractions must lie in [0, 1)")

    def lr_for(self, group: str) -> float:
        return getattr(self, f"lr_{group}")

    def warmup_for(self, group: str) -> float:
        return getattr(self, f"warmup_{group}")


def lr_at(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear ramp from 0 over the warm-up span, then linear decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError("step outside [0, total_steps]")
    if total_steps == 0:
        return 0.0
    warmup_steps = warmup_fraction * total_steps
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps == warmup_steps:
        return base_lr
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


# -- checkpoint container ----------------------------------------------------

def save_checkpoint(model: CompletionModel, path, extra: dict | None = None) -> None:
    """Named float32 little-endian parameter tensors behind a JSON header."""
    names, blobs, metas = [], [], []
    for name, param in model.named_parameters():
        arr = param.detach().cpu().to(torch.float32).numpy().astype("<f4")
        names.append(name)
        blobs.append(arr.tobytes())
        metas.append({"name": name, "shape": list(arr.shape)})
    header = json.dumps(
        {"digest": model.digest(), "params": metas, "extra": extra or {}},
        sort_keys=True,
    ).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(model: CompletionModel, path) -> dict:
    """Load parameters into ``model``; rejects config-digest mismatches."""
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint (bad magic {raw[:6]!r})")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    if header["digest"] != model.digest():
        raise ValueError(
            f"checkpoint digest {header['digest']} does not match model {model.digest()}"
        )
    params = dict(model.named_parameters())
    if set(params) != {m["name"] for m in header["params"]}:
        raise ValueError("checkpoint parameter names do not match the model")
    with torch.no_grad():
        for meta in header["params"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
            target = params[meta["name"]]
            if tuple(target.shape) != shape:
                raise ValueError(f"shape mismatch for {meta['name']}")
            target.copy_(torch.from_numpy(arr.copy()).to(target.dtype))
    return header.get("extra", {})


class NonFiniteLossError(RuntimeError):
    pass


def _query_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, epoch, index)))


@dataclass
class TrainResult:
    best_path: str
    last_path: str
    log_path: str
    best_mrr: float | None
    steps: int
    history: list = field(default_factory=list)


def train(
    kg: KnowledgeGraph,
    model: CompletionModel,
    sampler_config: SamplerConfig,
    train_config: TrainConfig,
    out_dir,
    valid_triples=None,
    filter_index=None,
    eval_seed: int = 1,
    quiet: bool = True,
) -> TrainResult:
    """Train on every triple of the (doubled) graph as a tail query.

    Subgraphs are resampled every epoch from per-(epoch, query) derived
    seeds, so runs are bit-reproducible for a fixed config. AdamW drives
    three parameter groups on their own linear warm-up/decay schedules.
    Aborts with a step dump if any loss turns non-finite.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"

    cfg = train_config
    queries = list(kg.triples)
    micro = cfg.batch_size
    window = micro * cfg.grad_accumulation
    steps_per_epoch = max(1, math.ceil(len(queries) / window))
    total_steps = cfg.epochs * steps_per_epoch

    groups = model.parameter_groups()
    group_names = [name for name in GROUP_NAMES if groups[name]]
    optimizer = torch.optim.AdamW(
        [
            {"params": groups[name], "lr": cfg.lr_for(name), "weight_decay": cfg.weight_decay}
            for name in group_names
        ]
    )

    history: list[dict] = []
    best_mrr: float | None = None
    step = 0
    save_checkpoint(model, last_path, {"step": 0, "epoch": 0})
    save_checkpoint(model, best_path, {"step": 0, "epoch": 0})

    def run_validation(epoch: int) -> None:
        nonlocal best_mrr
        if valid_triples is None:
            return
        report = evaluate(
            model,
            kg,
            valid_triples,
            sampler_config,
            filter_index=filter_index,
            seed=eval_seed,
        )
        model.train()
        history.append({"epoch": epoch, "val_mrr": report["mrr"], "val_hits": report["hits"]})
        if best_mrr is None or report["mrr"] > best_mrr:
            best_mrr = report["mrr"]
            save_checkpoint(model, best_path, {"step": step, "epoch": epoch, "mrr": best_mrr})
        if not quiet:
            print(f"epoch {epoch}: val MRR {report['mrr']:.4f}")

    model.train()
    with log_path.open("w", encoding="utf-8") as log:
        for epoch in range(cfg.epochs):
            order = np.random.default_rng(
                np.random.SeedSequence(entropy=(cfg.seed, 11, epoch))
            ).permutation(len(queries))
            for start in range(0, len(queries), window):
                window_idx = order[start : start + window]
                optimizer.zero_grad(set_to_none=True)
                agg = {
                    "l_ce": 0.0, "l_pos": 0.0, "l_neg": 0.0, "beta2": 0.0,
                    "total": 0.0, "pos_count": 0.0, "neg_count": 0.0,
                }
                n_items = len(window_idx)
                for mb_start in range(0, n_items, micro):
                    mb_idx = window_idx[mb_start : mb_start + micro]
                    subs = [
                        extract_subgraph(
                            kg,
                            queries[qi].head,
                            queries[qi].relation,
                            queries[qi].tail,
                            sampler_config,
                            _query_rng(cfg.seed, epoch, int(qi)),
                        )
                        for qi in mb_idx
                    ]
                    total, breakdowns = model.loss_batch(subs, cfg.beta1)
                    if not torch.isfinite(total):
                        dump = {
                            "step": step,
                            "epoch": epoch,
                            "breakdowns": [b.as_dict() for b in breakdowns],
                            "param_norms": {
                                n: float(p.detach().norm()) for n, p in model.named_parameters()
                            },
                        }
                        dump_path = out_dir / "abort_dump.json"
                        dump_path.write_text(json.dumps(dump, indent=2))
                        raise NonFiniteLossError(f"non-finite loss at step {step}; see {dump_path}")
                    (total * (len(subs) / n_items)).backward()
                    for b in breakdowns:
                        for key in agg:
                            agg[key] += getattr(b, key) / n_items
                lrs = {}
                for gi, name in enumerate(group_names):
                    lr = lr_at(step, total_steps, cfg.lr_for(name), cfg.warmup_for(name))
                    optimizer.param_groups[gi]["lr"] = lr
                    lrs[name] = lr
                optimizer.step()
                step += 1
                log.write(json.dumps({"step": step, **agg, "lr": lrs}) + "\n")
            if cfg.val_every and (epoch + 1) % cfg.val_every == 0:
                run_validation(epoch + 1)
        if cfg.epochs and (not cfg.val_every or cfg.epochs % cfg.val_every):
            run_validation(cfg.epochs)
    save_checkpoint(model, last_path, {"step": step, "epoch": cfg.epochs})
    if valid_triples is None:
        save_checkpoint(model, best_path, {"step": step, "epoch": cfg.epochs})
    return TrainResult(
        best_path=str(best_path),
        last_path=str(last_path),
        log_path=str(log_path),
        best_mrr=best_mrr,
        steps=step,
        history=history,
    )
