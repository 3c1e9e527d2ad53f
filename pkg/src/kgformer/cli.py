"""Command-line surface: ingest, sample, inspect, train, eval, diagnostics, export-report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datasets
from .config import RunSettings
from .evaluation import build_filter_index, collect_diagnostics, evaluate, format_report_table
from .positions import build_distance_matrix, build_distinction_matrix, format_grid
from .sampling import dump_subgraph, extract_subgraph
from .training import load_checkpoint, train


def _parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _settings(args) -> RunSettings:
    overrides = _parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return RunSettings.load(getattr(args, "config", None), overrides)


def _resolve_query(ds, args):
    head = ds.kg.entities.id_of(args.head)
    relation = ds.kg.relations.id_of(args.relation)
    tail = ds.kg.entities.id_of(args.tail) if args.tail else None
    return head, relation, tail


def cmd_ingest(args) -> int:
    out = datasets.ingest(args.train, args.valid, args.test, args.texts or (), args.out)
    ds = datasets.load_dataset(out)
    print(
        f"ingested: {ds.kg.num_entities} entities, "
        f"{ds.kg.num_base_relations} base relations "
        f"({ds.kg.num_relations} doubled), {len(ds.kg.triples)} triples, "
        f"{len(ds.valid)} valid / {len(ds.test)} test"
    )
    return 0


def _extract_for_cli(args, with_positions: bool):
    settings = _settings(args)
    ds = datasets.load_dataset(args.data)
    head, relation, tail = _resolve_query(ds, args)
    rng = np.random.default_rng(settings.seed)
    sub = extract_subgraph(ds.kg, head, relation, tail, settings.sampler_config(), rng)
    print(dump_subgraph(sub, ds.kg))
    if with_positions:
        distances = build_distance_matrix(sub)
        codes = build_distinction_matrix(
            sub, distances, settings.encoder_config().share_unreachable_code
        )
        print("\nP (signed token distances):")
        print(format_grid(distances))
        print("\nD (token-kind codes):")
        print(format_grid(codes))
    return 0


def cmd_sample(args) -> int:
    return _extract_for_cli(args, with_positions=False)


def cmd_inspect(args) -> int:
    return _extract_for_cli(args, with_positions=True)


def cmd_train(args) -> int:
    settings = _settings(args)
    ds = datasets.load_dataset(args.data)
    model = settings.build_model(ds.kg, ds.catalog)
    filter_index = build_filter_index(ds.kg, ds.kg.triples, ds.valid, ds.test)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "settings.json").write_text(json.dumps(settings.as_dict(), indent=2))
    result = train(
        ds.kg,
        model,
        settings.sampler_config(),
        settings.train_config(),
        out_dir,
        valid_triples=ds.valid or None,
        filter_index=filter_index,
        quiet=args.quiet,
    )
    print(
        f"trained {result.steps} steps; best val MRR "
        f"{result.best_mrr if result.best_mrr is not None else 'n/a'}; "
        f"checkpoints in {out_dir}"
    )
    return 0


def cmd_eval(args) -> int:
    settings = _settings(args)
    ds = datasets.load_dataset(args.data)
    model = settings.build_model(ds.kg, ds.catalog)
    load_checkpoint(model, args.checkpoint)
    triples = ds.valid if args.split == "valid" else ds.test
    if not triples:
        raise SystemExit(f"dataset has no {args.split} split")
    filter_index = build_filter_index(ds.kg, ds.kg.triples, ds.valid, ds.test)
    report = evaluate(
        model,
        ds.kg,
        triples,
        settings.sampler_config(),
        filter_index=filter_index,
        raw=args.raw,
        seed=settings.seed,
        with_diagnostics=args.diagnostics,
    )
    print(format_report_table(report))
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2))
        print(f"report written to {args.report}")
    run_dir = Path(args.checkpoint).parent
    (run_dir / "metrics.json").write_text(json.dumps(report, indent=2))
    return 0


def cmd_diagnostics(args) -> int:
    settings = _settings(args)
    ds = datasets.load_dataset(args.data)
    sampler = settings.sampler_config()
    queries = list(ds.kg.triples)
    if args.queries and args.queries < len(queries):
        order = np.random.default_rng(settings.seed).permutation(len(queries))
        queries = [queries[i] for i in order[: args.queries]]
    from .positions import distance_buckets

    bucket_map = distance_buckets(settings["encoder.max_exact_distance"])

    def stream():
        for qi, (h, r, t) in enumerate(queries):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=(settings.seed, 5, qi)))
            yield extract_subgraph(ds.kg, h, r, t, sampler, rng)

    diag = collect_diagnostics(stream(), bucket_map)
    print(
        f"A.IT {diag.a_it:.2f}  A.IL {diag.a_il:.2f}  A.BBR {diag.a_bbr:.2f}  "
        f"over {diag.count} inputs"
    )
    if args.out:
        Path(args.out).write_text(json.dumps(diag.as_dict(), indent=2))
    return 0


def cmd_export_report(args) -> int:
    metrics = Path(args.run) / "metrics.json"
    if not metrics.exists():
        raise SystemExit(f"no metrics.json under {args.run}; run `kgformer eval` first")
    report = json.loads(metrics.read_text())
    out = Path(args.out)
    out.with_suffix(".json").write_text(json.dumps(report, indent=2))
    out.with_suffix(".txt").write_text(format_report_table(report, label=args.label) + "\n")
    print(f"wrote {out.with_suffix('.json')} and {out.with_suffix('.txt')}")
    return 0


def _add_common(parser, data=True):
    if data:
        parser.add_argument("--data", required=True, help="dataset directory from `ingest`")
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("--seed", type=int, help="override the run seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgformer",
        description="Knowledge-graph completion with a bias-augmented graph transformer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a dataset directory from split files")
    p.add_argument("--train", required=True)
    p.add_argument("--valid")
    p.add_argument("--test")
    p.add_argument("--texts", action="append", help="id<TAB>description file (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ingest)

    for name, fn, help_text in (
        ("sample", cmd_sample, "dump one sampled subgraph"),
        ("inspect", cmd_inspect, "dump one subgraph with its position matrices"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.add_argument("--head", required=True)
        p.add_argument("--relation", required=True)
        p.add_argument("--tail", help="gold tail to exclude from ring-1/distant sampling")
        p.set_defaults(fn=fn)

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="ranking evaluation of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--raw", action="store_true", help="disable known-true filtering")
    p.add_argument("--diagnostics", action="store_true")
    p.add_argument("--report", help="also write the JSON report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("diagnostics", help="input-size statistics over training queries")
    _add_common(p)
    p.add_argument("--queries", type=int, default=0, help="sample size (0 = all)")
    p.add_argument("--out", help="write the JSON block here")
    p.set_defaults(fn=cmd_diagnostics)

    p = sub.add_parser("export-report", help="format a run's stored evaluation report")
    p.add_argument("--run", required=True, help="run directory containing metrics.json")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--label", default="model")
    p.set_defaults(fn=cmd_export_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
