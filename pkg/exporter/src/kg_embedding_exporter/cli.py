"""Standalone export script."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import ExportJob, export, load_pairs_file, load_texts_file


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kg-embed-export",
        description="Precompute prompt embeddings from a causal LM into an IGTEMB1 cache",
    )
    parser.add_argument(
        "--model",
        required=True,
        help="Hugging Face model id / local path, or tiny:<seed>[:width] for the built-in",
    )
    parser.add_argument("--pairs-file", required=True, help="TSV of <entity_id>\\t<relation_id>")
    parser.add_argument(
        "--texts",
        required=True,
        action="append",
        help="catalog TSV of entity|relation\\t<id>\\t<description> (repeatable)",
    )
    parser.add_argument("--out", required=True, help="cache file to (over)write")
    args = parser.parse_args(argv)

    entity_texts: dict[int, str] = {}
    relation_texts: dict[int, str] = {}
    for path in args.texts:
        load_texts_file(path, entity_texts, relation_texts)
    job = ExportJob(
        model=args.model,
        pairs=load_pairs_file(args.pairs_file),
        entity_texts=entity_texts,
        relation_texts=relation_texts,
        out_path=Path(args.out),
    )
    export(job)
    done = len(job.pairs) - len(job.errors)
    print(f"exported {done}/{len(job.pairs)} pairs (width {job.d_llm}) to {args.out}")
    return 0 if done else 1


if __name__ == "__main__":
    sys.exit(main())
