"""Command line for the extractor: export packs, dump tables, serve."""

from __future__ import annotations

import argparse
import sys

from protodec.errors import ConfigError, DataError, ProtodecError
from protodec.store import DatasetManifest
from protodec.verbalizer import VerbalizerSpec

from .extract import ExtractionJob, ModelBundle, dump_embedding_table, extract, load_samples


def cmd_extract(args: argparse.Namespace) -> int:
    manifest = DatasetManifest.load(args.manifest)
    verbalizer = VerbalizerSpec.load(args.verbalizer) if args.verbalizer else None
    job = ExtractionJob(
        model_id=args.model,
        manifest=manifest,
        samples=load_samples(args.samples, manifest),
        output=args.out,
        split=args.split,
        verbalizer=verbalizer,
        seed=args.seed,
        device=args.device,
    )
    pack = extract(job, overwrite=args.overwrite)
    print(f"wrote {pack.num_samples} records x {pack.num_prompts} prompts "
          f"({pack.feature_dim}-dim features, {pack.scores.shape[2]} score "
          f"columns) to {args.out}")
    return 0


def cmd_dump_table(args: argparse.Namespace) -> int:
    table = dump_embedding_table(args.model, args.out)
    print(f"wrote {len(table)} x {table.vectors.shape[1]} embedding table "
          f"to {args.out}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .serve import serve

    bundle = ModelBundle.load(args.model, args.device)
    print(f"serving {args.model} on {args.host}:{args.port}")
    serve(bundle, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protodec-extract",
        description="Export masked-LM hidden states and label-word scores "
                    "into protodec feature packs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ext = sub.add_parser("extract", help="export a feature pack")
    p_ext.add_argument("--model", required=True,
                       help="model name or local path (masked LM)")
    p_ext.add_argument("--manifest", required=True,
                       help="dataset manifest YAML (classes, templates, seeds)")
    p_ext.add_argument("--samples", required=True,
                       help="TSV file: label<TAB>text per line")
    p_ext.add_argument("--out", required=True, help="output pack directory")
    p_ext.add_argument("--split", choices=["train", "eval"], default="train")
    p_ext.add_argument("--verbalizer", default=None,
                       help="verbalizer spec with expanded word sets")
    p_ext.add_argument("--seed", type=int, default=0)
    p_ext.add_argument("--device", default="cpu")
    p_ext.add_argument("--overwrite", action="store_true")
    p_ext.set_defaults(func=cmd_extract)

    p_tab = sub.add_parser("dump-table",
                           help="dump the word-prediction head as a table")
    p_tab.add_argument("--model", required=True)
    p_tab.add_argument("--out", required=True)
    p_tab.set_defaults(func=cmd_dump_table)

    p_srv = sub.add_parser("serve", help="serve the encode protocol")
    p_srv.add_argument("--model", required=True)
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8631)
    p_srv.add_argument("--device", default="cpu")
    p_srv.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ProtodecError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
