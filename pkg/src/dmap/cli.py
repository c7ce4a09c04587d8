"""Command-line entry point: ingest-validate, build, inspect, query, eval.

Commands compose via on-disk artifacts only: a bundle directory in, a
build directory (``dmap.json`` + index files) out, answers and reports as
JSON.  ``--mock --seed S`` runs everything offline and deterministically.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import builder, bundle, evalharness, gateway, index, qa, retrieval
from .model import deserialize_map, serialize_map, validate_map

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_BACKEND = 2
EXIT_USAGE = 64

DEFAULT_TEXT_DIM = 16
DEFAULT_VISUAL_DIM = 16


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_backend_flags(p):
    p.add_argument("--mock", action="store_true",
                   help="use the deterministic in-process backends")
    p.add_argument("--seed", type=int, default=0, help="mock backend seed")
    p.add_argument("--endpoint", default=os.environ.get("DMAP_ENDPOINT", ""),
                   help="chat-completions endpoint (remote mode)")
    p.add_argument("--model", default="gpt-4o", help="remote model name")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmap", description="structural document map pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-validate", help="validate a bundle directory")
    p.add_argument("bundle")

    p = sub.add_parser("build", help="build the map and indexes from a bundle")
    p.add_argument("bundle")
    p.add_argument("-o", "--output", required=True)
    _add_backend_flags(p)

    p = sub.add_parser("inspect", help="print the outline and summary tree")
    p.add_argument("directory")

    p = sub.add_parser("query", help="answer one question over a built directory")
    p.add_argument("directory")
    p.add_argument("-q", "--question", required=True)
    p.add_argument("--topk", type=int, default=4)
    p.add_argument("--max-rounds", type=int, default=2)
    _add_backend_flags(p)

    p = sub.add_parser("eval", help="run the evaluation harness")
    p.add_argument("directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--topk", type=int, default=4)
    p.add_argument("--no-text", action="store_true")
    p.add_argument("--no-visual", action="store_true")
    p.add_argument("--no-structured", action="store_true")
    p.add_argument("--report", default=None, help="report path (default: <dir>/report.json)")
    _add_backend_flags(p)
    return parser


def _make_backends(args):
    if args.mock:
        llm = gateway.MockBackend(seed=args.seed)
        text_backend = index.MockEmbedder(dim=DEFAULT_TEXT_DIM, seed=args.seed)
        vis_backend = index.MockEmbedder(dim=DEFAULT_VISUAL_DIM, seed=args.seed + 1)
        return llm, text_backend, vis_backend
    config = gateway.BackendConfig(kind="remote", endpoint=args.endpoint,
                                   model=args.model)
    llm = gateway.RemoteBackend(config)
    # remote embedding backends share the endpoint convention <endpoint>/embed/*
    text_backend = index.HttpEmbedder(args.endpoint.rstrip("/") + "/embed/text")
    vis_backend = index.HttpEmbedder(args.endpoint.rstrip("/") + "/embed/visual")
    return llm, text_backend, vis_backend


def _load_build_dir(directory):
    directory = Path(directory)
    m = deserialize_map((directory / "dmap.json").read_bytes())
    idx = index.Index.load(directory, m)
    return m, idx


def cmd_ingest_validate(args) -> int:
    try:
        b = bundle.load_bundle(args.bundle)
    except bundle.BundleError as exc:
        print(f"invalid bundle: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {b.doc_id}: {len(b.pages)} pages, "
          f"{sum(len(p.extracted) for p in b.pages)} extracted elements")
    return EXIT_OK


def cmd_build(args) -> int:
    try:
        b = bundle.load_bundle(args.bundle)
    except bundle.BundleError as exc:
        print(f"invalid bundle: {exc}", file=sys.stderr)
        return EXIT_INVALID
    llm, text_backend, vis_backend = _make_backends(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    try:
        m = builder.build_map(b, llm)
        idx = index.build_index(m, text_backend, vis_backend, root_dir=b.root_dir)
    except (builder.BuildError, gateway.BackendError, index.IndexError_) as exc:
        print(f"build failed: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    (out / "dmap.json").write_bytes(serialize_map(m))
    idx.save(out)
    print(f"built {m.doc_id}: {len(m.pages)} pages, {len(m.elements)} elements "
          f"-> {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        m, _ = _load_build_dir(args.directory)
    except (OSError, ValueError) as exc:
        print(f"cannot load build directory: {exc}", file=sys.stderr)
        return EXIT_INVALID
    violations = validate_map(m)
    if violations:
        for v in violations:
            print(f"violation [{v.code}] {v.subject}: {v.message}", file=sys.stderr)
        return EXIT_INVALID
    print(builder.render_summary_tree(m).text, end="")
    return EXIT_OK


def cmd_query(args) -> int:
    try:
        m, idx = _load_build_dir(args.directory)
    except (OSError, ValueError) as exc:
        print(f"cannot load build directory: {exc}", file=sys.stderr)
        return EXIT_INVALID
    llm, text_backend, vis_backend = _make_backends(args)
    cfg = qa.QAConfig(
        retrieval=retrieval.RetrievalConfig(
            k_text=args.topk, k_visual=args.topk, k_structured=args.topk
        ),
        max_rounds=args.max_rounds,
    )
    try:
        result = qa.answer_query(
            args.question, m, idx, llm, cfg,
            text_backend=text_backend, vis_backend=vis_backend,
        )
    except gateway.BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    print(json.dumps(result.to_dict(), indent=2, sort_keys=True, ensure_ascii=False))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        m, idx = _load_build_dir(args.directory)
    except (OSError, ValueError) as exc:
        print(f"cannot load build directory: {exc}", file=sys.stderr)
        return EXIT_INVALID
    llm, text_backend, vis_backend = _make_backends(args)
    cfg = evalharness.AblationConfig(
        enable_text=not args.no_text,
        enable_visual=not args.no_visual,
        enable_structured=not args.no_structured,
    )
    dataset = evalharness.load_dataset(args.dataset)
    qa_cfg_base = retrieval.RetrievalConfig(
        k_text=args.topk, k_visual=args.topk, k_structured=args.topk
    )

    def run_question(record, paths):
        if record.doc_id != m.doc_id:
            return None
        return qa.answer_query(
            record.question, m, idx, llm,
            qa.QAConfig(retrieval=qa_cfg_base, paths=paths),
            text_backend=text_backend, vis_backend=vis_backend,
        )

    try:
        report = evalharness.evaluate(dataset, run_question, cfg, llm,
                                      judged_by=getattr(args, "model", "mock"))
    except gateway.BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    report_path = args.report or (Path(args.directory) / "report.json")
    evalharness.write_report(report, report_path)
    print(json.dumps({k: report[k] for k in ("total", "correct", "accuracy")}))
    return EXIT_OK


COMMANDS = {
    "ingest-validate": cmd_ingest_validate,
    "build": cmd_build,
    "inspect": cmd_inspect,
    "query": cmd_query,
    "eval": cmd_eval,
}


def dispatch(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DMAP_LOG", "WARNING"))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    return COMMANDS[args.command](args)


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
