"""Command-line entry point: ``pdf-ingest <input.pdf> -o <dir>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .convert import IngestConfig, IngestError, convert


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdf-ingest",
        description="convert a PDF into a page/element bundle directory",
    )
    parser.add_argument("pdf", help="input PDF file")
    parser.add_argument("-o", "--output", required=True, help="bundle directory")
    parser.add_argument("--dpi", type=int, default=144,
                        help="render resolution, 72-300 (default 144)")
    parser.add_argument("--no-elements", action="store_true",
                        help="skip figure/table extraction")
    return parser


def main(argv=None) -> None:
    logging.basicConfig(level="WARNING")
    args = build_parser().parse_args(argv)
    try:
        cfg = IngestConfig(
            pdf_path=Path(args.pdf),
            out_dir=Path(args.output),
            dpi=args.dpi,
            extract_elements=not args.no_elements,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(2)
    try:
        out = convert(cfg)
    except (IngestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)
    print(f"wrote bundle to {out}")


if __name__ == "__main__":
    main()
