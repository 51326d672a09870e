"""Command line interface: export-static and export-contextual.

Exit codes: 0 success, 1 bad input or request, 2 usage error (argparse),
3 vocabulary coverage below --min-coverage.
"""

import argparse
import logging
import sys

from . import __version__
from .export import ExportResult, export_contextual, export_static, read_vocabulary
from .vectors import ExportError, load_model

log = logging.getLogger("embed_exporter")


def _add_common(p):
    p.add_argument("--model", required=True,
                   help="vector source: 'hash' or 'table:<path>'")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dim", type=int, default=None,
                   help="vector dimension (hash default 64; must match a table)")
    p.add_argument("--min-coverage", type=float, default=0.0,
                   help="fail with exit code 3 when coverage drops below this")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Materialize embedding files for the expframe feature "
                    "pipeline: static word2vec text tables and per-token "
                    "contextual JSONL vectors.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-static",
                       help="write a word2vec text table for a vocabulary")
    _add_common(p)
    p.set_defaults(func=cmd_static)

    p = sub.add_parser("export-contextual",
                       help="write per-token vectors for a corpus JSONL file")
    _add_common(p)
    p.add_argument("--pooling", choices=("first", "mean"), default="first",
                   help="how multi-piece tokens pool to one vector")
    p.set_defaults(func=cmd_contextual)
    return parser


def _finish(result: ExportResult, min_coverage: float) -> int:
    sys.stderr.write(f"coverage: {result.covered}/{result.total} tokens "
                     f"({100.0 * result.coverage:.1f}%)\n")
    if result.coverage < min_coverage:
        sys.stderr.write(f"error: coverage {result.coverage:.3f} below "
                         f"threshold {min_coverage:.3f}\n")
        return 3
    return 0


def cmd_static(args) -> int:
    model = load_model(args.model, args.dim)
    result = export_static(model, read_vocabulary(args.input), args.output)
    return _finish(result, args.min_coverage)


def cmd_contextual(args) -> int:
    model = load_model(args.model, args.dim)
    result = export_contextual(model, args.input, args.output,
                               pooling=args.pooling)
    return _finish(result, args.min_coverage)


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExportError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
