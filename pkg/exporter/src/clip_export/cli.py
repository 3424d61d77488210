"""Command line: clip-export export --checkpoint ID --images DIR --classes FILE --out DIR."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import ExportError, ExportJob, run_export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="clip-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export image features and token embeddings")
    p.add_argument("--checkpoint", required=True, help="model id or local checkpoint path")
    p.add_argument("--images", required=True, help="directory with one subdirectory per class")
    p.add_argument("--classes", required=True, help="text file, one class name per line")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ctx-len", type=int, default=77, help="context length (default 77)")
    p.add_argument("--dim", type=int, default=512, help="embedding dimension (default 512)")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    job = ExportJob(
        checkpoint=args.checkpoint,
        images_dir=Path(args.images),
        classes_file=Path(args.classes),
        out_dir=Path(args.out),
        ctx_len=args.ctx_len,
        dim=args.dim,
    )
    try:
        emb_dir, tok_path = run_export(job)
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {emb_dir} and {tok_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
