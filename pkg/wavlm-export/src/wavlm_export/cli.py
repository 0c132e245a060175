"""wavlm-export: dump per-utterance embeddings for a synth manifest."""
from __future__ import annotations

import argparse
import logging
import sys

from .export import ExportJob, export_features


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="wavlm-export",
        description="Run a pretrained speech model over a manifest and write "
                    "768-d XFEA feature files at a 20 ms hop.")
    ap.add_argument("manifest", help="synth manifest (JSONL)")
    ap.add_argument("--out-dir", required=True)
    ap.add_argument("--model", default="microsoft/wavlm-base",
                    help="HF model id, or 'stub' for the deterministic "
                         "test runner (default: %(default)s)")
    ap.add_argument("--device", default="cpu")
    ap.add_argument("--layer", type=int, default=-1,
                    help="hidden layer to export, -1 = final (default)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    args = ap.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s")
    try:
        result = export_features(ExportJob(
            manifest=args.manifest, out_dir=args.out_dir,
            model=args.model, device=args.device, layer=args.layer))
    except (OSError, ValueError, RuntimeError) as exc:
        logging.getLogger("wavlm_export").error("%s", exc)
        return 1
    print(f"exported {result.exported} features, skipped {result.skipped}")
    print(f"index: {result.index_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
