"""Command-line interface.

    posecap-embed-export export --input caps.jsonl --output caps.pceb \
        [--encoder dev-hash64] [--batch-size 32] [--device cpu]
    posecap-embed-export verify --path caps.pceb

Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .encoders import UnknownEncoderError, available_encoders
from .export import ExportError, ExportJob, export_embeddings
from .jsonl import CaptionFileError
from .pceb import PcebFormatError
from .verify import VerifyError, verify_pceb

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posecap-embed-export",
        description="Encode PoseCap captions into PCEB embedding tables.")
    sub = parser.add_subparsers(dest="command", required=True)

    export = sub.add_parser("export", help="encode captions and write a table")
    export.add_argument("--input", required=True, help="PoseCap JSONL path")
    export.add_argument("--output", required=True, help="PCEB output path")
    export.add_argument("--encoder", default="dev-hash64",
                        choices=available_encoders())
    export.add_argument("--batch-size", type=int, default=32)
    export.add_argument("--device", default="cpu")

    verify = sub.add_parser("verify", help="validate a PCEB file")
    verify.add_argument("--path", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK

    try:
        if args.command == "export":
            job = ExportJob(input=args.input, output=args.output,
                            encoder_name=args.encoder,
                            batch_size=args.batch_size, device=args.device)
            manifest = export_embeddings(job)
            json.dump(manifest, sys.stdout, indent=2, sort_keys=True)
            print()
        else:
            report = verify_pceb(args.path)
            json.dump(report, sys.stdout, indent=2, sort_keys=True)
            print()
        return EXIT_OK
    except (CaptionFileError, PcebFormatError, VerifyError, ExportError,
            UnknownEncoderError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # pragma: no cover - defensive
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
