"""Bridge CLI: extract a manifest from a video, or probe backend availability."""
from __future__ import annotations

import argparse
import json
import sys

from .config import BridgeError, load_config
from .extract import extract_manifest
from .probe import probe


def cmd_extract(args) -> int:
    config = load_config(args.config)
    path = extract_manifest(config)
    print(f"manifest written: {path}")
    return 0


def cmd_probe(args) -> int:
    config = load_config(args.config)
    print(json.dumps(probe(config), indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cineforge-bridge",
                                     description="raw video -> cineforge manifest")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="extract a source manifest from a video")
    p.add_argument("--config", required=True, help="bridge config JSON")
    p.set_defaults(func=cmd_extract)
    p = sub.add_parser("probe", help="report which backends are usable")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_probe)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
