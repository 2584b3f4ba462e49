#!/usr/bin/env python3
"""
Record Weaver - Command Line Runner
Schema-driven VAE training and generation for structured records
"""

import argparse
import sys
from typing import List, Optional

from app import COMMANDS, run
from utils.config import load_config
from utils.errors import ConfigError
from utils.logging_setup import configure_logging

COMMAND_HELP = {
    "ingest": "load the configured data source and cache the 8:1:1 split as JSONL",
    "stats": "fit per-zip coordinate statistics and report the training-split p-value self-test",
    "train": "train a model and write model.pt, metrics.csv and trace.csv",
    "generate": "sample records from a checkpoint into generated.csv with p-values",
    "eval": "split loss, generated loss, p-values and street-name metrics of a checkpoint",
    "repeat": "repeated mean-latent encode/decode with per-round p-value box plots",
    "interpolate": "decode a latent path between two training records as GeoJSON",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="record-weaver",
        description="Train schema-driven VAEs on address records and measure what they generate.",
        epilog="Exit codes: 0 success, 1 runtime failure, 2 bad config, missing checkpoint or existing output.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), metavar="command",
                        help="; ".join(f"{name}: {text}" for name, text in COMMAND_HELP.items()))
    parser.add_argument("--config", "-c", help="YAML run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set train.steps=0 (repeatable)")
    parser.add_argument("--force", action="store_true", help="overwrite an existing command output directory")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    configure_logging(args.log_level)

    try:
        config = load_config(args.config, args.overrides)
    except ConfigError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2

    print(f"🚀 Record Weaver: {args.command}")
    print(f"📍 Output: {config.output.dir}/{args.command}")
    result = run(args.command, config, force=args.force)
    if result['status'] != 'success':
        print(f"❌ {result['message']}", file=sys.stderr)
        return result['exit_code']
    print(f"✅ {result['message']}")
    return 0


if __name__ == '__main__':
    sys.exit(main())
