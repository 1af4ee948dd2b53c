"""Command-line entry point.

``sft-bridge validate <file.jsonl>`` checks the chat-JSONL schema.
``sft-bridge train --train t.jsonl --val v.jsonl --config cfg.json --out dir``
fine-tunes adapters and writes the adapter directory plus eval_log.csv.

Exit codes: 0 success, 2 config error, 3 schema/data error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .schema import validate_jsonl
from .train import BridgeConfig, BridgeError, SchemaError, bridge_train


def cmd_validate(args) -> int:
    report = validate_jsonl(args.path)
    if report.ok:
        print(f"{args.path}: {report.n_examples} examples, schema ok")
        return 0
    print(f"{args.path}: {len(report.violations)} violations", file=sys.stderr)
    for violation in report.violations[:20]:
        print(f"  {violation}", file=sys.stderr)
    return 3


def cmd_train(args) -> int:
    try:
        cfg = BridgeConfig.from_file(args.config)
    except (OSError, json.JSONDecodeError, TypeError, BridgeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        adapter_dir, report = bridge_train(args.train, args.val, cfg, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 3
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"adapter -> {adapter_dir} | best val loss {report.best_val_loss:.4f} "
        f"at step {report.best_step} "
        f"({'early stop' if report.stopped_early else 'ran to end'}, "
        f"{len(report.evals)} evals)"
    )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sft-bridge",
        description="LoRA fine-tuning launcher for chat-format JSONL instruction data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    validate = sub.add_parser("validate", help="check a JSONL file against the schema")
    validate.add_argument("path")
    train = sub.add_parser("train", help="fine-tune adapters on instruction data")
    train.add_argument("--train", required=True, help="training JSONL")
    train.add_argument("--val", required=True, help="validation JSONL")
    train.add_argument("--config", required=True, help="JSON config (BridgeConfig fields)")
    train.add_argument("--out", default="bridge_run", help="output directory")
    args = parser.parse_args(argv)
    return {"validate": cmd_validate, "train": cmd_train}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
