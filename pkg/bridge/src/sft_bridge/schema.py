"""Chat-JSONL schema validation.

The interchange contract: one JSON object per line with a ``messages``
list of {role, content} dicts (roles system/user/assistant, exactly one
assistant message, last) and a ``meta`` object whose ``split`` is one of
train/val/test. Validation never mutates the input file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

ROLES = {"system", "user", "assistant"}
SPLITS = {"train", "val", "test"}


@dataclass
class SchemaReport:
    path: str
    n_examples: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and self.n_examples > 0


def _check_record(record, lineno: int, violations: list[str]) -> None:
    if not isinstance(record, dict):
        violations.append(f"line {lineno}: record is not an object")
        return
    messages = record.get("messages")
    if not isinstance(messages, list) or not messages:
        violations.append(f"line {lineno}: missing or empty messages list")
        return
    assistant_count = 0
    for i, message in enumerate(messages):
        if not isinstance(message, dict):
            violations.append(f"line {lineno}: message {i} is not an object")
            return
        role = message.get("role")
        content = message.get("content")
        if role not in ROLES:
            violations.append(f"line {lineno}: message {i} has invalid role {role!r}")
        if not isinstance(content, str):
            violations.append(f"line {lineno}: message {i} content is not text")
        if role == "assistant":
            assistant_count += 1
    if assistant_count != 1:
        violations.append(
            f"line {lineno}: expected exactly one assistant message, found {assistant_count}"
        )
    elif messages[-1].get("role") != "assistant":
        violations.append(f"line {lineno}: assistant message is not last")
    meta = record.get("meta")
    if not isinstance(meta, dict):
        violations.append(f"line {lineno}: missing meta object")
    elif meta.get("split") not in SPLITS:
        violations.append(f"line {lineno}: meta.split invalid: {meta.get('split')!r}")


def validate_jsonl(path) -> SchemaReport:
    report = SchemaReport(path=str(path))
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        report.violations.append("file not found")
        return report
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        report.violations.append(f"not valid UTF-8: {exc}")
        return report
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            report.violations.append(f"line {lineno}: invalid JSON ({exc.msg})")
            continue
        report.n_examples += 1
        _check_record(record, lineno, report.violations)
    if report.n_examples == 0 and not report.violations:
        report.violations.append("no examples in file")
    return report
