"""Prompt rendering, instruction-dataset construction, JSONL interchange,
and split hygiene.

Prompts are plain chat messages. The two debiasing variants prepend fixed
instruction text to the baseline prompt; the baseline presents only
anonymized numbers. Targets are the conditionally optimal changes (series
task) or the realized next-month return (stock task), formatted at the
same precision the prompt uses so the learner is never taught digits it
cannot see.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

import numpy as np

from .ar1 import Ar1Config, DISPLAY_DECIMALS, display_round, simulate_ar1, stream_rng
from .errors import DataError, EmptyInputError, PlanError

RATIONAL_INVESTOR_PREFIX = "You are a sophisticated rational investor."

EXTRAPOLATION_WARNING_PREFIX = (
    "Extrapolation bias refers to the cognitive tendency to assume recent "
    "trends will continue into the future, giving disproportionate weight "
    "to the most recent data points while underweighting longer-term "
    "patterns, base rates, or the possibility of reversion. Avoid "
    "extrapolation bias when creating your response."
)

PROMPT_KINDS = ("baseline", "rational_investor", "extrapolation_warning")
TASKS = ("ar1", "stock")

AR1_WINDOW = 40
STOCK_WINDOW = 12
STOCK_DECIMALS = 4


@dataclass(frozen=True)
class PromptVariant:
    kind: str = "baseline"
    task: str = "ar1"

    def __post_init__(self):
        if self.kind not in PROMPT_KINDS:
            raise PlanError(f"unknown prompt kind {self.kind!r}")
        if self.task not in TASKS:
            raise PlanError(f"unknown task {self.task!r}")


def _fmt(value: float, decimals: int) -> str:
    text = f"{value:.{decimals}f}"
    # 0.0 * negative gives -0.00; normalize the sign away
    if text == f"-{0:.{decimals}f}":
        return text[1:]
    return text


def format_series_value(value: float) -> str:
    return _fmt(value, DISPLAY_DECIMALS)


def format_return_value(value: float) -> str:
    return _fmt(value, STOCK_DECIMALS)


_AR1_BODY = (
    "Below are the {n} most recent values of a numeric data series, oldest first:\n"
    "{values}\n\n"
    "The series continues beyond the last value shown. Relative to the most "
    "recent value, forecast the change one step ahead and the change two "
    "steps ahead.\n"
    "Answer with exactly two lines, in this format:\n"
    "change_1: <number>\n"
    "change_2: <number>"
)

_STOCK_BODY = (
    "Below are a stock's monthly returns for the most recent {n} months, "
    "oldest first, expressed as decimals:\n"
    "{values}\n\n"
    "Forecast this stock's return over the following month, expressed as a "
    "decimal. Answer with a single number and nothing else."
)


def render_prompt(variant: PromptVariant, payload) -> list[dict]:
    """Render one forecasting prompt as a chat message list.

    `payload` is the window of values the forecaster may see: the trailing
    series history for the ar1 task, the trailing return window for the
    stock task. The text is deterministic down to the byte.
    """
    payload = list(payload)
    if variant.task == "ar1":
        if len(payload) != AR1_WINDOW:
            raise DataError(
                f"ar1 prompt needs a window of {AR1_WINDOW} values, got {len(payload)}"
            )
        values = ", ".join(format_series_value(v) for v in payload)
        body = _AR1_BODY.format(n=len(payload), values=values)
    else:
        if len(payload) != STOCK_WINDOW:
            raise DataError(
                f"stock prompt needs a window of {STOCK_WINDOW} returns, got {len(payload)}"
            )
        values = ", ".join(format_return_value(v) for v in payload)
        body = _STOCK_BODY.format(n=len(payload), values=values)

    if variant.kind == "rational_investor":
        body = f"{RATIONAL_INVESTOR_PREFIX}\n\n{body}"
    elif variant.kind == "extrapolation_warning":
        body = f"{EXTRAPOLATION_WARNING_PREFIX}\n\n{body}"
    return [{"role": "user", "content": body}]


_VALUE_LINE = re.compile(r"^[0-9eE+\-−., ]+$")


def extract_window(prompt_text: str, min_count: int = 2) -> list[float]:
    """Recover the numeric window from a rendered prompt.

    Only the dedicated values line is read, so numbers inside instruction
    prose (window lengths, the debiasing prefixes) never leak in.
    """
    for line in prompt_text.splitlines():
        line = line.strip()
        if not line or not _VALUE_LINE.match(line):
            continue
        parts = [p.strip() for p in line.split(",") if p.strip()]
        if len(parts) >= min_count:
            try:
                return [float(p.replace("−", "-")) for p in parts]
            except ValueError:
                continue
    raise DataError("prompt contains no recognizable values line")


def ar1_target_text(rho: float, last_value: float, mean: float = 0.0) -> str:
    """Assistant content encoding the conditionally optimal changes."""
    dev = last_value - mean
    one = _fmt((rho - 1.0) * dev, DISPLAY_DECIMALS)
    two = _fmt((rho * rho - 1.0) * dev, DISPLAY_DECIMALS)
    return f"change_1: {one}\nchange_2: {two}"


def stock_target_text(next_return: float) -> str:
    return format_return_value(next_return)


@dataclass
class InstructionExample:
    """One chat-format SFT record: user prompt plus target assistant reply."""

    messages: list[dict]
    meta: dict

    def __post_init__(self):
        roles = [m["role"] for m in self.messages]
        if roles.count("assistant") != 1 or roles[-1] != "assistant":
            raise DataError("exactly one assistant message, last in order")
        if self.meta.get("split") not in ("train", "val", "test"):
            raise DataError(f"meta.split invalid: {self.meta.get('split')!r}")

    @property
    def prompt_text(self) -> str:
        return "\n".join(m["content"] for m in self.messages[:-1])

    @property
    def target_text(self) -> str:
        return self.messages[-1]["content"]


@dataclass(frozen=True)
class MonthRange:
    """Inclusive month range, both ends as (year, month) strings YYYY-MM."""

    start: str
    end: str

    def __post_init__(self):
        if month_index(self.start) > month_index(self.end):
            raise PlanError(f"range start {self.start} after end {self.end}")

    def contains(self, month: str) -> bool:
        return month_index(self.start) <= month_index(month) <= month_index(self.end)

    def overlaps(self, other: "MonthRange") -> bool:
        return not (
            month_index(self.end) < month_index(other.start)
            or month_index(other.end) < month_index(self.start)
        )


_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


def month_index(month: str) -> int:
    m = _MONTH_RE.match(month)
    if not m:
        raise DataError(f"month must be YYYY-MM, got {month!r}")
    year, mon = int(m.group(1)), int(m.group(2))
    if not 1 <= mon <= 12:
        raise DataError(f"month out of range in {month!r}")
    return year * 12 + (mon - 1)


def month_label(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


SPLIT_NAMES = ("train", "val", "test")
_SPLIT_CODE = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class SplitPlan:
    """How data is partitioned: disjoint seed blocks for simulated series,
    non-overlapping formation-month ranges for the stock panel."""

    train_series_per_rho: int = 128
    val_series_per_rho: int = 32
    test_series_per_rho: int = 32
    stock_train: MonthRange = MonthRange("2001-01", "2011-12")
    stock_val: MonthRange = MonthRange("2012-01", "2015-12")
    stock_test: MonthRange = MonthRange("2016-01", "2024-12")

    def __post_init__(self):
        for name in ("train_series_per_rho", "val_series_per_rho", "test_series_per_rho"):
            if getattr(self, name) < 1:
                raise PlanError(f"{name} must be >= 1")
        ranges = [self.stock_train, self.stock_val, self.stock_test]
        for i, a in enumerate(ranges):
            for b in ranges[i + 1 :]:
                if a.overlaps(b):
                    raise PlanError(f"stock ranges overlap: {a} vs {b}")

    def series_count(self, split: str) -> int:
        return {
            "train": self.train_series_per_rho,
            "val": self.val_series_per_rho,
            "test": self.test_series_per_rho,
        }[split]

    def stock_range(self, split: str) -> MonthRange:
        return {"train": self.stock_train, "val": self.stock_val, "test": self.stock_test}[split]

    @classmethod
    def from_dict(cls, cfg: dict) -> "SplitPlan":
        kwargs = {}
        ar1 = cfg.get("ar1", {})
        for key in ("train_series_per_rho", "val_series_per_rho", "test_series_per_rho"):
            if key in ar1:
                kwargs[key] = int(ar1[key])
        stock = cfg.get("stock", {})
        for split in SPLIT_NAMES:
            if split in stock:
                kwargs[f"stock_{split}"] = MonthRange(stock[split][0], stock[split][1])
        return cls(**kwargs)


def series_stream_id(rho: float, split: str, series_index: int) -> int:
    """Deterministic stream id keyed by (rho, split, series).

    Blocks are wide enough that splits and persistence values can never
    collide; identical (rho, split, series) always maps to the same
    realization, which is what keeps test realizations shared across
    prompt variants and forecasters.
    """
    if not 0 <= series_index < 100_000:
        raise PlanError(f"series index {series_index} outside stream block")
    return round(rho * 1000) * 1_000_000 + _SPLIT_CODE[split] * 100_000 + series_index


def build_ar1_instruction_set(
    plan: SplitPlan,
    rhos=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
    master_seed: int = 0,
    variant: PromptVariant | None = None,
    sigma: float = 20.0,
    mean: float = 0.0,
    history_len: int = 40,
    rounds: int = 40,
) -> dict[str, list[InstructionExample]]:
    """Simulate disjoint series per split and emit one example per round.

    Targets are the conditional-expectation changes computed from the
    rendered (display precision) final value, so a target always equals
    the formula applied to the prompt's own last number.
    """
    if variant is None:
        variant = PromptVariant(kind="baseline", task="ar1")
    if history_len != AR1_WINDOW:
        raise PlanError(f"ar1 prompts require history_len == {AR1_WINDOW}")
    out: dict[str, list[InstructionExample]] = {s: [] for s in SPLIT_NAMES}
    for rho in rhos:
        config = Ar1Config(
            rho=rho, sigma=sigma, mean=mean, history_len=history_len,
            rounds=rounds, seed=master_seed,
        )
        for split in SPLIT_NAMES:
            for series in range(plan.series_count(split)):
                stream = series_stream_id(rho, split, series)
                session = simulate_ar1(config, rng=stream_rng(master_seed, stream))
                for round_no in range(1, rounds + 1):
                    window = display_round(session.history_at(round_no))
                    prompt = render_prompt(variant, window)
                    target = ar1_target_text(rho, window[-1], mean)
                    out[split].append(
                        InstructionExample(
                            messages=prompt + [{"role": "assistant", "content": target}],
                            meta={
                                "split": split,
                                "task": "ar1",
                                "rho": rho,
                                "t": round_no,
                                "seed_lineage": f"{master_seed}/{stream}",
                            },
                        )
                    )
    return out


def build_stock_instruction_set(
    prompt_rows,
    plan: SplitPlan,
    variant: PromptVariant | None = None,
) -> tuple[dict[str, list[InstructionExample]], int]:
    """Turn window rows into instruction examples, split by formation month.

    Returns (datasets, dropped) where dropped counts rows outside every
    split range or lacking a finite target.
    """
    if variant is None:
        variant = PromptVariant(kind="baseline", task="stock")
    out: dict[str, list[InstructionExample]] = {s: [] for s in SPLIT_NAMES}
    dropped = 0
    for row in prompt_rows:
        if row.target is None or not np.isfinite(row.target):
            dropped += 1
            continue
        split = None
        for candidate in SPLIT_NAMES:
            if plan.stock_range(candidate).contains(row.formation_month):
                split = candidate
                break
        if split is None:
            dropped += 1
            continue
        prompt = render_prompt(variant, row.window)
        out[split].append(
            InstructionExample(
                messages=prompt
                + [{"role": "assistant", "content": stock_target_text(row.target)}],
                meta={
                    "split": split,
                    "task": "stock",
                    "firm_key": row.firm_key,
                    "t": row.formation_month,
                    "seed_lineage": f"stock/{row.firm_key}/{row.formation_month}",
                },
            )
        )
    return out, dropped


def export_jsonl(examples: list[InstructionExample], path) -> None:
    """One canonical-form JSON object per line; byte-stable across runs."""
    if not examples:
        raise EmptyInputError("refusing to export an empty dataset")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            record = {"messages": ex.messages, "meta": ex.meta}
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def import_jsonl(path) -> list[InstructionExample]:
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                record = json.loads(line)
                examples.append(
                    InstructionExample(messages=record["messages"], meta=record["meta"])
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: malformed JSONL at line {lineno}: {exc}") from exc
    return examples


def split_guard(datasets: dict[str, list[InstructionExample]]) -> list[str]:
    """Hygiene check across splits; returns violations (empty list = clean).

    Checks: disjoint simulation seed lineage, disjoint stock formation
    ranges, and no prompt text shared verbatim between splits.
    """
    violations: list[str] = []

    lineages: dict[str, set[str]] = {}
    months: dict[str, set[str]] = {}
    prompts: dict[str, str] = {}
    for split, examples in datasets.items():
        for i, ex in enumerate(examples):
            if ex.meta.get("task") == "ar1":
                lineages.setdefault(split, set()).add(ex.meta["seed_lineage"])
            elif ex.meta.get("task") == "stock":
                months.setdefault(split, set()).add(str(ex.meta["t"]))
            key = ex.prompt_text
            tag = f"{split}[{i}]"
            if key in prompts:
                other = prompts[key]
                if not other.startswith(f"{split}["):
                    violations.append(
                        f"prompt shared across splits: {other} and {tag}"
                    )
            else:
                prompts[key] = tag

    splits = sorted(lineages)
    for i, a in enumerate(splits):
        for b in splits[i + 1 :]:
            shared = lineages[a] & lineages[b]
            for lineage in sorted(shared):
                violations.append(f"seed lineage {lineage} appears in {a} and {b}")

    msplits = sorted(months)
    for i, a in enumerate(msplits):
        for b in msplits[i + 1 :]:
            shared = months[a] & months[b]
            for month in sorted(shared):
                violations.append(f"formation month {month} appears in {a} and {b}")

    return violations
