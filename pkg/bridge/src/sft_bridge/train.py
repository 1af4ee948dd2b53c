"""Adapter fine-tuning driver: JSONL in, adapter directory + eval log out.

The bridge is a launcher: model loading, tokenization, autograd, and the
optimizer all come from the torch/transformers ecosystem. The driver adds
prompt-masked causal-LM loss over the chat rendering, validation-based
early stopping, and best-checkpoint selection, mirroring the training
report format used elsewhere in the project (step, train_loss, val_loss).
"""

from __future__ import annotations

import csv
import json
import os
import random
from dataclasses import dataclass, field

import torch
from torch import nn
from transformers import AutoModelForCausalLM, AutoTokenizer

from .lora import adapter_parameters, adapter_state_dict, inject_adapters, save_adapter
from .schema import validate_jsonl


class BridgeError(Exception):
    pass


class SchemaError(BridgeError):
    pass


@dataclass(frozen=True)
class BridgeConfig:
    base_model: str
    rank: int = 8
    alpha: float = 16.0
    learning_rate: float = 1e-3
    batch_size: int = 4
    max_epochs: int = 1
    patience: int = 1
    eval_every: int = 8
    target_modules: str = r"self_attn\.(q_proj|k_proj|v_proj|o_proj)$"
    max_seq_len: int = 1024
    seed: int = 0
    adapter_dir: str = "adapter"

    def __post_init__(self):
        if self.rank < 1:
            raise BridgeError(f"rank must be >= 1, got {self.rank}")
        if self.patience < 1:
            raise BridgeError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.eval_every < 1:
            raise BridgeError("batch_size, max_epochs, eval_every must be >= 1")

    @classmethod
    def from_file(cls, path) -> "BridgeConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(**raw)


@dataclass
class EvalRow:
    step: int
    train_loss: float
    val_loss: float


@dataclass
class BridgeReport:
    evals: list[EvalRow] = field(default_factory=list)
    best_step: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False


def render_chat(messages) -> tuple[str, str]:
    """(prompt text, full text): the assistant reply is the loss target."""
    parts = []
    for message in messages[:-1]:
        parts.append(f"<|{message['role']}|>\n{message['content']}\n")
    prompt = "".join(parts) + "<|assistant|>\n"
    return prompt, prompt + messages[-1]["content"]


def load_examples(path) -> list[dict]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                examples.append(json.loads(line))
    return examples


class ChatDataset:
    """Tokenized chat examples with labels masked over the prompt span.

    Examples whose assistant span falls entirely outside `max_seq_len`
    would contribute no supervised tokens; they are dropped and counted,
    and an all-dropped dataset is an error rather than a silent no-op.
    """

    def __init__(self, examples, tokenizer, max_seq_len: int, name: str = "dataset"):
        self.items = []
        self.dropped = 0
        for ex in examples:
            prompt, full = render_chat(ex["messages"])
            prompt_ids = tokenizer(prompt, add_special_tokens=False)["input_ids"]
            full_ids = tokenizer(full, add_special_tokens=False)["input_ids"]
            if tokenizer.eos_token_id is not None:
                full_ids = full_ids + [tokenizer.eos_token_id]
            full_ids = full_ids[:max_seq_len]
            if len(prompt_ids) >= len(full_ids):
                self.dropped += 1
                continue
            labels = list(full_ids)
            for i in range(len(prompt_ids)):
                labels[i] = -100
            self.items.append((full_ids, labels))
        if not self.items:
            raise BridgeError(
                f"{name}: every example lost its target to the {max_seq_len}-token "
                "window; raise max_seq_len"
            )

    def __len__(self):
        return len(self.items)

    def batch(self, indices, pad_id: int):
        rows = [self.items[i] for i in indices]
        width = max(len(ids) for ids, _ in rows)
        input_ids = torch.full((len(rows), width), pad_id, dtype=torch.long)
        labels = torch.full((len(rows), width), -100, dtype=torch.long)
        attention = torch.zeros((len(rows), width), dtype=torch.long)
        for r, (ids, labs) in enumerate(rows):
            input_ids[r, : len(ids)] = torch.tensor(ids)
            labels[r, : len(labs)] = torch.tensor(labs)
            attention[r, : len(ids)] = 1
        return input_ids, attention, labels


@torch.no_grad()
def dataset_loss(model: nn.Module, dataset: ChatDataset, pad_id: int, batch_size: int) -> float:
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        idx = range(start, min(start + batch_size, len(dataset)))
        input_ids, attention, labels = dataset.batch(list(idx), pad_id)
        out = model(input_ids=input_ids, attention_mask=attention, labels=labels)
        n = int((labels != -100).sum())
        total += float(out.loss) * n
        count += n
    model.train()
    return total / max(count, 1)


def bridge_train(train_jsonl, val_jsonl, cfg: BridgeConfig, out_dir) -> tuple[str, BridgeReport]:
    """Validate, fine-tune adapters with early stopping, save artifacts.

    Returns (adapter directory, report). Schema violations abort before
    any model is loaded; the input files are never written to.
    """
    for path in (train_jsonl, val_jsonl):
        report = validate_jsonl(path)
        if not report.ok:
            raise SchemaError(
                f"{path} failed schema validation: " + "; ".join(report.violations[:5])
            )

    torch.manual_seed(cfg.seed)
    random.seed(cfg.seed)
    tokenizer = AutoTokenizer.from_pretrained(cfg.base_model)
    model = AutoModelForCausalLM.from_pretrained(cfg.base_model)
    if tokenizer.pad_token_id is None:
        tokenizer.pad_token = tokenizer.eos_token
    pad_id = tokenizer.pad_token_id

    wrapped = inject_adapters(model, cfg.target_modules, cfg.rank, cfg.alpha)
    if not wrapped:
        raise BridgeError(f"no modules matched target selector {cfg.target_modules!r}")

    train_set = ChatDataset(load_examples(train_jsonl), tokenizer, cfg.max_seq_len, "train")
    val_set = ChatDataset(load_examples(val_jsonl), tokenizer, cfg.max_seq_len, "val")
    optimizer = torch.optim.AdamW(adapter_parameters(model), lr=cfg.learning_rate)

    report = BridgeReport()
    best_state = adapter_state_dict(model)

    def evaluate(step: int) -> bool:
        val_loss = dataset_loss(model, val_set, pad_id, cfg.batch_size)
        train_loss = dataset_loss(model, train_set, pad_id, cfg.batch_size)
        report.evals.append(EvalRow(step=step, train_loss=train_loss, val_loss=val_loss))
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_step = step
            return True
        return False

    model.train()
    if evaluate(0):
        best_state = adapter_state_dict(model)
    bad_evals = 0
    step = 0
    stop = False
    order = list(range(len(train_set)))
    rng = random.Random(cfg.seed)
    for _ in range(cfg.max_epochs):
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            input_ids, attention, labels = train_set.batch(idx, pad_id)
            out = model(input_ids=input_ids, attention_mask=attention, labels=labels)
            optimizer.zero_grad()
            out.loss.backward()
            optimizer.step()
            step += 1
            if step % cfg.eval_every == 0:
                if evaluate(step):
                    best_state = adapter_state_dict(model)
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= cfg.patience:
                        report.stopped_early = True
                        stop = True
                        break
        if stop:
            break
    if not stop and step > 0 and step % cfg.eval_every != 0:
        if evaluate(step):
            best_state = adapter_state_dict(model)

    model.load_state_dict(best_state, strict=False)

    os.makedirs(out_dir, exist_ok=True)
    adapter_dir = os.path.join(out_dir, cfg.adapter_dir)
    save_adapter(
        adapter_dir,
        model,
        {
            "base_model": cfg.base_model,
            "rank": cfg.rank,
            "alpha": cfg.alpha,
            "target_modules": cfg.target_modules,
            "wrapped_modules": wrapped,
            "best_step": report.best_step,
            "best_val_loss": report.best_val_loss,
        },
    )
    log_path = os.path.join(out_dir, "eval_log.csv")
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "train_loss", "val_loss"])
        for row in report.evals:
            writer.writerow([row.step, f"{row.train_loss:.6f}", f"{row.val_loss:.6f}"])
    return adapter_dir, report
