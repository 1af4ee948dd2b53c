"""Low-rank adapter injection for torch linear layers.

Wraps every ``nn.Linear`` whose qualified name matches the target
selector with a frozen-base + trainable-low-rank module (B zero-initialized
so training starts from the base model's behavior). Only adapter tensors
require grad afterwards.
"""

from __future__ import annotations

import json
import os
import re

import torch
from torch import nn


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        d, k = base.out_features, base.in_features
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.lora_A = nn.Parameter(torch.randn(rank, k) / rank**0.5)
        self.lora_B = nn.Parameter(torch.zeros(d, rank))

    def forward(self, x):
        return self.base(x) + self.scaling * ((x @ self.lora_A.T) @ self.lora_B.T)


def inject_adapters(model: nn.Module, target_pattern: str, rank: int, alpha: float) -> list[str]:
    """Freeze the model and wrap matching linears; returns wrapped names."""
    for p in model.parameters():
        p.requires_grad_(False)
    pattern = re.compile(target_pattern)
    wrapped = []
    for name, module in list(model.named_modules()):
        for child_name, child in list(module.named_children()):
            full = f"{name}.{child_name}" if name else child_name
            if isinstance(child, nn.Linear) and pattern.search(full):
                setattr(module, child_name, LoraLinear(child, rank, alpha))
                wrapped.append(full)
    return wrapped


def adapter_parameters(model: nn.Module):
    return [p for p in model.parameters() if p.requires_grad]


def adapter_state_dict(model: nn.Module) -> dict:
    return {
        name: tensor.detach().clone()
        for name, tensor in model.state_dict().items()
        if "lora_A" in name or "lora_B" in name
    }


def save_adapter(out_dir, model: nn.Module, config: dict) -> str:
    os.makedirs(out_dir, exist_ok=True)
    torch.save(adapter_state_dict(model), os.path.join(out_dir, "adapter_model.pt"))
    with open(os.path.join(out_dir, "adapter_config.json"), "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir
