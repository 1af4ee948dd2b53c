"""sft-bridge: launch LoRA supervised fine-tuning of a causal language
model on chat-format JSONL instruction data, with schema validation and
validation-loss early stopping."""

from .schema import SchemaReport, validate_jsonl
from .train import BridgeConfig, BridgeError, BridgeReport, SchemaError, bridge_train

__version__ = "0.1.0"
