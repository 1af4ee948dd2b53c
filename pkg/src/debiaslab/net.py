"""Small dense forecasting networks with from-scratch low-rank adapters.

A base network is a stack of affine layers (double precision throughout).
Adapters add a parallel low-rank path to each layer: the layer output
becomes W0 x + bias + scale * B (A x), with B zero-initialized so an
adapted net starts out exactly equal to its base. Adapters can later be
merged back into the weights (W' = W0 + scale * B A) for adapter-free
inference.

Checkpoint format (``save_checkpoint``): a single .npz archive holding
``layer{i}_W`` / ``layer{i}_b`` arrays, optional ``adapter{i}_A`` /
``adapter{i}_B`` arrays, normalizer statistics, and a ``meta`` JSON string
(activations, ranks, alpha, config hash). float64 arrays round-trip
bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError


@dataclass
class Layer:
    W: np.ndarray  # (d, k)
    b: np.ndarray  # (d,)
    activation: str  # "tanh" | "identity"

    def __post_init__(self):
        if self.activation not in ("tanh", "identity"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError("layer weight/bias shapes do not chain")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.W.shape[1] != prev.W.shape[0]:
                raise ShapeError("consecutive layer shapes do not chain")
        if self.layers and self.layers[-1].activation != "identity":
            raise ConfigurationError("final activation must be identity")

    @property
    def input_width(self) -> int:
        return self.layers[0].W.shape[1]


@dataclass
class LoraAdapter:
    A: np.ndarray  # (r, k)
    B: np.ndarray  # (d, r)
    alpha: float

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


@dataclass
class AdaptedNet:
    base: DenseNet  # frozen: never touched by adapter training
    adapters: list[LoraAdapter]

    @property
    def input_width(self) -> int:
        return self.base.input_width


def init_dense(widths: list[int], seed: int = 0) -> DenseNet:
    """Fresh network: tanh hidden layers, identity output, Xavier-ish init."""
    if len(widths) < 2:
        raise ConfigurationError("need at least input and output widths")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E65]))
    layers = []
    for i, (k, d) in enumerate(zip(widths, widths[1:])):
        act = "identity" if i == len(widths) - 2 else "tanh"
        w = rng.normal(0.0, 1.0 / np.sqrt(k), size=(d, k))
        layers.append(Layer(W=w, b=np.zeros(d), activation=act))
    return DenseNet(layers=layers)


def output_width(net) -> int:
    base = net.base if isinstance(net, AdaptedNet) else net
    return base.layers[-1].W.shape[0]


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else z


def forward(net, x: np.ndarray) -> np.ndarray:
    """Evaluate one input vector; accepts a base or an adapted net."""
    out = forward_batch(net, np.asarray(x, dtype=float)[None, :])
    return out[0]


def forward_batch(net, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    base = net.base if isinstance(net, AdaptedNet) else net
    adapters = net.adapters if isinstance(net, AdaptedNet) else None
    if X.ndim != 2 or X.shape[1] != base.input_width:
        raise ShapeError(
            f"input width {X.shape[-1] if X.ndim else 0} != net width {base.input_width}"
        )
    H = X
    for i, layer in enumerate(base.layers):
        Z = H @ layer.W.T + layer.b
        if adapters is not None:
            ad = adapters[i]
            Z = Z + ad.scale * ((H @ ad.A.T) @ ad.B.T)
        H = _activate(Z, layer.activation)
    return H


def max_adaptable_rank(base: DenseNet) -> int:
    """Largest admissible adapter rank: strictly below the biggest layer's
    smaller dimension (narrow layers get capped individually)."""
    return max(min(l.W.shape) for l in base.layers) - 1


def attach_lora(base: DenseNet, rank: int, alpha: float | None = None, seed: int = 0) -> AdaptedNet:
    """Attach zero-initialized adapters to every weight matrix.

    A is drawn Normal(0, 1/rank) from the seed, B starts at zero so the
    adapted net computes exactly what the base computes. On layers
    narrower than the requested rank the effective rank is capped at
    min(d, k) - 1. alpha defaults to the effective rank (scale 1).
    """
    if rank < 1:
        raise ConfigurationError(f"rank must be >= 1, got {rank}")
    if rank > max_adaptable_rank(base):
        raise ConfigurationError(
            f"rank {rank} too large: biggest layer admits at most {max_adaptable_rank(base)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6C6F7261]))
    adapters = []
    for layer in base.layers:
        d, k = layer.W.shape
        r = max(1, min(rank, min(d, k) - 1))
        a = rng.normal(0.0, 1.0 / np.sqrt(r), size=(r, k))
        adapters.append(
            LoraAdapter(A=a, B=np.zeros((d, r)), alpha=float(r) if alpha is None else float(alpha))
        )
    return AdaptedNet(base=base, adapters=adapters)


def merge_lora(adapted: AdaptedNet) -> DenseNet:
    """Fold each adapter into its layer: W' = W0 + scale * B A."""
    layers = []
    for layer, ad in zip(adapted.base.layers, adapted.adapters):
        layers.append(
            Layer(
                W=layer.W + ad.scale * (ad.B @ ad.A),
                b=layer.b.copy(),
                activation=layer.activation,
            )
        )
    return DenseNet(layers=layers)


def parameter_counts(adapted: AdaptedNet) -> tuple[int, int, float]:
    """(trainable adapter params, base params, trainable fraction)."""
    trainable = sum(ad.A.size + ad.B.size for ad in adapted.adapters)
    base = sum(l.W.size + l.b.size for l in adapted.base.layers)
    return trainable, base, trainable / base


def base_checksum(net) -> str:
    """SHA-256 over the base weights; stable iff no base weight changed."""
    base = net.base if isinstance(net, AdaptedNet) else net
    h = hashlib.sha256()
    for layer in base.layers:
        h.update(np.ascontiguousarray(layer.W).tobytes())
        h.update(np.ascontiguousarray(layer.b).tobytes())
    return h.hexdigest()


def clone_adapters(adapted: AdaptedNet) -> list[LoraAdapter]:
    return [
        LoraAdapter(A=ad.A.copy(), B=ad.B.copy(), alpha=ad.alpha)
        for ad in adapted.adapters
    ]


def clone_dense(net: DenseNet) -> DenseNet:
    return DenseNet(
        layers=[Layer(W=l.W.copy(), b=l.b.copy(), activation=l.activation) for l in net.layers]
    )


# ---------------------------------------------------------------------------
# Reverse-mode gradients
# ---------------------------------------------------------------------------

def _forward_trace(net, X: np.ndarray):
    """Forward pass keeping per-layer inputs and activations for backprop."""
    base = net.base if isinstance(net, AdaptedNet) else net
    adapters = net.adapters if isinstance(net, AdaptedNet) else None
    inputs, activations = [], []
    H = X
    for i, layer in enumerate(base.layers):
        inputs.append(H)
        Z = H @ layer.W.T + layer.b
        if adapters is not None:
            ad = adapters[i]
            Z = Z + ad.scale * ((H @ ad.A.T) @ ad.B.T)
        H = _activate(Z, layer.activation)
        activations.append(H)
    return inputs, activations


def mse_loss(net, X: np.ndarray, Y: np.ndarray) -> float:
    # divergence is reported via the returned value, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        pred = forward_batch(net, X)
        return float(np.mean((pred - Y) ** 2))


def backprop(net, X, Y):
    """Mean-squared-error gradients for every parameter in one pass.

    Returns (loss, base_grads, adapter_grads) where base_grads is a list of
    (dW, db) per layer and adapter_grads a list of (dA, dB) per layer (None
    when `net` carries no adapters). Training code picks the set it is
    allowed to update; base gradients are never applied during adapter
    fine-tuning.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.size == 0:
        raise DataError("empty batch")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise DataError("non-finite values in batch")
    base = net.base if isinstance(net, AdaptedNet) else net
    adapters = net.adapters if isinstance(net, AdaptedNet) else None

    with np.errstate(over="ignore", invalid="ignore"):
        inputs, activations = _forward_trace(net, X)
        pred = activations[-1]
        diff = pred - Y
        loss = float(np.mean(diff**2))
        delta = 2.0 * diff / diff.size  # d loss / d pred, mean normalization

        base_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(base.layers)
        adapter_grads = [None] * len(base.layers) if adapters is not None else None

        for i in range(len(base.layers) - 1, -1, -1):
            layer = base.layers[i]
            if layer.activation == "tanh":
                delta = delta * (1.0 - activations[i] ** 2)
            H_in = inputs[i]
            base_grads[i] = (delta.T @ H_in, delta.sum(axis=0))
            d_input = delta @ layer.W
            if adapters is not None:
                ad = adapters[i]
                delta_b = delta @ ad.B  # (n, r)
                adapter_grads[i] = (
                    ad.scale * (delta_b.T @ H_in),
                    ad.scale * (delta.T @ (H_in @ ad.A.T)),
                )
                d_input = d_input + ad.scale * (delta_b @ ad.A)
            delta = d_input
    return loss, base_grads, adapter_grads


def adapter_gradients(adapted: AdaptedNet, X, Y) -> list[tuple[np.ndarray, np.ndarray]]:
    """MSE gradients w.r.t. the adapter matrices only: [(dA, dB), ...]."""
    if not isinstance(adapted, AdaptedNet):
        raise ConfigurationError("adapter_gradients needs an AdaptedNet")
    _, _, grads = backprop(adapted, X, Y)
    return grads


# ---------------------------------------------------------------------------
# Input/output standardization
# ---------------------------------------------------------------------------

@dataclass
class InputNormalizer:
    """Affine standardization fitted on the training split.

    Inputs share one scalar (mean, sd) because every window position lives
    in the same units; outputs get per-column statistics.
    """

    window: int
    x_mean: float
    x_sd: float
    y_mean: np.ndarray
    y_sd: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, Y: np.ndarray) -> "InputNormalizer":
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        x_sd = float(X.std())
        y_sd = Y.std(axis=0)
        return cls(
            window=X.shape[1],
            x_mean=float(X.mean()),
            x_sd=x_sd if x_sd > 0 else 1.0,
            y_mean=Y.mean(axis=0),
            y_sd=np.where(y_sd > 0, y_sd, 1.0),
        )

    def normalize_x(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_sd

    def normalize_y(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_sd

    def denormalize_y(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.y_sd + self.y_mean


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _meta_hash(meta: dict) -> str:
    return hashlib.sha256(
        json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def save_checkpoint(path, net, normalizer: InputNormalizer | None = None, meta: dict | None = None) -> None:
    base = net.base if isinstance(net, AdaptedNet) else net
    adapters = net.adapters if isinstance(net, AdaptedNet) else None
    arrays = {}
    for i, layer in enumerate(base.layers):
        arrays[f"layer{i}_W"] = layer.W
        arrays[f"layer{i}_b"] = layer.b
    info = {
        "format": "debiaslab-checkpoint-v1",
        "activations": [l.activation for l in base.layers],
        "n_layers": len(base.layers),
        "adapted": adapters is not None,
        "user_meta": meta or {},
    }
    if adapters is not None:
        info["alphas"] = [ad.alpha for ad in adapters]
        for i, ad in enumerate(adapters):
            arrays[f"adapter{i}_A"] = ad.A
            arrays[f"adapter{i}_B"] = ad.B
    if normalizer is not None:
        arrays["norm_stats"] = np.array(
            [normalizer.window, normalizer.x_mean, normalizer.x_sd]
        )
        arrays["norm_y_mean"] = np.asarray(normalizer.y_mean, dtype=float)
        arrays["norm_y_sd"] = np.asarray(normalizer.y_sd, dtype=float)
    info["config_hash"] = _meta_hash({k: v for k, v in info.items()})
    arrays["meta"] = np.frombuffer(json.dumps(info, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (net, normalizer or None, meta dict)."""
    with np.load(path) as data:
        info = json.loads(bytes(data["meta"]).decode())
        layers = []
        for i in range(info["n_layers"]):
            layers.append(
                Layer(
                    W=data[f"layer{i}_W"],
                    b=data[f"layer{i}_b"],
                    activation=info["activations"][i],
                )
            )
        net = DenseNet(layers=layers)
        if info["adapted"]:
            adapters = [
                LoraAdapter(
                    A=data[f"adapter{i}_A"],
                    B=data[f"adapter{i}_B"],
                    alpha=info["alphas"][i],
                )
                for i in range(info["n_layers"])
            ]
            net = AdaptedNet(base=net, adapters=adapters)
        normalizer = None
        if "norm_stats" in data:
            window, x_mean, x_sd = data["norm_stats"]
            normalizer = InputNormalizer(
                window=int(window),
                x_mean=float(x_mean),
                x_sd=float(x_sd),
                y_mean=data["norm_y_mean"],
                y_sd=data["norm_y_sd"],
            )
    return net, normalizer, info
