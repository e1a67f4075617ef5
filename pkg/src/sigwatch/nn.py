"""Minimal dense networks with manual backprop and SGD.

Everything is plain float64 numpy. A Network is a stack of hidden
DenseLayers followed by a classification head, which is either another
DenseLayer (linear logits) or a cosine-matching head from
:mod:`sigwatch.zerobias`. Parameters flatten into a single vector in a
fixed order, which the training loop, the gradient checker, and the
incremental-learning machinery all share.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""


MODEL_FORMAT_VERSION = 1


def glorot_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, numerically stabilized."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class DenseLayer:
    """Affine layer with an optional elementwise ReLU.

    W has shape (out, in); b has shape (out,).
    """

    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.activation not in ("relu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("inconsistent layer dimensions")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer parameters must be finite")

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    def forward(self, x: np.ndarray):
        z = x @ self.W.T + self.b
        a = np.maximum(z, 0.0) if self.activation == "relu" else z
        return a, (x, z)

    def backward(self, cache, grad_out: np.ndarray):
        x, z = cache
        dz = grad_out * (z > 0) if self.activation == "relu" else grad_out
        return dz @ self.W, {"W": dz.T @ x, "b": dz.sum(axis=0)}

    def param_items(self):
        return [("W", self.W), ("b", self.b)]


@dataclass
class TrainConfig:
    """SGD hyperparameters."""

    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    l2: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


class Network:
    """Hidden dense layers plus a classification head producing logits."""

    def __init__(self, layers: list[DenseLayer], head, input_dim: int, n_classes: int):
        self.layers = layers
        self.head = head
        self.input_dim = input_dim
        self.n_classes = n_classes
        dim = input_dim
        for layer in layers:
            if layer.in_dim != dim:
                raise ValueError("adjacent layer dimensions do not chain")
            dim = layer.out_dim
        if head.in_dim != dim:
            raise ValueError("head input dimension does not chain")
        if head.out_dim != n_classes:
            raise ValueError("head output dimension must equal n_classes")

    # -- parameter vector plumbing ------------------------------------

    def param_blocks(self):
        """(name, array) pairs in canonical flattening order."""
        blocks = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.param_items():
                blocks.append((f"layers.{i}.{name}", arr))
        for name, arr in self.head.param_items():
            blocks.append((f"head.{name}", arr))
        return blocks

    def param_layout(self):
        """(name, shape, start, stop) descriptors into the flat vector."""
        layout = []
        offset = 0
        for name, arr in self.param_blocks():
            layout.append((name, arr.shape, offset, offset + arr.size))
            offset += arr.size
        return layout

    @property
    def n_params(self) -> int:
        return sum(arr.size for _, arr in self.param_blocks())

    def flatten_params(self) -> np.ndarray:
        return np.concatenate([arr.reshape(-1) for _, arr in self.param_blocks()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        offset = 0
        for _, arr in self.param_blocks():
            arr[...] = flat[offset : offset + arr.size].reshape(arr.shape)
            offset += arr.size

    def weight_mask(self) -> np.ndarray:
        """1.0 for weight-matrix entries, 0.0 for bias entries (L2 scope)."""
        parts = []
        for name, arr in self.param_blocks():
            is_weight = name.rsplit(".", 1)[-1] in ("W", "W0", "W1")
            parts.append(np.full(arr.size, 1.0 if is_weight else 0.0))
        return np.concatenate(parts)

    def copy(self) -> "Network":
        return load_model_dict(save_model_dict(self))


def build_network(
    input_dim: int,
    hidden: tuple[int, ...],
    n_classes: int,
    head: str = "dense",
    seed: int = 0,
) -> Network:
    """Construct a freshly initialized network.

    Weights are uniform in +-sqrt(6/(in+out)); biases start at zero.
    ``head`` selects "dense" (plain linear logits) or "zero_bias"
    (cosine matching against per-class fingerprints).
    """
    rng = np.random.default_rng(seed)
    layers = []
    dim = input_dim
    for width in hidden:
        layers.append(DenseLayer(glorot_uniform(rng, width, dim), np.zeros(width), "relu"))
        dim = width
    if head == "dense":
        head_obj = DenseLayer(glorot_uniform(rng, n_classes, dim), np.zeros(n_classes), "linear")
    elif head == "zero_bias":
        from .zerobias import ZeroBiasHead

        head_obj = ZeroBiasHead(
            W0=glorot_uniform(rng, n_classes, dim),
            b=np.zeros(n_classes),
            W1=glorot_uniform(rng, n_classes, n_classes),
        )
    else:
        raise ValueError(f"unknown head type {head!r}")
    return Network(layers, head_obj, input_dim, n_classes)


def hidden_forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Activations entering the head (no caches kept)."""
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for layer in net.layers:
        a, _ = layer.forward(a)
    return a


def forward(net: Network, x: np.ndarray):
    """Run the network on a batch.

    Args:
        net: Network whose input_dim matches x's column count.
        x: Batch of shape (n, input_dim).

    Returns:
        (logits, caches) where logits has shape (n, n_classes) and caches
        hold the per-layer activations needed by :func:`backward`.
    """
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if a.shape[1] != net.input_dim:
        raise ValueError(f"expected input dim {net.input_dim}, got {a.shape[1]}")
    caches = []
    for layer in net.layers:
        a, cache = layer.forward(a)
        caches.append(cache)
    logits, cache = net.head.forward(a)
    caches.append(cache)
    return logits, caches


def backward(net: Network, caches, grad_logits: np.ndarray) -> np.ndarray:
    """Backpropagate an upstream logits gradient into a flat parameter gradient."""
    grads: dict[str, np.ndarray] = {}
    grad, head_grads = net.head.backward(caches[-1], grad_logits)
    for name, g in head_grads.items():
        grads[f"head.{name}"] = g
    for i in range(len(net.layers) - 1, -1, -1):
        grad, layer_grads = net.layers[i].backward(caches[i], grad)
        for name, g in layer_grads.items():
            grads[f"layers.{i}.{name}"] = g
    return np.concatenate([grads[name].reshape(-1) for name, _ in net.param_blocks()])


def batch_loss_and_grad(net: Network, x: np.ndarray, y: np.ndarray):
    """Cross-entropy loss and flat gradient on one batch."""
    logits, caches = forward(net, x)
    loss, grad_logits = softmax_cross_entropy(logits, y)
    return loss, backward(net, caches, grad_logits)


def train(net: Network, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> list[dict]:
    """Mini-batch SGD on softmax cross-entropy, in place.

    Returns a history list with one dict per epoch holding the mean
    training objective (cross-entropy plus any L2 term) and the training
    accuracy. Shuffling is driven by cfg.seed only, so runs repeat
    exactly. A non-finite loss aborts with DivergenceError.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= net.n_classes):
        raise ValueError("labels outside [0, n_classes)")
    rng = np.random.default_rng(cfg.seed)
    wmask = net.weight_mask() if cfg.l2 > 0 else None
    n = x.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = batch_loss_and_grad(net, x[idx], y[idx])
            params = net.flatten_params()
            if wmask is not None:
                loss += 0.5 * cfg.l2 * float(np.sum((wmask * params) ** 2))
                grad = grad + cfg.l2 * wmask * params
            if not math.isfinite(loss):
                raise DivergenceError("divergence")
            losses.append(loss)
            net.set_flat_params(params - cfg.learning_rate * grad)
        history.append(
            {"epoch": epoch, "loss": float(np.mean(losses)), "accuracy": accuracy(net, x, y)}
        )
    return history


def predict(net: Network, x: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    logits, _ = forward(net, x)
    return np.argmax(logits, axis=1)


def accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax-correct predictions."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty set")
    return float((predict(net, x) == y).mean())


def gradient_check(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float = 1e-5,
    extra_loss=None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``extra_loss`` may supply an additional differentiable term as a
    callable mapping the flat parameter vector to (loss, flat_grad); it
    is added to the cross-entropy objective on both sides of the check.
    """
    if not (0 < epsilon <= 1e-2):
        raise ValueError("epsilon must be in (0, 1e-2]")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)

    def total_loss(params: np.ndarray) -> float:
        net.set_flat_params(params)
        logits, _ = forward(net, x)
        loss, _ = softmax_cross_entropy(logits, y)
        if extra_loss is not None:
            loss += extra_loss(params)[0]
        return loss

    base = net.flatten_params()
    _, analytic = batch_loss_and_grad(net, x, y)
    if extra_loss is not None:
        analytic = analytic + extra_loss(base)[1]

    worst = 0.0
    for i in range(base.size):
        params = base.copy()
        params[i] = base[i] + epsilon
        up = total_loss(params)
        params[i] = base[i] - epsilon
        down = total_loss(params)
        numeric = (up - down) / (2.0 * epsilon)
        denom = max(abs(analytic[i]), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    net.set_flat_params(base)
    return worst


# -- serialization ----------------------------------------------------


def save_model_dict(net: Network) -> dict:
    from .zerobias import ZeroBiasHead

    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "input_dim": net.input_dim,
        "n_classes": net.n_classes,
        "layers": [
            {
                "activation": layer.activation,
                "W": layer.W.tolist(),
                "b": layer.b.tolist(),
            }
            for layer in net.layers
        ],
    }
    if isinstance(net.head, ZeroBiasHead):
        doc["head"] = {
            "type": "zero_bias",
            "W0": net.head.W0.tolist(),
            "b": net.head.b.tolist(),
            "W1": net.head.W1.tolist(),
        }
    else:
        doc["head"] = {
            "type": "dense",
            "W": net.head.W.tolist(),
            "b": net.head.b.tolist(),
        }
    return doc


def load_model_dict(doc: dict) -> Network:
    from .zerobias import ZeroBiasHead

    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    layers = [
        DenseLayer(np.array(d["W"]), np.array(d["b"]), d["activation"]) for d in doc["layers"]
    ]
    hd = doc["head"]
    if hd["type"] == "zero_bias":
        head = ZeroBiasHead(np.array(hd["W0"]), np.array(hd["b"]), np.array(hd["W1"]))
    elif hd["type"] == "dense":
        head = DenseLayer(np.array(hd["W"]), np.array(hd["b"]), "linear")
    else:
        raise ValueError(f"unknown head type {hd['type']!r}")
    return Network(layers, head, doc["input_dim"], doc["n_classes"])


def save_model(net: Network, path, snapshot: dict | None = None) -> None:
    """Write the model as a single JSON document.

    ``snapshot`` optionally attaches incremental-learning state (a
    parameter snapshot and its importance vector) to the same file.
    """
    doc = save_model_dict(net)
    if snapshot is not None:
        doc["snapshot"] = snapshot
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_model(path) -> tuple[Network, dict | None]:
    """Read a model JSON file; returns (network, snapshot-or-None)."""
    with open(path) as fh:
        doc = json.load(fh)
    return load_model_dict(doc), doc.get("snapshot")
