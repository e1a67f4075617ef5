"""Cosine-matching classification head and latent-space analytics.

The head maps features into a latent space (affine stage) and scores
each class by the cosine similarity between the latent vector and that
class's stored fingerprint row. Scores are scale-invariant in both the
latent vector and the fingerprints, so classification depends only on
directions. A fixed score multiplier sharpens the softmax during
training, since raw similarities live in [-1, 1]; the value trades
cluster tightness (larger multipliers stop compressing classes once the
softmax saturates) against convergence speed, and 6 keeps desk-scale
training converged while leaving the per-class latent clusters tight
enough for cut-off detection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import DenseLayer, Network

SCORE_SCALE = 6.0


@dataclass
class ZeroBiasHead:
    """Embedding stage plus fingerprint matching.

    Attributes:
        W0: Embedding matrix, (latent_dim, in_dim).
        b: Latent offset, (latent_dim,).
        W1: Fingerprint matrix, one row per class, (n_classes, latent_dim).
            Square at construction; incremental learning may append rows.
    """

    W0: np.ndarray
    b: np.ndarray
    W1: np.ndarray

    def __post_init__(self) -> None:
        self.W0 = np.asarray(self.W0, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        if self.W0.ndim != 2 or self.b.shape != (self.W0.shape[0],):
            raise ValueError("inconsistent embedding dimensions")
        if self.W1.ndim != 2 or self.W1.shape[1] != self.W0.shape[0]:
            raise ValueError("fingerprint rows must live in the latent space")
        for arr in (self.W0, self.b, self.W1):
            if not np.all(np.isfinite(arr)):
                raise ValueError("head parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.W0.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.W0.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W1.shape[0]

    def param_items(self):
        return [("W0", self.W0), ("b", self.b), ("W1", self.W1)]

    def forward(self, x: np.ndarray):
        """Logits are SCORE_SCALE times the cosine similarities."""
        y1 = x @ self.W0.T + self.b
        y_norm = np.linalg.norm(y1, axis=1)
        w_norm = np.linalg.norm(self.W1, axis=1)
        if np.any(y_norm == 0.0) or np.any(w_norm == 0.0):
            raise ValueError("degenerate direction")
        u = y1 / y_norm[:, None]
        v = self.W1 / w_norm[:, None]
        cos = u @ v.T
        return SCORE_SCALE * cos, (x, y1, y_norm, w_norm, u, v, cos)

    def backward(self, cache, grad_logits: np.ndarray):
        x, y1, y_norm, w_norm, u, v, cos = cache
        dcos = SCORE_SCALE * grad_logits
        # d cos_i / d y1 = (v_i - cos_i * u) / |y1|
        dy1 = (dcos @ v - (dcos * cos).sum(axis=1, keepdims=True) * u) / y_norm[:, None]
        # d cos_i / d w1_i = (u - cos_i * v_i) / |w1_i|
        dW1 = (dcos.T @ u - (dcos * cos).sum(axis=0)[:, None] * v) / w_norm[:, None]
        return dy1 @ self.W0, {"W0": dy1.T @ x, "b": dy1.sum(axis=0), "W1": dW1}


def embed(head: ZeroBiasHead, x: np.ndarray) -> np.ndarray:
    """Latent vector(s) for feature input(s): the affine stage only."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != head.in_dim:
        raise ValueError(f"expected {head.in_dim} features, got {x2.shape[1]}")
    y1 = x2 @ head.W0.T + head.b
    return y1[0] if single else y1


def match(head: ZeroBiasHead, y1: np.ndarray) -> np.ndarray:
    """Cosine similarity of a latent vector against every fingerprint row.

    The predicted class is the argmax of the returned scores. Raises on a
    zero-norm latent vector or fingerprint row, where the direction (and
    hence the score) is undefined.
    """
    y1 = np.asarray(y1, dtype=np.float64)
    y_norm = np.linalg.norm(y1)
    w_norm = np.linalg.norm(head.W1, axis=1)
    if y_norm == 0.0 or np.any(w_norm == 0.0):
        raise ValueError("degenerate direction")
    return (head.W1 @ y1) / (w_norm * y_norm)


def latent_vectors(net: Network, x: np.ndarray) -> np.ndarray:
    """Latent vectors for raw network inputs (hidden layers then embed)."""
    if not isinstance(net.head, ZeroBiasHead):
        raise ValueError("network head is not zero-bias")
    return embed(net.head, nn.hidden_forward(net, x))


def convert_head(net: Network) -> Network:
    """Rebuild a dense-head network around a cosine-matching head.

    The embedding stage starts as a truncated-identity projection of the
    head's input space onto the latent space, and the fingerprint rows
    are the old head's weight rows pushed through that same projection.
    The converted network needs retraining before accuracy parity with
    the original can be expected.
    """
    if isinstance(net.head, ZeroBiasHead):
        raise ValueError("network head is already zero-bias")
    if not isinstance(net.head, DenseLayer):
        raise ValueError("network must end in a regular dense head")
    c = net.n_classes
    h = net.head.in_dim
    projection = np.eye(c, h)
    head = ZeroBiasHead(
        W0=projection,
        b=np.zeros(c),
        W1=net.head.W @ projection.T,
    )
    layers = [DenseLayer(l.W.copy(), l.b.copy(), l.activation) for l in net.layers]
    return Network(layers, head, net.input_dim, net.n_classes)


def coverage_ratio(head, n_samples: int, seed: int = 0) -> np.ndarray:
    """Fraction of random latent directions claimed by each class.

    Directions are drawn uniformly on the unit sphere of the head's
    matching space (normalized Gaussian vectors) and each is assigned to
    the class with the best matching score: cosine similarity for a
    cosine-matching head, the affine logit for a dense head. Argmax ties
    resolve to the lowest class index, so the fractions partition 1.
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be >= 1000, got {n_samples}")
    if isinstance(head, ZeroBiasHead):
        dim = head.latent_dim
        w_norm = np.linalg.norm(head.W1, axis=1)
        if np.any(w_norm == 0.0):
            raise ValueError("degenerate direction")
        rows = head.W1 / w_norm[:, None]
        bias = None
    elif isinstance(head, DenseLayer):
        dim = head.in_dim
        rows = head.W
        bias = head.b
    else:
        raise ValueError(f"unsupported head type {type(head).__name__}")

    rng = np.random.default_rng(seed)
    n_classes = rows.shape[0]
    counts = np.zeros(n_classes, dtype=np.int64)
    remaining = n_samples
    while remaining > 0:
        chunk = min(remaining, 1 << 14)
        dirs = rng.standard_normal((chunk, dim))
        dirs /= np.maximum(np.linalg.norm(dirs, axis=1), 1e-30)[:, None]
        scores = dirs @ rows.T
        if bias is not None:
            scores = scores + bias
        counts += np.bincount(np.argmax(scores, axis=1), minlength=n_classes)
        remaining -= chunk
    return counts / n_samples


def export_latent(net: Network, x: np.ndarray, labels, path) -> int:
    """Write latent vectors and fingerprints to CSV.

    One row per record, ``label,y1_0..y1_{C-1}``, followed by one row per
    fingerprint tagged ``fingerprint:<class>``. Returns the number of
    data rows written.
    """
    if not isinstance(net.head, ZeroBiasHead):
        raise ValueError("network head is not zero-bias")
    x = np.asarray(x, dtype=np.float64)
    labels = list(labels)
    rows_written = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"y1_{i}" for i in range(net.head.latent_dim)])
        if len(labels):
            vectors = latent_vectors(net, x)
            for label, vec in zip(labels, vectors):
                writer.writerow([label] + [repr(float(v)) for v in vec])
                rows_written += 1
        for i, row in enumerate(net.head.W1):
            writer.writerow([f"fingerprint:{i}"] + [repr(float(v)) for v in row])
            rows_written += 1
    return rows_written
