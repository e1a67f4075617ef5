"""Binary abnormality detection from a trained cosine-matching network.

A trained network is profiled on its own training split: for every
class, the centroid of the correctly classified latent vectors and the
greatest cosine distance from that centroid define a per-class
acceptance region. An input is flagged abnormal (output 1) exactly when
it falls outside every class's region.

Alarm convention: this module emits 1 for "abnormal" and 0 for "known".
The detector's behavior on a stream is then two Bernoulli distributions,
one per regime, parameterized by its false-positive and true-positive
rates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Network
from .zerobias import ZeroBiasHead, latent_vectors


@dataclass(frozen=True)
class BernoulliModel:
    """Alarm rates of a binary detector under the two stream regimes.

    fpr is the alarm probability on known traffic, tpr the alarm
    probability on abnormal traffic. A detector is only usable for
    sequential testing when fpr < tpr (quality above 1).
    """

    fpr: float
    tpr: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.fpr <= 1.0 and 0.0 <= self.tpr <= 1.0):
            raise ValueError(f"rates must lie in [0, 1], got fpr={self.fpr}, tpr={self.tpr}")

    @property
    def quality(self) -> float:
        """tpr / fpr; infinite when fpr is 0."""
        if self.fpr == 0.0:
            return float("inf")
        return self.tpr / self.fpr

    @property
    def usable(self) -> bool:
        return self.fpr < self.tpr


@dataclass
class CutoffProfile:
    """Per-class latent centroids and cut-off cosine distances."""

    centroids: np.ndarray
    cutoffs: np.ndarray

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.cutoffs = np.asarray(self.cutoffs, dtype=np.float64)
        if self.centroids.ndim != 2 or self.cutoffs.shape != (self.centroids.shape[0],):
            raise ValueError("need one centroid and one cut-off per class")
        if np.any(self.cutoffs < 0):
            raise ValueError("cut-offs must be >= 0")
        if np.any(np.linalg.norm(self.centroids, axis=1) == 0.0):
            raise ValueError("centroid norms must be > 0")

    @property
    def n_classes(self) -> int:
        return self.centroids.shape[0]


def cosine_distances(vectors: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """1 - cosine similarity between each row of vectors and a reference."""
    v_norm = np.linalg.norm(vectors, axis=1)
    r_norm = np.linalg.norm(reference)
    if r_norm == 0.0 or np.any(v_norm == 0.0):
        raise ValueError("degenerate direction")
    return 1.0 - (vectors @ reference) / (v_norm * r_norm)


def build_profile(net: Network, x: np.ndarray, y: np.ndarray, quantile: float = 1.0) -> CutoffProfile:
    """Learn per-class acceptance regions from the training split.

    Only records the network itself classifies correctly contribute: the
    centroid is the mean of their latent vectors and the cut-off is the
    greatest cosine distance from the centroid to any of them (or the
    given quantile of those distances, for robustness studies).

    Raises:
        ValueError: if the head is not cosine-matching, or some class has
            no accurately classified records.
    """
    if not isinstance(net.head, ZeroBiasHead):
        raise ValueError("profile requires a zero-bias (cosine-matching) head")
    if not (0.0 < quantile <= 1.0):
        raise ValueError("quantile must be in (0, 1]")
    y = np.asarray(y, dtype=np.int64)
    predictions = nn.predict(net, x)
    latents = latent_vectors(net, x)
    centroids = []
    cutoffs = []
    for cls in range(net.n_classes):
        mask = (y == cls) & (predictions == cls)
        if not np.any(mask):
            raise ValueError(f"class {cls} has no accurately classified records")
        vectors = latents[mask]
        centroid = vectors.mean(axis=0)
        distances = cosine_distances(vectors, centroid)
        cutoff = float(distances.max()) if quantile == 1.0 else float(np.quantile(distances, quantile))
        centroids.append(centroid)
        cutoffs.append(cutoff)
    return CutoffProfile(np.stack(centroids), np.asarray(cutoffs))


@dataclass
class BinaryDetector:
    """Immutable pairing of a trained network with its cut-off profile.

    Output polarity: 1 means the alarm fired (input looks abnormal),
    0 means the input fell inside at least one class's region.
    """

    network: Network
    profile: CutoffProfile

    def __post_init__(self) -> None:
        if self.profile.n_classes != self.network.n_classes:
            raise ValueError("profile classes must match network classes")


def detect_stream(detector: BinaryDetector, x: np.ndarray) -> np.ndarray:
    """Vector of 0/1 alarm decisions for a batch of inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    latents = latent_vectors(detector.network, x)
    inside = np.zeros(x.shape[0], dtype=bool)
    for cls in range(detector.profile.n_classes):
        distances = cosine_distances(latents, detector.profile.centroids[cls])
        inside |= distances <= detector.profile.cutoffs[cls]
    return (~inside).astype(np.int8)


def detect(detector: BinaryDetector, x: np.ndarray) -> int:
    """Single-input alarm decision (1 = abnormal)."""
    return int(detect_stream(detector, np.atleast_2d(x))[0])


def estimate_rates(detector: BinaryDetector, normal: np.ndarray, abnormal: np.ndarray):
    """Measured (fpr, tpr, fnr) on labeled evaluation pools."""
    normal = np.atleast_2d(np.asarray(normal))
    abnormal = np.atleast_2d(np.asarray(abnormal))
    if normal.shape[0] == 0 or abnormal.shape[0] == 0:
        raise ValueError("empty set")
    fpr = float(detect_stream(detector, normal).mean())
    tpr = float(detect_stream(detector, abnormal).mean())
    return fpr, tpr, 1.0 - tpr


def predict_rates_from_accuracy(acc: float) -> BernoulliModel:
    """Linear rate predictors driven by training accuracy.

    These empirical fits (fpr = 1 - acc, tpr = 0.2 + 0.77 * acc) were
    calibrated on other datasets; they are exposed as predictors for
    side-by-side comparison and nothing in this package asserts their
    accuracy on its own synthetic workload.
    """
    if not (0.0 <= acc <= 1.0):
        raise ValueError(f"accuracy must be in [0, 1], got {acc}")
    return BernoulliModel(fpr=1.0 - acc, tpr=min(1.0, 0.2 + 0.77 * acc))


# -- prior-method baseline: threshold on the best matching score -------


def max_matching_score(net: Network, x: np.ndarray) -> np.ndarray:
    """Highest per-class logit for each input (the best matching score)."""
    logits, _ = nn.forward(net, x)
    return logits.max(axis=1)


def max_margin_threshold(known_scores: np.ndarray, abnormal_scores: np.ndarray) -> float:
    """Score threshold separating known from abnormal by maximum margin.

    Candidate thresholds are the midpoints between adjacent pooled
    scores. The candidate misclassifying the fewest records wins (known
    should score above the threshold, abnormal at or below); ties go to
    the candidate sitting in the widest gap.
    """
    known_scores = np.asarray(known_scores, dtype=np.float64)
    abnormal_scores = np.asarray(abnormal_scores, dtype=np.float64)
    if known_scores.size == 0 or abnormal_scores.size == 0:
        raise ValueError("empty set")
    pooled = np.sort(np.unique(np.concatenate([known_scores, abnormal_scores])))
    if pooled.size == 1:
        return float(pooled[0])
    candidates = (pooled[:-1] + pooled[1:]) / 2.0
    gaps = pooled[1:] - pooled[:-1]
    best = None
    for tau, gap in zip(candidates, gaps):
        errors = int((known_scores <= tau).sum()) + int((abnormal_scores > tau).sum())
        key = (errors, -gap)
        if best is None or key < best[0]:
            best = (key, float(tau))
    return best[1]


def threshold_detect_stream(net: Network, x: np.ndarray, threshold: float) -> np.ndarray:
    """Alarm (1) whenever the best matching score is at or below the threshold."""
    return (max_matching_score(net, x) <= threshold).astype(np.int8)


# -- serialization -----------------------------------------------------


def save_profile(profile: CutoffProfile, path) -> None:
    doc = {
        "centroids": profile.centroids.tolist(),
        "cutoffs": profile.cutoffs.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_profile(path) -> CutoffProfile:
    with open(path) as fh:
        doc = json.load(fh)
    return CutoffProfile(np.array(doc["centroids"]), np.array(doc["cutoffs"]))
