"""Incremental learning of new classes without old training data.

New classes enter an existing classifier by appending their initial
fingerprints (mean latent or feature vectors) to the head, then training
on new-task data only. Two mechanisms protect old knowledge:

* a quadratic penalty pulling parameters toward their pre-expansion
  snapshot, weighted per parameter by a diagonal importance estimate
  (squared gradients of the log averaged softmax on held-out old-task
  data), optionally passed through an elementwise exponential so the
  weights never decay to zero;
* a binary mask locking selected parameter groups outright (their
  gradient is forced to exactly zero).

Four strategies combine these mechanisms; importance is re-estimated
after every epoch on the new-task data, so the raw weights decay toward
zero as new-task training converges while their stabilized counterparts
stay floored at one. Old-task data enters only as a per-epoch accuracy
probe on its retained validation split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import nn
from .nn import DenseLayer, Network
from .zerobias import ZeroBiasHead, latent_vectors

logger = logging.getLogger(__name__)

EXP_OVERFLOW_INPUT = 700.0
EXP_CLAMP_VALUE = 50.0
ZERO_BIAS_INCREMENTAL_L2 = 0.025
DENSE_INCREMENTAL_L2 = 0.0


class Strategy(str, Enum):
    """How parameters are locked and penalized while learning new classes."""

    GLOBAL_EWC = "global_ewc"
    TRAIN_NEW_FINGERPRINTS_ONLY = "train_new_fingerprints_only"
    PROTECT_OLD_FINGERPRINTS = "protect_old_fingerprints"
    EWC_LAST_LAYER_ONLY = "ewc_last_layer_only"


STRATEGIES_WITH_EWC = {
    Strategy.GLOBAL_EWC,
    Strategy.PROTECT_OLD_FINGERPRINTS,
    Strategy.EWC_LAST_LAYER_ONLY,
}


@dataclass
class IncrementalConfig:
    """Knobs for one incremental run.

    ``l2`` of None picks the head-type default (0 for a dense head,
    0.025 for a cosine-matching head), applied to head weights only.
    ``stabilize`` toggles the exponential on the importance weights.
    """

    strategy: Strategy = Strategy.EWC_LAST_LAYER_ONLY
    lambda1: float = 5.0
    epochs: int = 30
    learning_rate: float = 0.02
    batch_size: int = 32
    l2: float | None = None
    stabilize: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        self.strategy = Strategy(self.strategy)
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be >= 0")


@dataclass
class EpochStats:
    """Metrics taken at the end of each incremental epoch."""

    epoch: int
    task1_acc: float
    task2_acc: float
    fisher_loss: float
    weight_mean: float
    weight_min: float


def fisher_information(net: Network, x_val: np.ndarray) -> np.ndarray:
    """Diagonal importance of every parameter on a validation set.

    The model's posterior on the set is taken as the softmax outputs
    (each sample's winning-class probability) averaged over the set
    first; each parameter's importance is the squared gradient of the
    log of that average. High confidence everywhere means small
    gradients and importance near zero, which is what the exponential
    stabilization exists to floor. The result shares the network's flat
    parameter layout and is non-negative.

    Raises:
        ValueError: on an empty validation set, or when the averaged
            softmax output underflows to exactly zero ("degenerate
            posterior").
    """
    x_val = np.atleast_2d(np.asarray(x_val, dtype=np.float64))
    if x_val.shape[0] == 0:
        raise ValueError("empty validation set")
    logits, caches = nn.forward(net, x_val)
    probs = nn.softmax(logits)
    n = probs.shape[0]
    winners = np.argmax(probs, axis=1)
    won = probs[np.arange(n), winners]
    avg = float(won.mean())
    if avg == 0.0:
        raise ValueError("degenerate posterior")
    # d log(mean p_win) / d logits, with the winning class per sample
    # treated as a fixed selector
    coeff = (won / (n * avg))[:, None]
    grad_logits = -coeff * probs
    grad_logits[np.arange(n), winners] += coeff[:, 0]
    return nn.backward(net, caches, grad_logits) ** 2


def stabilize(fisher: np.ndarray) -> np.ndarray:
    """Elementwise exponential of the importance values.

    Every output entry is >= 1, so the penalty weight on a parameter can
    never decay to zero even when its raw importance does. Inputs large
    enough to overflow exp (above 700) are clamped to 50 with a warning.
    """
    fisher = np.asarray(fisher, dtype=np.float64)
    if np.any(fisher < 0):
        raise ValueError("importance values must be >= 0")
    overflow = fisher > EXP_OVERFLOW_INPUT
    if np.any(overflow):
        logger.warning(
            "clamping %d importance entries above %.0f to %.0f before exp",
            int(overflow.sum()),
            EXP_OVERFLOW_INPUT,
            EXP_CLAMP_VALUE,
        )
        fisher = np.where(overflow, EXP_CLAMP_VALUE, fisher)
    return np.exp(fisher)


def ewc_penalty(
    omega: np.ndarray,
    snapshot: np.ndarray,
    fisher: np.ndarray,
    lambda1: float,
    mask: np.ndarray,
):
    """Quadratic drift penalty and its gradient, gated by the mask."""
    if not (omega.shape == snapshot.shape == fisher.shape == mask.shape):
        raise ValueError("parameter layouts do not agree")
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ValueError("mask entries must be 0 or 1")
    drift = omega - snapshot
    weighted = mask * fisher
    value = 0.5 * lambda1 * float(np.sum(weighted * drift**2))
    grad = lambda1 * weighted * drift
    return value, grad


def ewc_loss(
    omega: np.ndarray,
    snapshot: np.ndarray,
    fisher: np.ndarray,
    lambda1: float,
    base_loss: float,
    mask: np.ndarray,
) -> float:
    """Total incremental objective: task loss plus the drift penalty."""
    value, _ = ewc_penalty(omega, snapshot, fisher, lambda1, mask)
    return base_loss + value


def init_fingerprint(net: Network, x_records: np.ndarray) -> np.ndarray:
    """Initial fingerprint of a new class: the mean of its vectors.

    For a cosine-matching head this is the mean latent vector; for a
    dense head it is the mean of the activations entering the head.
    """
    x_records = np.atleast_2d(np.asarray(x_records, dtype=np.float64))
    if x_records.shape[0] == 0:
        raise ValueError("empty set")
    if isinstance(net.head, ZeroBiasHead):
        return latent_vectors(net, x_records).mean(axis=0)
    return nn.hidden_forward(net, x_records).mean(axis=0)


def concat_fingerprints(head: ZeroBiasHead, new_fps: np.ndarray) -> ZeroBiasHead:
    """Append fingerprint rows to a cosine-matching head.

    Existing rows are copied bit for bit; the class count grows by the
    number of appended rows.
    """
    new_fps = np.atleast_2d(np.asarray(new_fps, dtype=np.float64))
    if new_fps.shape[0] and new_fps.shape[1] != head.latent_dim:
        raise ValueError(
            f"fingerprints must have {head.latent_dim} dims, got {new_fps.shape[1]}"
        )
    if new_fps.shape[0] == 0:
        return ZeroBiasHead(head.W0.copy(), head.b.copy(), head.W1.copy())
    return ZeroBiasHead(head.W0.copy(), head.b.copy(), np.vstack([head.W1, new_fps]))


def _match_row_norms(rows: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Rescale rows to the median norm of the reference rows.

    Mean feature vectors carry the data's scale, which can dwarf trained
    row norms; only the direction of an initial fingerprint is
    meaningful, so new rows adopt the typical magnitude of existing ones
    (for a cosine-matching head this changes nothing, for a dense head
    it keeps new logits from swamping old ones at insertion).
    """
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("degenerate zero-norm fingerprint")
    target = float(np.median(np.linalg.norm(reference, axis=1)))
    return rows * (target / norms)


def add_classes(net: Network, new_fps: np.ndarray) -> Network:
    """New network recognizing extra classes seeded by their fingerprints.

    Cosine-matching heads take the fingerprints as directions. Dense
    heads additionally center the new rows across the new classes before
    inserting: penultimate ReLU features are nonnegative, so an uncentered
    mean vector scores high on every input and the inserted classes
    swamp the old ones before training even starts.
    """
    new_fps = np.atleast_2d(np.asarray(new_fps, dtype=np.float64))
    k = new_fps.shape[0]
    layers = [DenseLayer(l.W.copy(), l.b.copy(), l.activation) for l in net.layers]
    if isinstance(net.head, ZeroBiasHead):
        head = concat_fingerprints(
            net.head, _match_row_norms(new_fps, net.head.W1) if k else new_fps
        )
    else:
        if k and new_fps.shape[1] != net.head.in_dim:
            raise ValueError(f"fingerprints must have {net.head.in_dim} dims")
        rows = new_fps - new_fps.mean(axis=0) if k > 1 else new_fps
        head = DenseLayer(
            np.vstack([net.head.W, _match_row_norms(rows, net.head.W)]) if k else net.head.W.copy(),
            np.concatenate([net.head.b, np.zeros(k)]),
            "linear",
        )
    return Network(layers, head, net.input_dim, net.n_classes + k)


# -- strategy scoping ---------------------------------------------------


def _block_index(net: Network):
    return {name: (start, stop, shape) for name, shape, start, stop in net.param_layout()}


def _fingerprint_entries(net: Network, classes) -> np.ndarray:
    """Flat indices of the fingerprint parameters for the given classes.

    Fingerprints are rows of the head's matching matrix; a dense head
    additionally owns one bias entry per class.
    """
    index = _block_index(net)
    name = "head.W1" if isinstance(net.head, ZeroBiasHead) else "head.W"
    start, _, shape = index[name]
    row_len = shape[1]
    idx = []
    for cls in classes:
        idx.extend(range(start + cls * row_len, start + (cls + 1) * row_len))
    if not isinstance(net.head, ZeroBiasHead):
        b_start, _, _ = index["head.b"]
        idx.extend(b_start + cls for cls in classes)
    return np.asarray(idx, dtype=np.int64)


def _strategy_mask(net: Network, strategy: Strategy, n_old: int) -> np.ndarray:
    """Binary trainability mask over the flat parameter vector."""
    n_new = net.n_classes - n_old
    old_fp = _fingerprint_entries(net, range(n_old))
    new_fp = _fingerprint_entries(net, range(n_old, n_old + n_new))
    prior = np.zeros(net.n_params, dtype=bool)
    for name, _, start, stop in net.param_layout():
        if name.startswith("layers."):
            prior[start:stop] = True

    mask = np.ones(net.n_params)
    if strategy is Strategy.GLOBAL_EWC:
        pass
    elif strategy is Strategy.TRAIN_NEW_FINGERPRINTS_ONLY:
        mask[:] = 0.0
        mask[new_fp] = 1.0
    elif strategy is Strategy.PROTECT_OLD_FINGERPRINTS:
        mask[old_fp] = 0.0
    elif strategy is Strategy.EWC_LAST_LAYER_ONLY:
        mask[prior] = 0.0
    return mask


def _existing_entries_mask(old_net: Network, new_net: Network) -> np.ndarray:
    """1.0 on parameters that already existed before class expansion."""
    old_index = _block_index(old_net)
    mask = np.zeros(new_net.n_params)
    for name, _, start, _ in new_net.param_layout():
        if name in old_index:
            o_start, o_stop, _ = old_index[name]
            mask[start : start + (o_stop - o_start)] = 1.0
    return mask


def _expand_to_layout(values: np.ndarray, old_net: Network, new_net: Network) -> np.ndarray:
    """Re-home a flat vector into the expanded layout, zero-filling new rows.

    Valid because expansion only appends rows at the end of head blocks.
    """
    old_index = _block_index(old_net)
    out = np.zeros(new_net.n_params)
    for name, _, start, _ in new_net.param_layout():
        if name in old_index:
            o_start, o_stop, _ = old_index[name]
            out[start : start + (o_stop - o_start)] = values[o_start:o_stop]
    return out


def _head_weight_mask(net: Network) -> np.ndarray:
    mask = np.zeros(net.n_params)
    for name, _, start, stop in net.param_layout():
        if name in ("head.W", "head.W0", "head.W1"):
            mask[start:stop] = 1.0
    return mask


def _importance_weights(
    fisher_raw: np.ndarray, scope: np.ndarray, stabilized: bool, cap: float
) -> np.ndarray:
    """Penalty weights actually applied during training.

    ``cap`` bounds the per-parameter weight so the SGD update on the
    quadratic anchor stays non-expansive (lr * lambda1 * weight <= 1);
    re-estimated importance can spike by orders of magnitude, and an
    uncapped weight turns the anchor step into an oscillating
    divergence. Stabilized weights keep their floor of 1 regardless.
    """
    if stabilized:
        return scope * np.minimum(stabilize(fisher_raw), max(cap, 1.0))
    return scope * np.minimum(fisher_raw, cap)


def incremental_train(
    net: Network,
    x2: np.ndarray,
    y2: np.ndarray,
    x1_val: np.ndarray,
    y1_val: np.ndarray,
    cfg: IncrementalConfig,
) -> tuple[Network, list[EpochStats]]:
    """Teach an existing classifier the new classes in (x2, y2).

    The input network is left untouched; the returned network has one
    class per distinct new label appended. New labels must be exactly
    the next class indices after the existing ones. Old-task data enters
    only through (x1_val, y1_val), as a per-epoch accuracy probe; the
    penalty weights are re-estimated each epoch from the new-task data
    alone.

    History rows carry, per epoch, the accuracy on both tasks, the value
    of the drift penalty, and summary statistics of the active penalty
    weights (mean and min over parameters with nonzero importance
    scope).
    """
    x2 = np.asarray(x2, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.int64)
    n_old = net.n_classes
    new_ids = np.unique(y2)
    if new_ids.size == 0:
        raise ValueError("empty task-2 set")
    if new_ids.min() < n_old:
        raise ValueError("overlapping class ids")
    expected = np.arange(n_old, n_old + new_ids.size)
    if not np.array_equal(new_ids, expected):
        raise ValueError(f"new class ids must be contiguous {list(expected)}, got {list(new_ids)}")

    source = net
    fisher_raw_old = fisher_information(source, x2)
    fps = np.stack([init_fingerprint(source, x2[y2 == cls]) for cls in new_ids])
    net = add_classes(source, fps)

    snapshot = net.flatten_params()
    fisher_raw = _expand_to_layout(fisher_raw_old, source, net)
    mask = _strategy_mask(net, cfg.strategy, n_old)
    has_ewc = cfg.strategy in STRATEGIES_WITH_EWC
    scope = _existing_entries_mask(source, net) * mask * (1.0 if has_ewc else 0.0)
    cap = 1.0 / (cfg.learning_rate * cfg.lambda1) if cfg.lambda1 > 0 else np.inf
    weights = _importance_weights(fisher_raw, scope, cfg.stabilize, cap)
    in_scope = scope > 0

    l2 = cfg.l2
    if l2 is None:
        l2 = ZERO_BIAS_INCREMENTAL_L2 if isinstance(net.head, ZeroBiasHead) else DENSE_INCREMENTAL_L2
    l2_mask = _head_weight_mask(net)

    rng = np.random.default_rng(cfg.seed)
    n = x2.shape[0]
    history: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grad = nn.batch_loss_and_grad(net, x2[idx], y2[idx])
            params = net.flatten_params()
            _, penalty_grad = ewc_penalty(params, snapshot, weights, cfg.lambda1, mask)
            grad = grad + penalty_grad + l2 * l2_mask * params
            net.set_flat_params(params - cfg.learning_rate * grad * mask)

        params = net.flatten_params()
        fisher_loss, _ = ewc_penalty(params, snapshot, weights, cfg.lambda1, mask)
        history.append(
            EpochStats(
                epoch=epoch,
                task1_acc=nn.accuracy(net, x1_val, y1_val),
                task2_acc=nn.accuracy(net, x2, y2),
                fisher_loss=fisher_loss,
                weight_mean=float(weights[in_scope].mean()) if in_scope.any() else 0.0,
                weight_min=float(weights[in_scope].min()) if in_scope.any() else 0.0,
            )
        )
        if has_ewc and epoch < cfg.epochs:
            weights = _importance_weights(
                fisher_information(net, x2), scope, cfg.stabilize, cap
            )
    return net, history


def write_history_csv(rows, path) -> None:
    """Write incremental histories as epoch,strategy,task1_acc,task2_acc,fisher_loss."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "strategy", "task1_acc", "task2_acc", "fisher_loss"])
        for strategy, stats in rows:
            writer.writerow(
                [
                    stats.epoch,
                    strategy.value if isinstance(strategy, Strategy) else strategy,
                    repr(stats.task1_acc),
                    repr(stats.task2_acc),
                    repr(stats.fisher_loss),
                ]
            )
