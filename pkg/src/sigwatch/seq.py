"""Sequential detection of a regime change in a binary alarm stream.

Three engines consume the 0/1 output of a binary abnormality detector
whose behavior under the two regimes is Bernoulli(fpr) and
Bernoulli(tpr):

* a clamped cumulative sum of per-sample log-likelihood ratios that
  alarms when the statistic exceeds a threshold h,
* an exponentially weighted moving average control chart with
  time-varying limits for Bernoulli observations,
* a sliding window that alarms when the window mean crosses a fraction
  threshold.

Step functions are pure (they return an updated detector), and a
vectorized Monte-Carlo driver measures detection delay and false alarm
behavior over many independent trials.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from .detector import BernoulliModel

ALGORITHMS = ("cusum", "ewma", "window")
DEFAULT_EWMA_LAMBDA = 0.15
DEFAULT_WINDOW_THRESHOLD = 0.7
DEFAULT_POST_CHANGE_BUDGET = 2000


def llr(i: int, model: BernoulliModel) -> float:
    """Log-likelihood ratio of one binary detector output.

    Positive evidence for the abnormal regime when i = 1 (given
    tpr > fpr), negative when i = 0. Rates at exactly 0 or 1 make one of
    the logs blow up and are rejected.
    """
    if not (0.0 < model.fpr < 1.0 and 0.0 < model.tpr < 1.0):
        raise ValueError("degenerate likelihood")
    if i not in (0, 1):
        raise ValueError(f"binary output must be 0 or 1, got {i}")
    if i == 1:
        return math.log(model.tpr / model.fpr)
    return math.log((1.0 - model.tpr) / (1.0 - model.fpr))


@dataclass(frozen=True)
class CusumDetector:
    """Clamped cumulative-sum state over log-likelihood ratios."""

    model: BernoulliModel
    h: float
    s: float = 0.0

    def __post_init__(self) -> None:
        if self.h <= 0:
            raise ValueError(f"threshold h must be > 0, got {self.h}")
        if self.s < 0:
            raise ValueError("statistic must be >= 0")


def cusum_step(detector: CusumDetector, i: int) -> tuple[CusumDetector, bool]:
    """Advance one sample; alarm when the clamped sum exceeds h."""
    s = max(0.0, detector.s + llr(i, detector.model))
    return replace(detector, s=s), s > detector.h


@dataclass(frozen=True)
class EwmaDetector:
    """EWMA control chart over the binary stream.

    The in-control mean is the detector's false positive rate; the
    control limit uses the standard time-varying EWMA standard deviation
    for Bernoulli variance fpr * (1 - fpr). ``z`` starts at the
    in-control mean and ``n`` counts the samples seen.
    """

    model: BernoulliModel
    lam: float = DEFAULT_EWMA_LAMBDA
    L: float = 3.0
    z: float | None = None
    n: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.lam <= 1.0):
            raise ValueError(f"lam must be in (0, 1], got {self.lam}")
        if self.z is None:
            object.__setattr__(self, "z", self.model.fpr)
        if not (0.0 <= self.z <= 1.0):
            raise ValueError("z must stay in [0, 1]")

    @property
    def in_control_mean(self) -> float:
        return self.model.fpr

    def limit(self, n: int) -> float:
        """Upper control limit after n samples."""
        p = self.model.fpr
        var = p * (1.0 - p) * self.lam / (2.0 - self.lam) * (1.0 - (1.0 - self.lam) ** (2 * n))
        return p + self.L * math.sqrt(var)


def ewma_step(detector: EwmaDetector, i: int) -> tuple[EwmaDetector, bool]:
    """Advance one sample; alarm when the average exceeds the control limit."""
    if i not in (0, 1):
        raise ValueError(f"binary output must be 0 or 1, got {i}")
    z = detector.lam * i + (1.0 - detector.lam) * detector.z
    n = detector.n + 1
    return replace(detector, z=z, n=n), z > detector.limit(n)


@dataclass(frozen=True)
class WindowDetector:
    """Sliding window vote over the last ``length`` outputs."""

    length: int
    threshold: float = DEFAULT_WINDOW_THRESHOLD
    buffer: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError(f"window length must be >= 1, got {self.length}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError("threshold must be in [0, 1]")


def window_step(detector: WindowDetector, i: int) -> tuple[WindowDetector, bool]:
    """Push one sample; alarm only once full and the mean crosses threshold."""
    if i not in (0, 1):
        raise ValueError(f"binary output must be 0 or 1, got {i}")
    buffer = (detector.buffer + (i,))[-detector.length :]
    updated = replace(detector, buffer=buffer)
    if len(buffer) < detector.length:
        return updated, False
    return updated, sum(buffer) / detector.length > detector.threshold


@dataclass(frozen=True)
class DelayStats:
    """Detection-delay summary over a batch of Monte-Carlo trials.

    Delays are in samples past the change point, over trials that
    alarmed after the change; trials alarming earlier count toward
    false_alarm_rate and trials never alarming are reported as censored.
    Delay fields are NaN when no trial detected the change.
    """

    mean: float
    min: float
    max: float
    range: float
    n_trials: int
    false_alarm_rate: float
    censored: int
    n_detections: int


# -- vectorized trial evaluation ---------------------------------------


def _draw_streams(
    model: BernoulliModel, change_point: int, n_trials: int, max_len: int, rng
) -> np.ndarray:
    """(n_trials, max_len) binary matrix; columns past change_point flip regime."""
    u = rng.random((n_trials, max_len))
    thresholds = np.where(np.arange(max_len) < change_point, model.fpr, model.tpr)
    return (u < thresholds).astype(np.int8)


def _first_true(mask: np.ndarray) -> np.ndarray:
    """1-based column index of the first True per row, 0 when none."""
    any_true = mask.any(axis=1)
    first = mask.argmax(axis=1) + 1
    return np.where(any_true, first, 0)


def _cusum_alarm_times(streams: np.ndarray, model: BernoulliModel, h: float) -> np.ndarray:
    g1 = llr(1, model)
    g0 = llr(0, model)
    g = np.where(streams == 1, g1, g0)
    sums = np.cumsum(g, axis=1)
    padded = np.concatenate([np.zeros((streams.shape[0], 1)), sums], axis=1)
    running_min = np.minimum.accumulate(padded, axis=1)
    s = sums - running_min[:, :-1]
    # identical to iterating s = max(0, s + g): the clamp resets the sum
    # to its running minimum
    s = np.maximum(s, 0.0)
    return _first_true(s > h)


def _ewma_alarm_times(
    streams: np.ndarray, model: BernoulliModel, L: float, lam: float
) -> np.ndarray:
    z0 = model.fpr
    zi = np.full((streams.shape[0], 1), (1.0 - lam) * z0)
    z, _ = lfilter([lam], [1.0, -(1.0 - lam)], streams.astype(np.float64), axis=1, zi=zi)
    n = np.arange(1, streams.shape[1] + 1)
    p = model.fpr
    var = p * (1.0 - p) * lam / (2.0 - lam) * (1.0 - (1.0 - lam) ** (2 * n))
    limits = p + L * np.sqrt(var)
    return _first_true(z > limits)


def _window_alarm_times(streams: np.ndarray, length: int, threshold: float) -> np.ndarray:
    sums = np.cumsum(streams, axis=1, dtype=np.int64)
    padded = np.concatenate([np.zeros((streams.shape[0], 1), dtype=np.int64), sums], axis=1)
    window_sums = padded[:, length:] - padded[:, :-length]
    mask = window_sums / length > threshold
    times = _first_true(mask)
    return np.where(times > 0, times + length - 1, 0)


def _alarm_times(
    algorithm: str,
    param: float,
    streams: np.ndarray,
    model: BernoulliModel,
    ewma_lambda: float,
    window_threshold: float,
) -> np.ndarray:
    if algorithm == "cusum":
        return _cusum_alarm_times(streams, model, float(param))
    if algorithm == "ewma":
        return _ewma_alarm_times(streams, model, float(param), ewma_lambda)
    if algorithm == "window":
        return _window_alarm_times(streams, int(param), window_threshold)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _stats_from_alarms(times: np.ndarray, change_point: int, n_trials: int) -> DelayStats:
    false_alarms = int(((times > 0) & (times <= change_point)).sum())
    censored = int((times == 0).sum())
    delays = times[times > change_point] - change_point
    if delays.size:
        d_min = float(delays.min())
        d_max = float(delays.max())
        stats = (float(delays.mean()), d_min, d_max, d_max - d_min)
    else:
        stats = (math.nan, math.nan, math.nan, math.nan)
    return DelayStats(
        mean=stats[0],
        min=stats[1],
        max=stats[2],
        range=stats[3],
        n_trials=n_trials,
        false_alarm_rate=false_alarms / n_trials,
        censored=censored,
        n_detections=int(delays.size),
    )


def simulate_delay(
    algorithm: str,
    param: float,
    model: BernoulliModel,
    change_point: int,
    n_trials: int,
    max_len: int | None = None,
    seed: int = 0,
    ewma_lambda: float = DEFAULT_EWMA_LAMBDA,
    window_threshold: float = DEFAULT_WINDOW_THRESHOLD,
) -> DelayStats:
    """Monte-Carlo detection-delay measurement for one detector setup.

    Each trial draws an independent stream, Bernoulli(fpr) before the
    change point and Bernoulli(tpr) after, and runs the detector until
    its first alarm. Results are a pure function of the arguments; the
    same seed reproduces the same streams for every algorithm, so
    comparisons at matched rates are paired.

    Args:
        algorithm: "cusum", "ewma" or "window".
        param: The algorithm's swept parameter (h, L, or window length).
        model: Detector rates; cusum/ewma need both rates strictly
            inside (0, 1).
        change_point: Index of the last pre-change sample (so a detector
            alarming on the very next sample scores delay 1).
        n_trials: Number of independent trials, at least 100.
        max_len: Total stream length; defaults to change_point + 2000.
            Trials with no alarm by then are censored, not errors.
        seed: Stream seed.
    """
    if max_len is None:
        max_len = change_point + DEFAULT_POST_CHANGE_BUDGET
    if not change_point < max_len:
        raise ValueError("change_point must be < max_len")
    if n_trials < 100:
        raise ValueError(f"n_trials must be >= 100, got {n_trials}")
    rng = np.random.default_rng(seed)
    streams = _draw_streams(model, change_point, n_trials, max_len, rng)
    times = _alarm_times(algorithm, param, streams, model, ewma_lambda, window_threshold)
    return _stats_from_alarms(times, change_point, n_trials)


@dataclass(frozen=True)
class SweepRow:
    """One (algorithm, rate point, parameter) cell of a sweep."""

    algorithm: str
    tpr: float
    fpr: float
    q: float
    param: float
    stats: DelayStats


def sweep(
    tprs,
    fpr: float,
    cusum_hs,
    ewma_Ls,
    window_lengths,
    change_point: int = 500,
    n_trials: int = 10000,
    max_len: int | None = None,
    seed: int = 0,
    ewma_lambda: float = DEFAULT_EWMA_LAMBDA,
    window_threshold: float = DEFAULT_WINDOW_THRESHOLD,
) -> list[SweepRow]:
    """Run every algorithm over its parameter grid at each rate point.

    All algorithms and parameters at a given (tpr, fpr) see identical
    streams, so cross-algorithm comparisons are matched sample by
    sample. Rows come back grouped by rate point in grid order.
    """
    if max_len is None:
        max_len = change_point + DEFAULT_POST_CHANGE_BUDGET
    tprs = list(tprs)
    if not tprs:
        raise ValueError("empty grid")
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(tprs))
    rows: list[SweepRow] = []
    for tpr, child in zip(tprs, children):
        model = BernoulliModel(fpr=fpr, tpr=tpr)
        streams = _draw_streams(model, change_point, n_trials, max_len, np.random.default_rng(child))
        grids = [
            ("cusum", cusum_hs),
            ("ewma", ewma_Ls),
            ("window", window_lengths),
        ]
        for algorithm, params in grids:
            for param in params:
                times = _alarm_times(
                    algorithm, param, streams, model, ewma_lambda, window_threshold
                )
                rows.append(
                    SweepRow(
                        algorithm=algorithm,
                        tpr=tpr,
                        fpr=fpr,
                        q=tpr / fpr,
                        param=float(param),
                        stats=_stats_from_alarms(times, change_point, n_trials),
                    )
                )
    return rows


SWEEP_CSV_HEADER = [
    "algorithm",
    "tpr",
    "fpr",
    "q",
    "param",
    "mean_delay",
    "min_delay",
    "max_delay",
    "range",
    "false_alarm_rate",
    "censored",
]


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.algorithm,
                    repr(row.tpr),
                    repr(row.fpr),
                    repr(row.q),
                    repr(row.param),
                    repr(row.stats.mean),
                    repr(row.stats.min),
                    repr(row.stats.max),
                    repr(row.stats.range),
                    repr(row.stats.false_alarm_rate),
                    row.stats.censored,
                ]
            )


def write_stream(bits, path) -> None:
    """Write a binary stream as one 0/1 character per line."""
    with open(path, "w") as fh:
        for bit in bits:
            if int(bit) not in (0, 1):
                raise ValueError("stream entries must be 0 or 1")
            fh.write(f"{int(bit)}\n")


def read_stream(path) -> np.ndarray:
    """Read a newline-separated 0/1 stream."""
    with open(path) as fh:
        bits = [line.strip() for line in fh if line.strip()]
    values = np.array([int(b) for b in bits], dtype=np.int8)
    if values.size and not np.isin(values, (0, 1)).all():
        raise ValueError("stream entries must be 0 or 1")
    return values
