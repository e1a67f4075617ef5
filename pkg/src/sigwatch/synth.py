"""Synthetic RF emitter bursts with device-specific impairments.

Each emitter is characterized by a small set of analog front-end
imperfections (carrier frequency offset, IQ imbalance, phase noise,
power). Bursts are pseudo-random BPSK payloads passed through those
impairments plus additive white Gaussian noise, and every burst is
reduced to a fixed 32x32x3 feature tensor. All generation is a pure
function of seeds and parameters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

BURST_LEN = 1024
SAMPLES_PER_SYMBOL = 4
CARRIER_LEAK = 0.5
ENVELOPE_WINDOW = 8
FEATURE_SHAPE = (32, 32, 3)
FEATURE_DIM = 32 * 32 * 3
SNR_DB_MIN = -20.0
SNR_DB_MAX = 60.0
TRAIN_FRACTION = 0.6


@dataclass(frozen=True)
class EmitterProfile:
    """Hardware impairment signature of a single emitter.

    Attributes:
        emitter_id: Integer class label.
        cfo: Carrier frequency offset as a fraction of the sample rate.
        iq_gain_imbalance: Gain ratio between the I and Q branches (1 = none).
        iq_phase_imbalance: Quadrature skew in radians (0 = none).
        phase_noise_std: Per-sample oscillator phase jitter in radians.
        power: Linear amplitude scale.
    """

    emitter_id: int
    cfo: float = 0.0
    iq_gain_imbalance: float = 1.0
    iq_phase_imbalance: float = 0.0
    phase_noise_std: float = 0.0
    power: float = 1.0

    def __post_init__(self) -> None:
        if self.iq_gain_imbalance <= 0:
            raise ValueError(f"iq_gain_imbalance must be > 0, got {self.iq_gain_imbalance}")
        if self.phase_noise_std < 0:
            raise ValueError(f"phase_noise_std must be >= 0, got {self.phase_noise_std}")
        if self.power <= 0:
            raise ValueError(f"power must be > 0, got {self.power}")


@dataclass
class Burst:
    """One captured burst: complex baseband samples plus provenance."""

    samples: np.ndarray
    emitter_id: int
    snr_db: float

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.shape != (BURST_LEN,):
            raise ValueError(f"burst must hold exactly {BURST_LEN} samples, got {self.samples.shape}")


@dataclass
class FeatureTensor:
    """Per-burst feature block.

    Channel 0 is the pseudo-noise residual (sample magnitudes minus their
    smoothed envelope), channel 1 the magnitude spectrum, channel 2 the
    unwrapped phase spectrum. Channels are z-normalized across the burst.
    """

    data: np.ndarray
    emitter_id: int

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != FEATURE_SHAPE:
            raise ValueError(f"feature tensor must be {FEATURE_SHAPE}, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature tensor contains non-finite values")

    @property
    def flat(self) -> np.ndarray:
        """Row-major flattened view, length 3072."""
        return self.data.reshape(-1)


@dataclass
class Dataset:
    """Labeled feature tensors with a train/test split and class roles.

    Known classes are split for supervised training; abnormal classes
    never appear in training and exist only to probe open-set behavior.
    """

    records: list[FeatureTensor]
    split: list[str]
    known_classes: frozenset[int] = field(default_factory=frozenset)
    abnormal_classes: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if len(self.records) != len(self.split):
            raise ValueError("records and split must have equal length")
        if self.known_classes & self.abnormal_classes:
            raise ValueError("known and abnormal class sets must be disjoint")
        for rec, sp in zip(self.records, self.split):
            if sp not in ("train", "test"):
                raise ValueError(f"split entries must be 'train' or 'test', got {sp!r}")
            if sp == "train" and rec.emitter_id in self.abnormal_classes:
                raise ValueError("abnormal classes must not appear in the training split")

    def arrays(self, split: str | None = None, classes: frozenset[int] | None = None):
        """Return (features, labels) matrices filtered by split and class set."""
        rows = []
        labels = []
        for rec, sp in zip(self.records, self.split):
            if split is not None and sp != split:
                continue
            if classes is not None and rec.emitter_id not in classes:
                continue
            rows.append(rec.flat)
            labels.append(rec.emitter_id)
        if not rows:
            return np.empty((0, FEATURE_DIM)), np.empty((0,), dtype=np.int64)
        return np.stack(rows), np.asarray(labels, dtype=np.int64)

    def train_arrays(self):
        return self.arrays("train", self.known_classes)

    def test_arrays(self):
        return self.arrays("test", self.known_classes)

    def abnormal_arrays(self):
        return self.arrays(None, self.abnormal_classes)


def _payload(payload_seed: int) -> np.ndarray:
    """Pseudo-random BPSK payload with rectangular pulses.

    A constant carrier-leakage term rides on the symbols, as in real
    transmit chains with LO feedthrough; after the frequency offset is
    applied it becomes a spectral line at the emitter's offset, the most
    stable burst-to-burst signature of an emitter.
    """
    rng = np.random.default_rng(payload_seed % 2**63)
    bits = rng.integers(0, 2, BURST_LEN // SAMPLES_PER_SYMBOL) * 2 - 1
    return np.repeat(bits, SAMPLES_PER_SYMBOL).astype(np.complex128) + CARRIER_LEAK


def synth_burst(
    profile: EmitterProfile,
    payload_seed: int,
    snr_db: float,
    noise_seed: int = 0,
) -> Burst:
    """Generate one impaired burst from an emitter.

    The payload depends only on payload_seed, so two emitters given the
    same seed transmit identical symbols and differ only through their
    impairments. Noise and phase jitter are seeded from (payload_seed,
    emitter_id, noise_seed), making the whole burst reproducible.

    Args:
        profile: Emitter impairment signature.
        payload_seed: Seed selecting the transmitted symbol sequence.
        snr_db: Signal-to-noise ratio in dB; ``math.inf`` disables the
            noise path entirely. Finite values outside [-20, 60] are
            rejected as degenerate.
        noise_seed: Extra seed entropy, shared by a whole dataset.

    Returns:
        Burst of 1024 complex samples.
    """
    if math.isfinite(snr_db) and not (SNR_DB_MIN <= snr_db <= SNR_DB_MAX):
        raise ValueError(f"snr_db must be in [{SNR_DB_MIN}, {SNR_DB_MAX}] dB, got {snr_db}")

    x = _payload(payload_seed)

    # IQ imbalance as the classic image-leakage model; identity when
    # gain imbalance is 1 and phase imbalance is 0.
    g = profile.iq_gain_imbalance
    phi = profile.iq_phase_imbalance
    mu = 0.5 * (1.0 + g * np.exp(1j * phi))
    nu = 0.5 * (1.0 - g * np.exp(1j * phi))
    x = mu * x + nu * np.conj(x)

    n = np.arange(BURST_LEN)
    x = x * np.exp(2j * np.pi * profile.cfo * n)

    rng = np.random.default_rng(
        [payload_seed % 2**63, (profile.emitter_id + 1) % 2**63, noise_seed % 2**63]
    )
    x = x * np.exp(1j * profile.phase_noise_std * rng.standard_normal(BURST_LEN))
    x = profile.power * x

    if math.isfinite(snr_db):
        sig_power = float(np.mean(np.abs(x) ** 2))
        noise_power = sig_power / 10.0 ** (snr_db / 10.0)
        scale = math.sqrt(noise_power / 2.0)
        x = x + scale * (rng.standard_normal(BURST_LEN) + 1j * rng.standard_normal(BURST_LEN))

    return Burst(samples=x, emitter_id=profile.emitter_id, snr_db=snr_db)


def envelope_residual(samples: np.ndarray) -> np.ndarray:
    """Sample magnitudes minus their moving-average envelope (window 8)."""
    mag = np.abs(samples)
    env = uniform_filter1d(mag, size=ENVELOPE_WINDOW, mode="nearest")
    return mag - env


def _znorm(v: np.ndarray) -> np.ndarray:
    centered = v - v.mean()
    std = centered.std()
    if std > 1e-12:
        return centered / std
    return centered


def extract_features(burst: Burst) -> FeatureTensor:
    """Reduce a burst to its 32x32x3 feature tensor.

    Raises:
        ValueError: if the burst is all zeros ("degenerate burst"), since
            channel normalization is undefined there.
    """
    if not np.any(np.abs(burst.samples)):
        raise ValueError("degenerate burst")
    spectrum = np.fft.fft(burst.samples)
    channels = [
        _znorm(envelope_residual(burst.samples)),
        _znorm(np.abs(spectrum)),
        _znorm(np.unwrap(np.angle(spectrum))),
    ]
    data = np.stack([c.reshape(FEATURE_SHAPE[:2]) for c in channels], axis=-1)
    return FeatureTensor(data=data, emitter_id=burst.emitter_id)


def random_profiles(n: int, seed: int) -> list[EmitterProfile]:
    """Draw n distinct emitter profiles.

    Frequency offsets sit on a jittered grid with about 1.5 FFT bins
    between neighboring emitters (in shuffled order). All emitters share
    the same nominal carrier, as a real transponder population does, and
    differ only through these small oscillator offsets plus the other
    analog impairments drawn independently per emitter.
    """
    rng = np.random.default_rng(seed)
    slots = rng.permutation(n)
    slot_width = 1.5 / BURST_LEN
    profiles = []
    for i in range(n):
        cfo = (slots[i] + rng.uniform(0.25, 0.75) - n / 2.0) * slot_width
        profiles.append(
            EmitterProfile(
                emitter_id=i,
                cfo=float(cfo),
                iq_gain_imbalance=float(rng.uniform(0.85, 1.15)),
                iq_phase_imbalance=float(rng.uniform(-0.15, 0.15)),
                phase_noise_std=float(rng.uniform(0.001, 0.008)),
                power=float(rng.uniform(0.8, 1.25)),
            )
        )
    return profiles


def make_dataset(
    n_known: int,
    n_abnormal: int,
    bursts_per_emitter: int,
    seed: int,
    snr_db: float = 25.0,
) -> Dataset:
    """Generate a labeled synthetic workload.

    Emitters 0..n_known-1 are the known classes, split 60/40 into train
    and test per class. Emitters n_known..n_known+n_abnormal-1 form the
    abnormal pool and are never assigned to the training split.
    """
    if n_known < 2:
        raise ValueError(f"n_known must be >= 2, got {n_known}")
    if bursts_per_emitter < 10:
        raise ValueError(f"bursts_per_emitter must be >= 10, got {bursts_per_emitter}")

    profiles = random_profiles(n_known + n_abnormal, seed)
    n_train = int(round(TRAIN_FRACTION * bursts_per_emitter))

    records: list[FeatureTensor] = []
    split: list[str] = []
    for profile in profiles:
        known = profile.emitter_id < n_known
        for j in range(bursts_per_emitter):
            burst = synth_burst(profile, payload_seed=j, snr_db=snr_db, noise_seed=seed)
            records.append(extract_features(burst))
            split.append("train" if known and j < n_train else "test")

    return Dataset(
        records=records,
        split=split,
        known_classes=frozenset(range(n_known)),
        abnormal_classes=frozenset(range(n_known, n_known + n_abnormal)),
    )


def export_dataset_csv(dataset: Dataset, path) -> int:
    """Write the dataset as CSV with header emitter_id,split,f0..f3071.

    Returns the number of data rows written.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["emitter_id", "split"] + [f"f{i}" for i in range(FEATURE_DIM)])
        for rec, sp in zip(dataset.records, dataset.split):
            writer.writerow([rec.emitter_id, sp] + [repr(float(v)) for v in rec.flat])
    return len(dataset.records)


def import_dataset_csv(path) -> Dataset:
    """Read a dataset written by export_dataset_csv.

    Known classes are recovered as the classes that own at least one
    training row; all remaining classes are treated as abnormal.
    """
    records: list[FeatureTensor] = []
    split: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["emitter_id", "split"] or len(header) != 2 + FEATURE_DIM:
            raise ValueError("unrecognized dataset CSV header")
        for row in reader:
            emitter_id = int(row[0])
            values = np.asarray(row[2:], dtype=np.float64)
            records.append(
                FeatureTensor(data=values.reshape(FEATURE_SHAPE), emitter_id=emitter_id)
            )
            split.append(row[1])
    trained = {r.emitter_id for r, s in zip(records, split) if s == "train"}
    everything = {r.emitter_id for r in records}
    return Dataset(
        records=records,
        split=split,
        known_classes=frozenset(trained),
        abnormal_classes=frozenset(everything - trained),
    )
