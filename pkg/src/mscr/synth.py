"""Synthetic single-lead ECG generator for the desk-scale benchmark.

A normal beat is a sum of five Gaussian bumps (P, Q, R, S, T) placed at
bpm-jittered beat times; white noise is added last. Abnormal records
perturb one beat (or insert one) and carry point labels over the exact
support interval of the perturbation, computed on the noise-free signals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ContractError
from .sigproc import EcgRecord

# (name, amplitude, offset from R in seconds, gaussian width in seconds)
DEFAULT_WAVES = (
    ("P", 0.12, -0.180, 0.025),
    ("Q", -0.10, -0.035, 0.010),
    ("R", 1.00, 0.000, 0.012),
    ("S", -0.20, 0.035, 0.012),
    ("T", 0.30, 0.250, 0.040),
)

ANOMALY_TYPES = ("dropout_beat", "premature_beat", "st_shift", "widened_qrs")


@dataclass
class AnomalySpec:
    type: str
    position: float = 0.5  # fraction of record duration
    magnitude: float = 1.0


@dataclass
class SynthParams:
    fs: float = 100.0
    duration_s: float = 5.12
    bpm: float = 72.0
    bpm_jitter: float = 0.03  # fractional std of each inter-beat interval
    waves: tuple = DEFAULT_WAVES
    noise_std: float = 0.04
    anomaly: Optional[AnomalySpec] = None

    def __post_init__(self):
        if not 30 <= self.bpm <= 200:
            raise ContractError(f"bpm must be in [30, 200], got {self.bpm}")
        if self.noise_std < 0:
            raise ContractError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.anomaly is not None and self.anomaly.type not in ANOMALY_TYPES:
            raise ContractError(
                f"unknown anomaly type {self.anomaly.type!r}, expected one of {ANOMALY_TYPES}"
            )


# Default test mix: value anomalies only. Restoration-error maps flag points
# whose values are wrong, so a removed beat (flat gap restores as flat) has no
# point-level signature; dropout_beat stays available for patient-level runs.
DEFAULT_TEST_MIX = ("premature_beat", "st_shift", "widened_qrs")


@dataclass
class DatasetConfig:
    """Counts and variation knobs for the generated benchmark."""

    n_train: int = 256
    n_test_normal: int = 64
    n_test_abnormal: int = 64
    fs: float = 100.0
    duration_s: float = 5.12
    bpm_lo: float = 60.0
    bpm_hi: float = 90.0
    bpm_jitter: float = 0.03
    noise_std: float = 0.04
    morph_jitter: float = 0.15  # per-record wave amplitude/width variation
    anomaly_magnitude: float = 1.0
    anomaly_types: tuple = DEFAULT_TEST_MIX
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.morph_jitter < 1:
            raise ContractError(f"morph_jitter must be in [0, 1), got {self.morph_jitter}")
        if not self.anomaly_types:
            raise ContractError("anomaly_types must name at least one type")
        for name in self.anomaly_types:
            if name not in ANOMALY_TYPES:
                raise ContractError(
                    f"unknown anomaly type {name!r}, expected one of {ANOMALY_TYPES}"
                )


def _beat_times(params: SynthParams, rng: np.random.Generator) -> np.ndarray:
    base = 60.0 / params.bpm
    t = 0.40  # first beat clear of the record edge
    times = []
    while t < params.duration_s - 0.45:  # leave room for the T wave
        times.append(t)
        t += base * (1.0 + params.bpm_jitter * rng.standard_normal())
    return np.array(times)


def _bumps(t: np.ndarray, beat_times, waves) -> np.ndarray:
    x = np.zeros_like(t)
    for tb in beat_times:
        for _, amp, off, width in waves:
            x += amp * np.exp(-0.5 * ((t - (tb + off)) / width) ** 2)
    return x


def _pick_beat(beat_times: np.ndarray, position: float) -> int:
    """Index of the beat nearest position*duration, excluding the edges."""
    if beat_times.size < 3:
        raise ContractError("record too short to host an anomaly (needs >= 3 beats)")
    target = beat_times[0] + position * (beat_times[-1] - beat_times[0])
    j = int(np.argmin(np.abs(beat_times - target)))
    return int(np.clip(j, 1, beat_times.size - 2))


def _hann_bump(t: np.ndarray, start: float, dur: float) -> np.ndarray:
    u = (t - start) / dur
    inside = (u >= 0) & (u <= 1)
    out = np.zeros_like(t)
    out[inside] = 0.5 * (1.0 - np.cos(2.0 * np.pi * u[inside]))
    return out


def synth_ecg_with_truth(params: SynthParams, rng: np.random.Generator):
    """Generate one record plus the ground truth used by oracle tests.

    Returns (record, meta) where meta carries the beat schedule (seconds
    and sample indices) and, for abnormal records, the label interval.
    """
    n = int(round(params.duration_s * params.fs))
    t = np.arange(n) / params.fs
    beat_times = _beat_times(params, rng)
    clean = _bumps(t, beat_times, params.waves)

    meta = {
        "beat_times_s": beat_times,
        "beat_indices": np.round(beat_times * params.fs).astype(np.int64),
        "anomaly_interval": None,
    }

    spec = params.anomaly
    if spec is None:
        perturbed = clean
        point_labels = np.zeros(n, dtype=np.int64)
        record_label = 0
    else:
        mag = spec.magnitude
        j = _pick_beat(beat_times, spec.position)
        tb = beat_times[j]
        if spec.type == "dropout_beat":
            kept = np.delete(beat_times, j)
            perturbed = _bumps(t, kept, params.waves)
        elif spec.type == "premature_beat":
            tb_new = tb + 0.42 * (beat_times[j + 1] - tb)
            perturbed = clean + _bumps(t, [tb_new], params.waves) * 0.95 * mag
        elif spec.type == "st_shift":
            perturbed = clean + 0.45 * mag * _hann_bump(t, tb + 0.05, 0.30)
        else:  # widened_qrs
            widen = 1.0 + 1.3 * mag
            kept = np.delete(beat_times, j)
            wide_waves = tuple(
                (name, amp * (0.9 if name == "R" else 1.0), off, width * widen)
                if name in ("Q", "R", "S")
                else (name, amp, off, width)
                for name, amp, off, width in params.waves
            )
            perturbed = _bumps(t, kept, params.waves) + _bumps(t, [tb], wide_waves)

        diff = np.abs(perturbed - clean)
        # Label support where the perturbation carries weight; a pure
        # absolute floor would sweep in far Gaussian tails that sit well
        # below the noise floor and are unobservable by construction.
        hot = np.nonzero(diff > max(1e-4, 0.05 * float(diff.max())))[0]
        point_labels = np.zeros(n, dtype=np.int64)
        if hot.size:
            point_labels[hot[0] : hot[-1] + 1] = 1
            meta["anomaly_interval"] = (int(hot[0]), int(hot[-1]) + 1)
        record_label = 1

    samples = perturbed + params.noise_std * rng.standard_normal(n)
    record = EcgRecord(
        samples=samples,
        sampling_rate_hz=params.fs,
        record_label=record_label,
        point_labels=point_labels,
    )
    return record, meta


def synth_ecg(params: SynthParams, rng: np.random.Generator) -> EcgRecord:
    record, _ = synth_ecg_with_truth(params, rng)
    return record


def _record_params(cfg: DatasetConfig, rng: np.random.Generator, anomaly=None) -> SynthParams:
    # Per-record morphology: amplitudes and widths vary between individuals,
    # so a single population prior cannot reconstruct every record exactly.
    j = cfg.morph_jitter
    waves = tuple(
        (
            name,
            amp * (1.0 + j * float(rng.uniform(-1.0, 1.0))),
            off,
            width * (1.0 + 0.5 * j * float(rng.uniform(-1.0, 1.0))),
        )
        for name, amp, off, width in DEFAULT_WAVES
    )
    return SynthParams(
        fs=cfg.fs,
        duration_s=cfg.duration_s,
        bpm=float(rng.uniform(cfg.bpm_lo, cfg.bpm_hi)),
        bpm_jitter=cfg.bpm_jitter,
        waves=waves,
        noise_std=cfg.noise_std,
        anomaly=anomaly,
    )


def make_dataset(cfg: DatasetConfig):
    """Build (train_records, test_records) with anomaly types balanced
    round-robin over the abnormal test records.
    """
    if cfg.n_train < 1 or cfg.n_test_normal < 0 or cfg.n_test_abnormal < 0:
        raise ContractError(
            f"record counts must be positive train / non-negative test, got "
            f"{cfg.n_train}/{cfg.n_test_normal}/{cfg.n_test_abnormal}"
        )
    root = np.random.SeedSequence(cfg.seed)
    n_total = cfg.n_train + cfg.n_test_normal + cfg.n_test_abnormal
    streams = [np.random.default_rng(s) for s in root.spawn(n_total)]

    train = []
    for i in range(cfg.n_train):
        rec = synth_ecg(_record_params(cfg, streams[i]), streams[i])
        rec.record_label = None
        rec.point_labels = None
        train.append(rec)

    test = []
    for i in range(cfg.n_test_normal):
        rng = streams[cfg.n_train + i]
        test.append(synth_ecg(_record_params(cfg, rng), rng))
    for i in range(cfg.n_test_abnormal):
        rng = streams[cfg.n_train + cfg.n_test_normal + i]
        anomaly = AnomalySpec(
            type=cfg.anomaly_types[i % len(cfg.anomaly_types)],
            position=float(rng.uniform(0.3, 0.7)),
            magnitude=cfg.anomaly_magnitude,
        )
        test.append(synth_ecg(_record_params(cfg, rng, anomaly), rng))
    return train, test
