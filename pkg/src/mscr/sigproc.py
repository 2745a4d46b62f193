"""ECG preprocessing: filtering, R-peak detection, beat segmentation,
trend extraction, normalization, and mask generation.

Everything here is a pure function of its inputs (plus an explicit rng
where randomness is involved), so records can be processed concurrently.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import butter, filtfilt, iirnotch, sosfiltfilt

from .autodiff import ContractError


@dataclass
class EcgRecord:
    """A single-lead ECG trace with optional labels.

    record_label: 0 = normal, 1 = abnormal, None = unlabeled.
    point_labels: per-sample binary anomaly annotation, or None.
    """

    samples: np.ndarray
    sampling_rate_hz: float
    record_label: Optional[int] = None
    point_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ContractError(
                f"record needs a 1-D signal of length >= 2, got shape {self.samples.shape}"
            )
        if self.sampling_rate_hz <= 0:
            raise ContractError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        if self.point_labels is not None:
            self.point_labels = np.asarray(self.point_labels, dtype=np.int64)
            if self.point_labels.shape != self.samples.shape:
                raise ContractError(
                    f"point_labels length {self.point_labels.size} != signal length {self.samples.size}"
                )


@dataclass
class Heartbeat:
    samples: np.ndarray
    r_peak_source_index: int
    beat_index: int


@dataclass
class MaskSpec:
    """keep[i] == 1 means sample i stays visible; 0 means it is masked."""

    keep: np.ndarray
    ratio: float
    regions: list  # (start, length) of each masked interval, sorted


@dataclass
class TrendSignal:
    values: np.ndarray
    smoothing_window: int


@dataclass
class PipelineConfig:
    target_fs: float = 100.0
    bandpass_lo: float = 0.5
    bandpass_hi: float = 40.0
    bandpass_order: int = 4
    notch_hz: float = 50.0
    notch_q: float = 30.0
    trend_window: int = 9


@dataclass
class PreparedRecord:
    """Output of prepare_record: the model-ready view of one ECG."""

    x: np.ndarray
    fs: float
    rpeaks: list
    beats: list
    trend: TrendSignal
    record_label: Optional[int] = None
    point_labels: Optional[np.ndarray] = None


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# -- filters ---------------------------------------------------------------


def butterworth_bandpass(
    x: np.ndarray, fs: float, lo: float, hi: float, order: int = 4
) -> np.ndarray:
    """Zero-phase Butterworth band-pass (forward-backward over biquads)."""
    x = np.asarray(x, dtype=np.float64)
    if not (0 < lo < hi < fs / 2):
        raise ContractError(f"invalid band [{lo}, {hi}] Hz at fs={fs}")
    if order < 2 or order % 2 != 0:
        raise ContractError(f"order must be a positive even integer, got {order}")
    sos = butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return sosfiltfilt(sos, x)


def notch_filter(x: np.ndarray, fs: float, f0: float, q: float = 30.0) -> np.ndarray:
    """Zero-phase second-order IIR notch at f0."""
    x = np.asarray(x, dtype=np.float64)
    if not (0 < f0 < fs / 2):
        raise ContractError(f"notch frequency {f0} Hz outside (0, {fs / 2}) at fs={fs}")
    if q <= 0:
        raise ContractError(f"q must be positive, got {q}")
    b, a = iirnotch(f0, q, fs=fs)
    return filtfilt(b, a, x)


def znormalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ContractError("znormalize needs length >= 2")
    return (x - x.mean()) / max(float(x.std()), 1e-8)


# -- R-peak detection -------------------------------------------------------


def _detection_envelope(x: np.ndarray, fs: float) -> np.ndarray:
    """Band-pass 5-15 Hz -> centered derivative -> square -> centered
    moving-window integral (150 ms).

    Centered stages keep the envelope peak aligned with the R sample
    instead of lagging it.
    """
    hi = min(15.0, 0.45 * fs)
    lo = min(5.0, hi / 3.0)
    sos = butter(2, [lo, hi], btype="bandpass", fs=fs, output="sos")
    xf = sosfiltfilt(sos, x)
    deriv = np.gradient(xf)
    sq = deriv * deriv
    w = round_half_up(0.150 * fs)
    w = max(3, w | 1)  # odd so 'same' convolution stays centered
    return np.convolve(sq, np.ones(w) / w, mode="same")


def detect_r_peaks(x: np.ndarray, fs: float) -> list:
    """Adaptive-threshold R-peak detection.

    Returns strictly increasing indices, each a local maximum of the
    detection envelope, with at least 0.2 s between consecutive peaks.
    Threshold = 0.5 x running mean of the last 8 accepted peak heights,
    bootstrapped from the largest envelope value in the first 2 s.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 0.5 * fs:
        raise ContractError(f"need at least 0.5 s of signal ({x.size} samples at fs={fs})")
    env = _detection_envelope(x, fs)

    interior = env[1:-1]
    is_peak = (interior > env[:-2]) & (interior >= env[2:]) & (interior > 0)
    candidates = np.nonzero(is_peak)[0] + 1
    if candidates.size == 0:
        return []

    boot_span = env[: max(1, int(2 * fs))]
    boot = float(boot_span.max()) if boot_span.size else float(env.max())
    refractory = 0.2 * fs
    recent: deque = deque(maxlen=8)
    accepted: list[int] = []
    for i in candidates:
        i = int(i)
        h = float(env[i])
        thr = 0.5 * (sum(recent) / len(recent)) if recent else 0.5 * boot
        if h < thr:
            continue
        if accepted and i - accepted[-1] < refractory:
            # taller peak inside the refractory window wins
            if h > env[accepted[-1]]:
                accepted[-1] = i
                recent[-1] = h
            continue
        accepted.append(i)
        recent.append(h)
    return accepted


def segment_heartbeats(x: np.ndarray, rpeaks, d: int) -> list:
    """One beat per R-peak, window [r - d/2, r + d/2); out-of-bounds dropped."""
    x = np.asarray(x, dtype=np.float64)
    if d % 2 != 0 or d < 2:
        raise ContractError(f"beat length must be a positive even integer, got {d}")
    if d > x.size:
        raise ContractError(f"beat length {d} exceeds record length {x.size}")
    half = d // 2
    beats = []
    for r in rpeaks:
        start, end = r - half, r + half
        if start < 0 or end > x.size:
            continue
        beats.append(
            Heartbeat(samples=x[start:end].copy(), r_peak_source_index=int(r), beat_index=len(beats))
        )
    return beats


def extract_trend(x: np.ndarray, window: int = 9) -> TrendSignal:
    """Moving-average-smoothed first difference, edge-replicated padding.

    diff[k] = x[k+1] - x[k] for k < D-1 and diff[D-1] = 0, so the trend
    has the same length as the record.
    """
    x = np.asarray(x, dtype=np.float64)
    if window % 2 != 1 or window < 1:
        raise ContractError(f"smoothing window must be odd and positive, got {window}")
    if window > x.size:
        raise ContractError(f"window {window} exceeds record length {x.size}")
    diff = np.zeros_like(x)
    diff[:-1] = x[1:] - x[:-1]
    if window == 1:
        return TrendSignal(values=diff, smoothing_window=1)
    h = window // 2
    padded = np.pad(diff, h, mode="edge")
    values = sliding_window_view(padded, window).mean(axis=-1)
    return TrendSignal(values=values, smoothing_window=window)


# -- masks -------------------------------------------------------------------


def make_global_mask(D: int, ratio: float, k_regions: int, rng: np.random.Generator) -> MaskSpec:
    """Exactly round(ratio*D) zeros split into k disjoint, non-adjacent
    contiguous runs whose lengths differ by at most 1, placed uniformly
    at random (stars-and-bars over the free gap budget).
    """
    if not 0 <= ratio < 1:
        raise ContractError(f"mask ratio must be in [0, 1), got {ratio}")
    if k_regions < 1:
        raise ContractError(f"k_regions must be >= 1, got {k_regions}")
    if ratio == 0:
        return MaskSpec(keep=np.ones(D), ratio=0.0, regions=[])
    n = round_half_up(ratio * D)
    if k_regions > n:
        raise ContractError(f"k_regions={k_regions} exceeds masked point count {n}")
    k = k_regions
    free = D - n
    if free < k - 1:
        raise ContractError(
            f"cannot place {k} non-adjacent regions of {n} total masked points in length {D}"
        )
    base, rem = divmod(n, k)
    lengths = np.array([base + 1] * rem + [base] * (k - rem), dtype=np.int64)
    rng.shuffle(lengths)
    # distribute the leftover gap budget uniformly over k+1 gaps
    spare = free - (k - 1)
    cuts = np.sort(rng.choice(spare + k, size=k, replace=False))
    gaps = np.empty(k + 1, dtype=np.int64)
    gaps[0] = cuts[0]
    gaps[1:k] = cuts[1:] - cuts[:-1] - 1
    gaps[k] = spare + k - 1 - cuts[-1]

    keep = np.ones(D)
    regions = []
    pos = int(gaps[0])
    for i in range(k):
        length = int(lengths[i])
        keep[pos : pos + length] = 0.0
        regions.append((pos, length))
        pos += length
        if i < k - 1:
            pos += 1 + int(gaps[i + 1])
    return MaskSpec(keep=keep, ratio=ratio, regions=regions)


def make_local_mask(d: int, ratio: float, rng: np.random.Generator) -> MaskSpec:
    """Exactly round(ratio*d) zeros in one contiguous run, uniform start."""
    if not 0 <= ratio < 1:
        raise ContractError(f"mask ratio must be in [0, 1), got {ratio}")
    n = round_half_up(ratio * d)
    if n == 0:
        return MaskSpec(keep=np.ones(d), ratio=ratio, regions=[])
    start = int(rng.integers(0, d - n + 1))
    keep = np.ones(d)
    keep[start : start + n] = 0.0
    return MaskSpec(keep=keep, ratio=ratio, regions=[(start, n)])


# -- record preparation -------------------------------------------------------


def resample_linear(x: np.ndarray, fs_in: float, fs_out: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n_out = max(2, int(round(x.size * fs_out / fs_in)))
    t_out = np.arange(n_out) / fs_out
    t_in = np.arange(x.size) / fs_in
    return np.interp(t_out, t_in, x)


def prepare_record(record: EcgRecord, cfg: PipelineConfig, d: int) -> PreparedRecord:
    """Resample to the target rate, filter, z-normalize, detect beats,
    and extract the trend. The returned signal is what the model sees.
    """
    x = record.samples
    fs = float(record.sampling_rate_hz)
    labels = record.point_labels
    if abs(fs - cfg.target_fs) > 1e-9:
        n_in = x.size
        x = resample_linear(x, fs, cfg.target_fs)
        if labels is not None:
            src = np.clip(
                np.round(np.arange(x.size) / cfg.target_fs * fs).astype(np.int64), 0, n_in - 1
            )
            labels = labels[src]
        fs = cfg.target_fs
    x = butterworth_bandpass(x, fs, cfg.bandpass_lo, cfg.bandpass_hi, cfg.bandpass_order)
    if cfg.notch_hz < 0.49 * fs:  # a notch at/above Nyquist is unrepresentable
        x = notch_filter(x, fs, cfg.notch_hz, cfg.notch_q)
    x = znormalize(x)
    rpeaks = detect_r_peaks(x, fs)
    beats = segment_heartbeats(x, rpeaks, d)
    trend = extract_trend(x, cfg.trend_window)
    return PreparedRecord(
        x=x,
        fs=fs,
        rpeaks=rpeaks,
        beats=beats,
        trend=trend,
        record_label=record.record_label,
        point_labels=labels,
    )
