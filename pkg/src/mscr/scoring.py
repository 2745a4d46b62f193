"""Anomaly scoring, localization maps, metrics, and the evaluation
protocol over record collections.

The record score pairs every segmented beat with the global signal,
restores under `draws` independent mask draws per pair, and sums three
terms: sigma-whitened global residuals, sigma-whitened local residuals
per beat, and plain squared trend-restoration residuals. The point map
is the same quantity without the sum over signal points, so
sum(point_map) == score by construction.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import ContractError, no_grad
from .config import PipelineConfig, ScoreConfig
from .model import ModelConfig, model_forward
from .sigproc import (
    EcgRecord,
    PreparedRecord,
    extract_trend,
    make_global_mask,
    make_local_mask,
    prepare_record,
    segment_heartbeats,
)


@dataclass
class AnomalyResult:
    score: float
    point_map: np.ndarray
    term_breakdown: tuple  # (global, local, trend) partial sums
    warnings: tuple = ()


@dataclass
class MetricReport:
    auc: float
    level: str
    f1: Optional[float] = None
    threshold: Optional[float] = None


def _threads() -> int:
    raw = os.environ.get("MSCR_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ContractError(f"MSCR_THREADS must be an integer, got {raw!r}") from exc


def _score_prepared(
    pr: PreparedRecord,
    params: dict,
    model_cfg: ModelConfig,
    score_cfg: ScoreConfig,
) -> AnomalyResult:
    D, d = model_cfg.D, model_cfg.d
    if pr.x.size != D:
        raise ContractError(f"record length {pr.x.size} != model D {D}")
    rng = np.random.default_rng(score_cfg.seed)
    warnings_out = []
    beats = pr.beats
    if not beats:
        warnings_out.append("no beats detected; local term omitted")

    g_sum = np.zeros(D)
    t_sum = np.zeros(D)
    l_map = np.zeros(D)
    passes = 0
    beat_inputs = [b.samples for b in beats] if beats else [np.zeros(d)]
    for m, beat in enumerate(beat_inputs):
        l_acc = np.zeros(d)
        for _ in range(score_cfg.draws):
            mg = make_global_mask(D, score_cfg.mask_ratio_g, score_cfg.k_regions, rng)
            ml = make_local_mask(d, score_cfg.mask_ratio_l, rng)
            with no_grad():
                out = model_forward(pr.x, beat, mg, ml, pr.trend.values, params, model_cfg)
            rg = pr.x - out.x_hat_g.data
            g_sum += rg * rg / out.sigma_g.data
            rt = pr.x - out.x_hat_t.data
            t_sum += rt * rt
            passes += 1
            if beats:
                rl = beat - out.x_hat_l.data
                l_acc += rl * rl / out.sigma_l.data
        if beats:
            half = d // 2
            start = beats[m].r_peak_source_index - half
            l_map[start : start + d] += l_acc / score_cfg.draws
    g_map = g_sum / passes
    t_map = t_sum / passes
    if score_cfg.normalize_by_beats and beats:
        l_map = l_map / len(beats)
    point_map = g_map + l_map + t_map
    return AnomalyResult(
        score=float(point_map.sum()),
        point_map=point_map,
        term_breakdown=(float(g_map.sum()), float(l_map.sum()), float(t_map.sum())),
        warnings=tuple(warnings_out),
    )


def _prepare(record, pipe_cfg: PipelineConfig, d: int) -> PreparedRecord:
    if isinstance(record, PreparedRecord):
        return record
    return prepare_record(record, pipe_cfg, d)


def anomaly_score(record, params, model_cfg, pipe_cfg, score_cfg) -> AnomalyResult:
    return _score_prepared(_prepare(record, pipe_cfg, model_cfg.d), params, model_cfg, score_cfg)


def anomaly_map(record, params, model_cfg, pipe_cfg, score_cfg) -> np.ndarray:
    return anomaly_score(record, params, model_cfg, pipe_cfg, score_cfg).point_map


# -- metrics -------------------------------------------------------------------


def _check_two_classes(labels: np.ndarray) -> None:
    if labels.min() == labels.max():
        raise ContractError("metric needs both classes present in labels")


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC via average ranks; exact under ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ContractError(f"scores/labels must be equal-length 1-D, got {scores.shape}/{labels.shape}")
    _check_two_classes(labels)
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    # average rank of each tied group, 1-based
    avg_rank = cum - (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _f1_at(scores: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def best_f1(scores, labels) -> tuple[float, float]:
    """Max F1 over thresholds; candidates are the lowest unique score and
    midpoints of consecutive unique scores (prediction rule: score >= t).
    Ties break toward the lower threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ContractError(f"scores/labels must be equal-length 1-D, got {scores.shape}/{labels.shape}")
    _check_two_classes(labels)
    uniq = np.unique(scores)
    candidates = np.concatenate([[uniq[0]], (uniq[:-1] + uniq[1:]) / 2.0])
    best = (-1.0, candidates[0])
    for t in candidates:
        f1 = _f1_at(scores, labels, float(t))
        if f1 > best[0]:
            best = (f1, float(t))
    return best


# -- sliding windows ------------------------------------------------------------


def sliding_windows(x: np.ndarray, win: int, stride: int):
    """[(offset, x[offset:offset+win])] at offsets 0, stride, 2*stride, ..."""
    x = np.asarray(x)
    if win > x.shape[-1]:
        raise ContractError(f"window {win} exceeds length {x.shape[-1]}")
    if win < 1 or stride < 1:
        raise ContractError(f"window and stride must be >= 1, got {win}/{stride}")
    return [(off, x[off : off + win]) for off in range(0, x.shape[-1] - win + 1, stride)]


def reassemble_map(pieces, total_len: int) -> np.ndarray:
    """Overlap-average window maps back onto the record axis."""
    acc = np.zeros(total_len)
    cnt = np.zeros(total_len)
    for off, vec in pieces:
        vec = np.asarray(vec, dtype=np.float64)
        acc[off : off + vec.size] += vec
        cnt[off : off + vec.size] += 1.0
    out = np.zeros(total_len)
    hit = cnt > 0
    out[hit] = acc[hit] / cnt[hit]
    return out


# -- record-collection evaluation ------------------------------------------------


def _window_results(
    record,
    params,
    model_cfg: ModelConfig,
    pipe_cfg: PipelineConfig,
    score_cfg: ScoreConfig,
):
    """Score a record of any length >= D via windows of the prepared signal.

    Returns (window_results, point_map, labels, prepared). Windows are
    re-segmented locally so each window is a self-contained model input.
    """
    pr = _prepare(record, pipe_cfg, model_cfg.d)
    D = model_cfg.D
    win = score_cfg.window if score_cfg.window > 0 else D
    if win != D:
        raise ContractError(f"scoring window {win} must equal model D {D}")
    stride = score_cfg.stride if score_cfg.stride > 0 else max(1, win // 2)
    if pr.x.size == D:
        res = _score_prepared(pr, params, model_cfg, score_cfg)
        return [(0, res)], res.point_map, pr

    results = []
    for off, chunk in sliding_windows(pr.x, win, stride):
        rpeaks = [r - off for r in pr.rpeaks if off <= r < off + win]
        beats = segment_heartbeats(chunk, rpeaks, model_cfg.d)
        sub = PreparedRecord(
            x=chunk,
            fs=pr.fs,
            rpeaks=rpeaks,
            beats=beats,
            trend=extract_trend(chunk, pr.trend.smoothing_window),
            record_label=pr.record_label,
            point_labels=None,
        )
        results.append((off, _score_prepared(sub, params, model_cfg, score_cfg)))
    point_map = reassemble_map([(off, r.point_map) for off, r in results], pr.x.size)
    return results, point_map, pr


def _eval_one(args):
    record, params, model_cfg, pipe_cfg, score_cfg = args
    return _window_results(record, params, model_cfg, pipe_cfg, score_cfg)


def score_records(
    records,
    params,
    model_cfg: ModelConfig,
    pipe_cfg: PipelineConfig,
    score_cfg: ScoreConfig,
):
    """Score every record; returns [(window_results, point_map, prepared)].

    Records are scored independently against the frozen params, in
    parallel across up to MSCR_THREADS threads.
    """
    if not records:
        raise ContractError("no records to evaluate")
    jobs = [(rec, params, model_cfg, pipe_cfg, score_cfg) for rec in records]
    n_threads = _threads()
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            return list(pool.map(_eval_one, jobs))
    return [_eval_one(j) for j in jobs]


def metrics_from_outcomes(outcomes, model_cfg: ModelConfig, level: str) -> MetricReport:
    """Reduce score_records output to a MetricReport at one granularity.

    patient: record score = max over window scores, labels = record_label.
    heartbeat: beat score = sum of the point map over the beat window,
      beat label = any point label inside the window; AUC + best F1.
    signal_point: pooled per-point map values vs point labels.
    """
    if level not in ("patient", "heartbeat", "signal_point"):
        raise ContractError(f"unknown level {level!r}")

    if level == "patient":
        scores, labels = [], []
        for windows, _pmap, pr in outcomes:
            if pr.record_label is None:
                raise ContractError("patient-level evaluation needs record labels on every record")
            scores.append(max(r.score for _, r in windows))
            labels.append(pr.record_label)
        return MetricReport(auc=roc_auc(scores, labels), level=level)

    # beat/point levels need per-point annotations
    for _, _, pr in outcomes:
        if pr.point_labels is None:
            raise ContractError(f"{level} evaluation needs point_labels on every record")

    if level == "signal_point":
        pooled = np.concatenate([pmap for _, pmap, _ in outcomes])
        pooled_labels = np.concatenate([pr.point_labels for _, _, pr in outcomes])
        return MetricReport(auc=roc_auc(pooled, pooled_labels), level=level)

    beat_scores, beat_labels = [], []
    half = model_cfg.d // 2
    for _, pmap, pr in outcomes:
        for beat in pr.beats:
            start = beat.r_peak_source_index - half
            end = start + model_cfg.d
            beat_scores.append(float(pmap[start:end].sum()))
            beat_labels.append(int(pr.point_labels[start:end].any()))
    if not beat_scores:
        raise ContractError("no beats were segmented at heartbeat level")
    f1, thr = best_f1(beat_scores, beat_labels)
    return MetricReport(auc=roc_auc(beat_scores, beat_labels), level=level, f1=f1, threshold=thr)


def evaluate(
    records,
    params,
    model_cfg: ModelConfig,
    pipe_cfg: PipelineConfig,
    score_cfg: ScoreConfig,
    level: str,
) -> MetricReport:
    outcomes = score_records(records, params, model_cfg, pipe_cfg, score_cfg)
    return metrics_from_outcomes(outcomes, model_cfg, level)
