"""Metrics against brute-force oracles, window plumbing identities, and
score/map consistency on real forward passes."""

import numpy as np
import pytest

from mscr.autodiff import ContractError
from mscr.model import ModelConfig, init_params, tiny_config
from mscr.config import ScoreConfig
from mscr.scoring import (
    anomaly_map,
    anomaly_score,
    best_f1,
    metrics_from_outcomes,
    reassemble_map,
    roc_auc,
    score_records,
    sliding_windows,
)
from mscr.sigproc import Heartbeat, PipelineConfig, PreparedRecord, TrendSignal
from mscr.synth import DatasetConfig, SynthParams, make_dataset, synth_ecg


def _auc_brute_force(scores, labels):
    scores = np.asarray(scores, dtype=float)
    pos = scores[np.asarray(labels) == 1]
    neg = scores[np.asarray(labels) == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return float(wins) / (len(pos) * len(neg))


def test_roc_auc_matches_pair_counting_on_random_instances_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.integers(-3, 4, size=n).astype(float)  # heavy ties
        assert roc_auc(scores, labels) == pytest.approx(
            _auc_brute_force(scores, labels), abs=1e-12
        )


def test_roc_auc_is_invariant_under_monotone_transforms():
    rng = np.random.default_rng(1)
    scores = rng.standard_normal(40)
    labels = rng.integers(0, 2, size=40)
    labels[:2] = [0, 1]
    base = roc_auc(scores, labels)
    assert roc_auc(3.0 * scores + 7.0, labels) == pytest.approx(base, abs=1e-12)
    assert roc_auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)


def test_roc_auc_complement_under_score_negation():
    rng = np.random.default_rng(2)
    scores = rng.standard_normal(30)  # continuous: no ties
    labels = rng.integers(0, 2, size=30)
    labels[:2] = [0, 1]
    assert roc_auc(scores, labels) + roc_auc(-scores, labels) == pytest.approx(1.0, abs=1e-12)


def test_roc_auc_perfect_and_inverted_separation():
    assert roc_auc([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1]) == 1.0
    assert roc_auc([4.0, 3.0, 2.0, 1.0], [0, 0, 1, 1]) == 0.0
    assert roc_auc([1.0, 1.0, 1.0, 1.0], [0, 1, 0, 1]) == 0.5


def test_roc_auc_rejects_single_class_and_shape_mismatch():
    with pytest.raises(ContractError):
        roc_auc([1.0, 2.0], [1, 1])
    with pytest.raises(ContractError):
        roc_auc([1.0, 2.0], [0, 1, 1])


def _best_f1_brute_force(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    cands = np.unique(scores)
    cands = np.concatenate([cands, (cands[:-1] + cands[1:]) / 2.0, [cands[0] - 1.0]])
    best = -1.0
    for t in cands:
        pred = scores >= t
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        denom = 2 * tp + fp + fn
        f1 = 2.0 * tp / denom if denom else 0.0
        best = max(best, f1)
    return best


def test_best_f1_matches_exhaustive_threshold_sweep():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.integers(-5, 6, size=n).astype(float)
        f1, thr = best_f1(scores, labels)
        assert f1 == pytest.approx(_best_f1_brute_force(scores, labels), abs=1e-12)
        # the returned threshold must actually achieve the returned f1
        pred = scores >= thr
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        denom = 2 * tp + fp + fn
        achieved = 2.0 * tp / denom if denom else 0.0
        assert achieved == pytest.approx(f1, abs=1e-12)


# -- window plumbing ---------------------------------------------------------


def test_sliding_windows_offsets_and_content():
    x = np.arange(10.0)
    pieces = sliding_windows(x, win=4, stride=3)
    assert [off for off, _ in pieces] == [0, 3, 6]
    for off, piece in pieces:
        assert np.array_equal(piece, x[off : off + 4])


def test_sliding_windows_partition_losslessly_when_stride_equals_window():
    x = np.arange(12.0)
    pieces = sliding_windows(x, win=4, stride=4)
    assert np.array_equal(np.concatenate([p for _, p in pieces]), x)


def test_sliding_windows_contract_errors():
    with pytest.raises(ContractError):
        sliding_windows(np.arange(4.0), win=8, stride=1)
    with pytest.raises(ContractError):
        sliding_windows(np.arange(4.0), win=2, stride=0)


def test_reassemble_map_inverts_overlapping_windows_of_the_identity():
    x = np.arange(16.0)
    pieces = sliding_windows(x, win=6, stride=2)
    back = reassemble_map(pieces, x.size)
    assert np.allclose(back, x, atol=1e-12)


def test_reassemble_map_averages_disagreeing_overlaps():
    out = reassemble_map([(0, np.array([1.0, 1.0])), (1, np.array([3.0, 3.0]))], 3)
    assert np.array_equal(out, np.array([1.0, 2.0, 3.0]))


# -- end-to-end score/map consistency ----------------------------------------


@pytest.fixture(scope="module")
def scored_record():
    cfg = ModelConfig(
        D=256, d=32,
        channels_g=(8,), kernels_g=(5, 3),
        channels_l=(8,), kernels_l=(5, 3),
        feature_dim=8, seed=0,
    )
    params = init_params(cfg)
    record = synth_ecg(
        SynthParams(duration_s=2.56, bpm=75.0), np.random.default_rng(11)
    )
    pipe = PipelineConfig()
    score_cfg = ScoreConfig(draws=3, seed=0)
    return record, params, cfg, pipe, score_cfg


def test_anomaly_score_equals_sum_of_its_map(scored_record):
    record, params, cfg, pipe, score_cfg = scored_record
    result = anomaly_score(record, params, cfg, pipe, score_cfg)
    assert result.score == pytest.approx(float(result.point_map.sum()), rel=1e-9)
    pmap = anomaly_map(record, params, cfg, pipe, score_cfg)
    assert np.array_equal(pmap, result.point_map)
    assert pmap.shape == (256,)
    assert np.all(pmap >= 0.0)


def test_term_breakdown_sums_to_the_score(scored_record):
    record, params, cfg, pipe, score_cfg = scored_record
    result = anomaly_score(record, params, cfg, pipe, score_cfg)
    assert len(result.term_breakdown) == 3  # (global, local, trend)
    assert sum(result.term_breakdown) == pytest.approx(result.score, rel=1e-9)
    assert all(v >= 0.0 for v in result.term_breakdown)


def test_scoring_is_deterministic_and_thread_count_invariant(scored_record, monkeypatch):
    record, params, cfg, pipe, score_cfg = scored_record
    records = [record] * 3
    monkeypatch.delenv("MSCR_THREADS", raising=False)
    seq = score_records(records, params, cfg, pipe, score_cfg)
    monkeypatch.setenv("MSCR_THREADS", "3")
    par = score_records(records, params, cfg, pipe, score_cfg)
    for (w1, m1, _), (w2, m2, _) in zip(seq, par):
        assert np.array_equal(m1, m2)
        assert [r.score for _, r in w1] == [r.score for _, r in w2]


# -- level reduction -----------------------------------------------------------


class _FakeResult:
    def __init__(self, score):
        self.score = score


def _fake_outcome(pmap, record_label, point_labels, rpeaks, d):
    pr = PreparedRecord(
        x=np.zeros(pmap.size),
        fs=100.0,
        rpeaks=list(rpeaks),
        beats=[
            Heartbeat(samples=np.zeros(d), r_peak_source_index=r, beat_index=i)
            for i, r in enumerate(rpeaks)
        ],
        trend=TrendSignal(values=np.zeros(pmap.size), smoothing_window=9),
        record_label=record_label,
        point_labels=point_labels,
    )
    windows = [(0, _FakeResult(float(pmap.sum())))]
    return (windows, pmap, pr)


def test_patient_level_uses_max_window_score():
    hot = np.zeros(64)
    hot[10:20] = 5.0
    cold = np.full(64, 0.1)
    outcomes = [
        _fake_outcome(hot, 1, None, [], 8),
        _fake_outcome(cold, 0, None, [], 8),
    ]
    rep = metrics_from_outcomes(outcomes, tiny_config(), "patient")
    assert rep.auc == 1.0
    assert rep.level == "patient"


def test_signal_point_level_pools_maps_and_needs_point_labels():
    pmap_a = np.array([0.1, 0.2, 9.0, 8.0, 0.1, 0.3, 0.1, 0.2])
    labels_a = np.array([0, 0, 1, 1, 0, 0, 0, 0])
    pmap_b = np.full(8, 0.05)
    labels_b = np.zeros(8, dtype=int)
    outcomes = [
        _fake_outcome(pmap_a, 1, labels_a, [], 4),
        _fake_outcome(pmap_b, 0, labels_b, [], 4),
    ]
    rep = metrics_from_outcomes(outcomes, tiny_config(), "signal_point")
    assert rep.auc == 1.0
    outcomes_missing = [_fake_outcome(pmap_a, 1, None, [], 4)]
    with pytest.raises(ContractError, match="point_labels"):
        metrics_from_outcomes(outcomes_missing, tiny_config(), "signal_point")


def test_heartbeat_level_scores_beat_windows():
    cfg = tiny_config()  # d = 16
    d = cfg.d
    pmap = np.zeros(64)
    pmap[24:40] = 2.0  # hot beat window around r=32
    labels = np.zeros(64, dtype=int)
    labels[30:34] = 1
    outcomes = [_fake_outcome(pmap, 1, labels, [16, 32, 48], d)]
    rep = metrics_from_outcomes(outcomes, cfg, "heartbeat")
    assert rep.auc == 1.0
    assert rep.f1 == 1.0
    assert rep.threshold is not None


def test_patient_level_without_record_labels_errors():
    outcomes = [_fake_outcome(np.ones(16), None, None, [], 4)]
    with pytest.raises(ContractError, match="record label"):
        metrics_from_outcomes(outcomes, tiny_config(), "patient")


def test_unknown_level_errors():
    with pytest.raises(ContractError, match="level"):
        metrics_from_outcomes([], tiny_config(), "bogus")
