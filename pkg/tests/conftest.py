"""Shared fixtures: small deterministic inputs reused across test modules."""

import numpy as np
import pytest

from mscr.model import init_params, tiny_config
from mscr.synth import SynthParams, synth_ecg_with_truth


@pytest.fixture(scope="session")
def tiny_model():
    """A tiny (D=64) model config plus freshly initialized parameters."""
    cfg = tiny_config(seed=0)
    return cfg, init_params(cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def clean_ecg_30s():
    """Noise-free 30 s synthetic ECG at 72 bpm with its beat schedule."""
    params = SynthParams(fs=100.0, duration_s=30.0, bpm=72.0, bpm_jitter=0.0, noise_std=0.0)
    record, meta = synth_ecg_with_truth(params, np.random.default_rng(7))
    return record, meta
