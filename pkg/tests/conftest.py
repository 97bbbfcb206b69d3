import logging

import numpy as np
import pytest

from ecgauth import synth
from ecgauth.classifiers import HyperGrid
from ecgauth.config import RunConfig
from ecgauth.dataset import Session

logging.getLogger("ecgauth").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def small_corpus():
    """4 subjects, one 60 s recording per session, mild drift."""
    cfg = synth.SynthConfig(
        n_subjects=4, duration_s=60.0, recordings_per_session=1, seed=11, session_drift=0.1
    )
    corpus, ground_truth = synth.generate_corpus(cfg)
    return cfg, corpus, ground_truth


@pytest.fixture(scope="session")
def quiet_trace():
    """One noiseless 60 s trace with its ground-truth R indices."""
    cfg = synth.SynthConfig(
        n_subjects=2,
        duration_s=60.0,
        recordings_per_session=1,
        noise=synth.NoiseConfig(0.0, 0.25, 0.0, 50.0, 0.0),
        session_drift=0.0,
        seed=5,
    )
    corpus, ground_truth = synth.generate_corpus(cfg)
    key = ("s01", Session.S1, 0)
    return corpus.traces[key], ground_truth[key]


def fast_run_config(seed: int = 0) -> RunConfig:
    """Singleton hyperparameter grid and tight beat caps for quick experiments."""
    return RunConfig(
        seed=seed,
        max_train_beats=60,
        max_test_beats=40,
        grid=HyperGrid(svm_c=(10.0,), svm_gamma=(0.003,), knn_k=(5,), logistic_l2=(0.01,)),
    )


def match_counts(detected: np.ndarray, truth: np.ndarray, tol: int = 3) -> tuple[int, int, int]:
    """(true positives, false positives, worst matched timing error)."""
    tp = 0
    worst = 0
    for p in truth:
        if detected.size and np.abs(detected - p).min() <= tol:
            tp += 1
            worst = max(worst, int(np.abs(detected - p).min()))
    fp = sum(1 for d in detected if truth.size and np.abs(truth - d).min() > tol)
    return tp, fp, worst
