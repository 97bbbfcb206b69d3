"""Verification experiments over session conditions.

Protocol A trains each target user's classifier against every other user
and reports the test-score equal error rate (plus the half total error
rate at the threshold fixed from training scores).  Protocol B retrains
with one non-target user excluded from training, keeps that user's test
data as the only impostor source, and reports HTER at the training-time
threshold, averaged over excluded users.  Protocol B training sets are
structurally checked to be free of the excluded user's vectors.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import classifiers
from .config import RunConfig, config_digest
from .dataset import Corpus, Session, split_index
from .dsp import design_conditioning, filter_zero_phase
from .features import FeatureModel, FeatureVector, fit_feature_model, project
from .metrics import ScoreSet, compute_eer, compute_hter
from .segmentation import (
    merge_beat_matrices,
    reject_outlier_beats,
    segment_trace,
    shift_peaks,
    split_beats_at,
)

log = logging.getLogger(__name__)


class ProtocolViolation(RuntimeError):
    """An excluded user's vectors reached a protocol B training set."""


@dataclass(frozen=True)
class Condition:
    train_session: Session
    test_session: Session

    @property
    def label(self) -> str:
        return f"{self.train_session.value}->{self.test_session.value}"


CONDITIONS = (
    Condition(Session.S1, Session.S1),
    Condition(Session.S2, Session.S2),
    Condition(Session.S1, Session.S2),
)


@dataclass(frozen=True)
class UserRow:
    """One evaluated pairing; ``excluded`` is set only for protocol B."""

    target: str
    excluded: str | None
    value: float
    threshold: float
    n_genuine: int
    n_impostor: int


@dataclass(frozen=True, eq=False)
class EvalReport:
    protocol: str  # "A" or "B"
    metric: str  # "eer" or "hter"
    condition: Condition
    rows: tuple[UserRow, ...]
    mean: float
    std: float
    seed: int
    config_digest: str
    skipped: tuple[str, ...] = ()

    def per_target_values(self) -> dict[str, float]:
        grouped: dict[str, list[float]] = {}
        for row in self.rows:
            grouped.setdefault(row.target, []).append(row.value)
        return {t: float(np.mean(v)) for t, v in sorted(grouped.items())}


def _aggregate(rows: list[UserRow]) -> tuple[float, float]:
    grouped: dict[str, list[float]] = {}
    for row in rows:
        grouped.setdefault(row.target, []).append(row.value)
    per_target = [float(np.mean(v)) for _, v in sorted(grouped.items())]
    if not per_target:
        return float("nan"), float("nan")
    return float(np.mean(per_target)), float(np.std(per_target))


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from arbitrary labeled parts."""
    text = "|".join(repr(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


# ---------------------------------------------------------------------------
# corpus preparation: conditioning, segmentation, chronological split

@dataclass(frozen=True, eq=False)
class SessionBeats:
    """Train/test beat rows of one (subject, session) after outlier rejection."""

    train: np.ndarray
    test: np.ndarray


def _stride_subsample(x: np.ndarray, cap: int) -> np.ndarray:
    if cap <= 0 or x.shape[0] <= cap:
        return x
    idx = np.round(np.linspace(0, x.shape[0] - 1, cap)).astype(np.int64)
    return x[idx]


def prepare_subject_beats(corpus: Corpus, config: RunConfig) -> dict[tuple[str, Session], SessionBeats]:
    """Condition, segment, reject outliers, and split every (subject, session).

    Recordings are processed individually (no filter transients across the
    seam), their beats mapped onto the concatenated session timeline, and
    the 80/20 boundary applied there.  Beats straddling the boundary are
    dropped so the parts share no samples.
    """
    cascades: dict[float, object] = {}
    prepared: dict[tuple[str, Session], SessionBeats] = {}
    for subject in corpus.subjects:
        for session in corpus.manifest.sessions:
            recordings = corpus.recordings(subject, session)
            if not recordings:
                continue
            parts = []
            offset = 0
            for trace in recordings:
                fs = trace.sample_rate_hz
                if fs not in cascades:
                    cascades[fs] = design_conditioning(config.filter, fs)
                filtered = filter_zero_phase(trace, cascades[fs])
                try:
                    beats, _, _ = segment_trace(filtered, config.segmentation)
                except ValueError as exc:
                    log.warning("%s %s recording %d: %s", subject, session.value, trace.recording_index, exc)
                    offset += trace.n_samples
                    continue
                parts.append(shift_peaks(beats, offset))
                offset += trace.n_samples
            if not parts:
                log.warning("%s %s: no usable beats, skipping", subject, session.value)
                continue
            merged = merge_beat_matrices(parts)
            if merged.n_beats < 2:
                log.warning("%s %s: fewer than 2 beats, skipping", subject, session.value)
                continue
            kept = reject_outlier_beats(merged, config.segmentation.reject_fraction)
            boundary = split_index(offset, config.train_fraction)
            train_bm, test_bm = split_beats_at(kept, boundary)
            prepared[(subject, session)] = SessionBeats(
                train=_stride_subsample(train_bm.beats, config.max_train_beats),
                test=_stride_subsample(test_bm.beats, config.max_test_beats),
            )
    return prepared


@dataclass(eq=False)
class ConditionData:
    """Per-subject feature vectors for one train/test session pairing."""

    condition: Condition
    feature_model: FeatureModel
    train_vectors: dict[str, list[FeatureVector]]
    test_vectors: dict[str, list[FeatureVector]]


def condition_features(
    prepared: dict[tuple[str, Session], SessionBeats],
    condition: Condition,
    config: RunConfig,
) -> ConditionData:
    """Fit the feature model on training beats only, then project both splits."""
    train_subjects = sorted(s for (s, ses) in prepared if ses == condition.train_session)
    if not train_subjects:
        raise ValueError(f"no subjects with {condition.train_session.value} data")
    stacks = [prepared[(s, condition.train_session)].train for s in train_subjects]
    stacked = np.vstack([s for s in stacks if s.shape[0] > 0])
    model = fit_feature_model(stacked, config.n_components)

    train_vectors: dict[str, list[FeatureVector]] = {}
    for subject in train_subjects:
        rows = prepared[(subject, condition.train_session)].train
        if rows.shape[0] == 0:
            continue
        projected = project(rows, model)
        train_vectors[subject] = [
            FeatureVector(values=v, subject=subject, session=condition.train_session) for v in projected
        ]
    test_vectors: dict[str, list[FeatureVector]] = {}
    for subject in sorted(s for (s, ses) in prepared if ses == condition.test_session):
        rows = prepared[(subject, condition.test_session)].test
        if rows.shape[0] == 0:
            continue
        projected = project(rows, model)
        test_vectors[subject] = [
            FeatureVector(values=v, subject=subject, session=condition.test_session) for v in projected
        ]
    return ConditionData(condition, model, train_vectors, test_vectors)


def _map_jobs(fn: Callable, items: list, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _min_positives(config: RunConfig) -> int:
    return config.grid.folds if len(config.grid.candidates(config.model)) > 1 else 1


def _eligible_targets(data: ConditionData, config: RunConfig) -> tuple[list[str], list[str]]:
    targets, skipped = [], []
    min_pos = _min_positives(config)
    for subject in sorted(data.train_vectors):
        if subject not in data.test_vectors:
            skipped.append(subject)
            log.warning("%s: no %s test data, skipped as target", subject, data.condition.test_session.value)
            continue
        if len(data.train_vectors[subject]) < min_pos:
            skipped.append(subject)
            log.warning("%s: only %d training beats (need %d), skipped as target",
                        subject, len(data.train_vectors[subject]), min_pos)
            continue
        targets.append(subject)
    return targets, skipped


class ProtocolAResult(NamedTuple):
    eer: "EvalReport"
    hter: "EvalReport"


def run_protocol_a(
    corpus: Corpus | None,
    condition: Condition,
    config: RunConfig,
    prepared: dict | None = None,
) -> ProtocolAResult:
    """Same users in training and test for every target classifier.

    Per target: train on all users' training partitions (target genuine,
    everyone else impostor), score the target's test partition against all
    other users' test partitions, and report the test-score EER alongside
    the HTER at the training-time threshold.
    """
    if prepared is None:
        prepared = prepare_subject_beats(corpus, config)
    data = condition_features(prepared, condition, config)
    digest = config_digest(config)
    targets, skipped = _eligible_targets(data, config)
    all_train = [v for s in sorted(data.train_vectors) for v in data.train_vectors[s]]

    def evaluate(target: str) -> tuple[UserRow, UserRow]:
        labeled = classifiers.LabeledSet(tuple(all_train), target)
        seed = stable_seed(config.seed, condition.label, "A", target)
        model = classifiers.train_auth_model(labeled, config.model, config.grid, seed=seed)
        genuine = classifiers.score(model, np.vstack([v.values for v in data.test_vectors[target]]))
        impostor_rows = [
            v.values for s in sorted(data.test_vectors) if s != target for v in data.test_vectors[s]
        ]
        impostor = classifiers.score(model, np.vstack(impostor_rows))
        scores = ScoreSet(genuine=genuine, impostor=impostor, target=target)
        eer, eer_threshold = compute_eer(scores)
        hter = compute_hter(scores, model.decision_threshold)
        return (
            UserRow(target, None, eer, eer_threshold, genuine.size, impostor.size),
            UserRow(target, None, hter, model.decision_threshold, genuine.size, impostor.size),
        )

    pairs = _map_jobs(evaluate, targets, config.threads)
    rows_eer = [p[0] for p in pairs]
    rows_hter = [p[1] for p in pairs]
    mean_eer, std_eer = _aggregate(rows_eer)
    mean_hter, std_hter = _aggregate(rows_hter)
    common = dict(protocol="A", condition=condition, seed=config.seed, config_digest=digest, skipped=tuple(skipped))
    return ProtocolAResult(
        eer=EvalReport(metric="eer", rows=tuple(rows_eer), mean=mean_eer, std=std_eer, **common),
        hter=EvalReport(metric="hter", rows=tuple(rows_hter), mean=mean_hter, std=std_hter, **common),
    )


def _check_exclusion(labeled: classifiers.LabeledSet, excluded: str) -> None:
    if any(s == excluded for s in labeled.subjects):
        raise ProtocolViolation(
            f"training set for target {labeled.target!r} contains vectors of excluded user {excluded!r}"
        )


def run_protocol_b(
    corpus: Corpus | None,
    condition: Condition,
    config: RunConfig,
    prepared: dict | None = None,
) -> EvalReport:
    """Leave-one-impostor-out evaluation with training-time thresholds.

    For each target and each excluded non-target user, the classifier is
    retrained without the excluded user's vectors, the threshold is fixed
    at the training-score equal-error point, and HTER is measured on the
    target's test data (genuine) versus the excluded user's test data
    (impostor).  Hyperparameters are selected once per target on the full
    training population.
    """
    if prepared is None:
        prepared = prepare_subject_beats(corpus, config)
    data = condition_features(prepared, condition, config)
    if len(data.train_vectors) < 3:
        raise ValueError("protocol B needs at least 3 users with training data")
    digest = config_digest(config)
    targets, skipped = _eligible_targets(data, config)
    train_subjects = sorted(data.train_vectors)
    all_train = [v for s in train_subjects for v in data.train_vectors[s]]

    def evaluate(target: str) -> list[UserRow]:
        seed = stable_seed(config.seed, condition.label, "B", target)
        params = None
        if len(config.grid.candidates(config.model)) > 1:
            labeled_full = classifiers.LabeledSet(tuple(all_train), target)
            params, _ = classifiers.cross_validate(labeled_full, config.grid, config.model, seed=seed)
        else:
            params = config.grid.candidates(config.model)[0]
        rows: list[UserRow] = []
        genuine_test = np.vstack([v.values for v in data.test_vectors[target]])
        for excluded in train_subjects:
            if excluded == target:
                continue
            if excluded not in data.test_vectors:
                log.warning("%s: excluded user %s has no test data, pair skipped", target, excluded)
                continue
            vectors = tuple(
                v for s in train_subjects if s != excluded for v in data.train_vectors[s]
            )
            labeled = classifiers.LabeledSet(vectors, target)
            _check_exclusion(labeled, excluded)
            model = classifiers.train_auth_model(labeled, config.model, config.grid, seed=seed, params=params)
            genuine = classifiers.score(model, genuine_test)
            impostor = classifiers.score(model, np.vstack([v.values for v in data.test_vectors[excluded]]))
            hter = compute_hter(
                ScoreSet(genuine=genuine, impostor=impostor, target=target),
                model.decision_threshold,
            )
            rows.append(UserRow(target, excluded, hter, model.decision_threshold, genuine.size, impostor.size))
        return rows

    nested = _map_jobs(evaluate, targets, config.threads)
    rows = [row for group in nested for row in group]
    mean, std = _aggregate(rows)
    return EvalReport(
        protocol="B",
        metric="hter",
        condition=condition,
        rows=tuple(rows),
        mean=mean,
        std=std,
        seed=config.seed,
        config_digest=digest,
        skipped=tuple(skipped),
    )


# ---------------------------------------------------------------------------
# report files

def write_report(path: Path, report: EvalReport) -> None:
    """Machine-readable delimited report with a header row."""
    lines = [
        f"# protocol={report.protocol} metric={report.metric} condition={report.condition.label}",
        f"# seed={report.seed} config={report.config_digest} mean={report.mean!r} std={report.std!r}",
        f"# skipped={','.join(report.skipped) if report.skipped else '-'}",
        "target\texcluded\tvalue\tthreshold\tn_genuine\tn_impostor",
    ]
    for row in report.rows:
        lines.append(
            "\t".join(
                [
                    row.target,
                    row.excluded if row.excluded is not None else "-",
                    repr(float(row.value)),
                    repr(float(row.threshold)),
                    str(row.n_genuine),
                    str(row.n_impostor),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_summary(reports: list[EvalReport], title: str) -> str:
    """Human-readable table: one condition per row, mean and spread in percent."""
    header = f"{title}\n{'Training':<10}{'Testing':<10}{'Average':<12}{'Std Dev':<12}"
    lines = [header, "-" * len(header.splitlines()[-1])]
    for report in reports:
        lines.append(
            f"{report.condition.train_session.value:<10}"
            f"{report.condition.test_session.value:<10}"
            f"{report.mean * 100:>7.2f}%    "
            f"{report.std * 100:>7.2f}%"
        )
    return "\n".join(lines) + "\n"
