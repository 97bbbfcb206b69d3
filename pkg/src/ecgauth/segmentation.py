"""R-peak detection and beat extraction.

QRS complexes are accentuated by convolving the conditioned signal with a
Mexican-hat (Ricker) wavelet matched to the QRS width and taking the
magnitude.  Peaks are local maxima exceeding a multiple of the centered
running mean, with a refractory rule keeping only the largest of nearby
candidates.  Fixed windows around each peak become beat rows, and the
rows most distant from the per-signal median waveform are rejected.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import EcgTrace, Session

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentationConfig:
    wavelet_scale_s: float = 0.03
    threshold_window_s: float = 1.5
    threshold_factor: float = 2.0
    refractory_s: float = 0.25
    pre_r_s: float = 0.25
    post_r_s: float = 0.45
    reject_fraction: float = 0.20

    def __post_init__(self):
        if self.wavelet_scale_s <= 0 or self.threshold_window_s <= 0:
            raise ValueError("wavelet scale and threshold window must be positive")
        if self.threshold_factor <= 0 or self.refractory_s < 0:
            raise ValueError("threshold_factor must be positive and refractory_s non-negative")
        if self.pre_r_s + self.post_r_s <= 0:
            raise ValueError("beat window must have positive length")
        if not 0.0 <= self.reject_fraction < 1.0:
            raise ValueError(f"reject_fraction must lie in [0, 1), got {self.reject_fraction}")

    def beat_width(self, sample_rate_hz: float) -> int:
        return int(round((self.pre_r_s + self.post_r_s) * sample_rate_hz))

    def pre_samples(self, sample_rate_hz: float) -> int:
        return int(round(self.pre_r_s * sample_rate_hz))


@dataclass(frozen=True, eq=False)
class PeakList:
    """Strictly increasing sample indices of detected R peaks."""

    indices: np.ndarray
    trace_ref: tuple[str, Session, int] | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("peak indices must be 1-D")
        if idx.size > 1 and not (np.diff(idx) > 0).all():
            raise ValueError("peak indices must be strictly increasing")
        idx = idx.copy()
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True, eq=False)
class BeatMatrix:
    """Fixed-width heartbeat waveforms, one row per kept peak.

    ``origin_peaks`` holds the R index of each row (same order as rows) on
    the timeline the peaks were detected in; ``pre_samples`` is the window
    offset before R, so row i covers samples
    [origin_peaks[i] - pre_samples, origin_peaks[i] - pre_samples + width).
    """

    beats: np.ndarray
    subject: str
    session: Session
    origin_peaks: PeakList
    sample_rate_hz: float
    pre_samples: int

    def __post_init__(self):
        beats = np.asarray(self.beats, dtype=np.float64)
        if beats.ndim != 2:
            raise ValueError("beats must be a 2-D matrix")
        if not np.isfinite(beats).all():
            raise ValueError("beat matrix contains non-finite values")
        if beats.shape[0] != len(self.origin_peaks):
            raise ValueError("one origin peak required per beat row")
        beats = beats.copy()
        beats.setflags(write=False)
        object.__setattr__(self, "beats", beats)

    @property
    def n_beats(self) -> int:
        return int(self.beats.shape[0])

    @property
    def width(self) -> int:
        return int(self.beats.shape[1])

    def take(self, row_indices: list[int] | np.ndarray) -> "BeatMatrix":
        rows = np.asarray(row_indices, dtype=np.int64)
        return BeatMatrix(
            beats=self.beats[rows],
            subject=self.subject,
            session=self.session,
            origin_peaks=PeakList(self.origin_peaks.indices[rows], self.origin_peaks.trace_ref),
            sample_rate_hz=self.sample_rate_hz,
            pre_samples=self.pre_samples,
        )


def ricker_wavelet(scale_s: float, sample_rate_hz: float) -> np.ndarray:
    """Mexican-hat kernel with sigma ``scale_s`` seconds, truncated at 5 sigma."""
    sigma = scale_s * sample_rate_hz
    if sigma <= 0:
        raise ValueError("wavelet scale must be positive")
    half = int(math.ceil(5.0 * sigma))
    t = np.arange(-half, half + 1, dtype=np.float64)
    u = (t / sigma) ** 2
    return (1.0 - u) * np.exp(-0.5 * u)


def accentuate_qrs(trace: EcgTrace, scale_s: float) -> np.ndarray:
    """|signal convolved with a Ricker wavelet|, same length via reflect padding."""
    kernel = ricker_wavelet(scale_s, trace.sample_rate_hz)
    half = (kernel.size - 1) // 2
    x = trace.samples
    if kernel.size > x.size:
        raise ValueError(
            f"wavelet support of {kernel.size} samples exceeds trace length {x.size}"
        )
    padded = np.pad(x, half, mode="reflect")
    return np.abs(np.convolve(padded, kernel, mode="valid"))


def running_mean(x: np.ndarray, window_samples: int) -> np.ndarray:
    """Centered running mean; edge windows shrink to the available samples."""
    w = max(1, int(window_samples))
    kernel = np.ones(w)
    num = np.convolve(x, kernel, mode="same")
    den = np.convolve(np.ones_like(x), kernel, mode="same")
    return num / den


def detection_threshold(accentuated: np.ndarray, config: SegmentationConfig, sample_rate_hz: float) -> np.ndarray:
    w = int(round(config.threshold_window_s * sample_rate_hz))
    return config.threshold_factor * running_mean(accentuated, w)


def detect_r_peaks(
    accentuated: np.ndarray,
    config: SegmentationConfig,
    sample_rate_hz: float,
    trace_ref: tuple[str, Session, int] | None = None,
) -> PeakList:
    """Local maxima above the running-mean threshold, refractory-filtered.

    Among candidates closer than ``refractory_s`` only the largest survives
    (amplitude ties broken toward the earlier index).  Finding no peaks is
    reported, not fatal.
    """
    x = np.asarray(accentuated, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    if x.min() < 0:
        raise ValueError("accentuated signal must be non-negative")
    threshold = detection_threshold(x, config, sample_rate_hz)

    interior = np.arange(1, x.size - 1) if x.size > 2 else np.arange(0)
    is_max = (x[interior] > x[interior - 1]) & (x[interior] >= x[interior + 1])
    above = x[interior] > threshold[interior]
    candidates = interior[is_max & above]

    gap = int(round(config.refractory_s * sample_rate_hz))
    kept: list[int] = []
    if candidates.size:
        order = sorted(range(candidates.size), key=lambda i: (-x[candidates[i]], candidates[i]))
        for oi in order:
            c = int(candidates[oi])
            if all(abs(c - k) >= gap for k in kept):
                kept.append(c)
        kept.sort()
    if not kept:
        log.warning("no R peaks detected (signal length %d)", x.size)
    return PeakList(np.asarray(kept, dtype=np.int64), trace_ref)


def extract_beats(trace: EcgTrace, peaks: PeakList, config: SegmentationConfig) -> BeatMatrix:
    """One row per peak whose full window fits inside the trace."""
    fs = trace.sample_rate_hz
    width = config.beat_width(fs)
    pre = config.pre_samples(fs)
    n = trace.n_samples
    rows = []
    kept = []
    for r in peaks.indices:
        start = int(r) - pre
        if start < 0 or start + width > n:
            continue
        rows.append(trace.samples[start : start + width])
        kept.append(int(r))
    if not rows:
        raise ValueError("no peaks with a full beat window inside the trace")
    return BeatMatrix(
        beats=np.vstack(rows),
        subject=trace.subject,
        session=trace.session,
        origin_peaks=PeakList(np.asarray(kept, dtype=np.int64), peaks.trace_ref),
        sample_rate_hz=fs,
        pre_samples=pre,
    )


def reject_outlier_beats(beats: BeatMatrix, reject_fraction: float) -> BeatMatrix:
    """Drop the ceil(fraction * n) rows most distant from the median waveform.

    Distance is Euclidean to the per-sample median of the input rows; ties
    are broken by original row index (earlier rows are kept).  Survivor
    order is preserved.  With fraction 0 the input is returned unchanged.
    """
    if not 0.0 <= reject_fraction < 1.0:
        raise ValueError(f"reject_fraction must lie in [0, 1), got {reject_fraction}")
    n = beats.n_beats
    if n < 2:
        raise ValueError(f"outlier rejection needs at least 2 beats, got {n}")
    n_drop = math.ceil(reject_fraction * n)
    if n_drop == 0:
        return beats
    median = np.median(beats.beats, axis=0)
    dist = np.linalg.norm(beats.beats - median, axis=1)
    # most dissimilar first; equal distances drop the later row first
    ranking = sorted(range(n), key=lambda i: (-dist[i], -i))
    dropped = set(ranking[:n_drop])
    survivors = [i for i in range(n) if i not in dropped]
    return beats.take(survivors)


def merge_beat_matrices(parts: list[BeatMatrix]) -> BeatMatrix:
    """Concatenate beat matrices that already share one index timeline."""
    if not parts:
        raise ValueError("nothing to merge")
    first = parts[0]
    for p in parts[1:]:
        if (p.subject, p.session) != (first.subject, first.session):
            raise ValueError("cannot merge beats of different subject/session")
        if p.width != first.width or p.sample_rate_hz != first.sample_rate_hz or p.pre_samples != first.pre_samples:
            raise ValueError("cannot merge beats with different window geometry")
    indices = np.concatenate([p.origin_peaks.indices for p in parts])
    return BeatMatrix(
        beats=np.vstack([p.beats for p in parts]),
        subject=first.subject,
        session=first.session,
        origin_peaks=PeakList(indices, first.origin_peaks.trace_ref),
        sample_rate_hz=first.sample_rate_hz,
        pre_samples=first.pre_samples,
    )


def shift_peaks(beats: BeatMatrix, offset: int) -> BeatMatrix:
    """Translate row origins by ``offset`` samples (recording to session timeline)."""
    return BeatMatrix(
        beats=beats.beats,
        subject=beats.subject,
        session=beats.session,
        origin_peaks=PeakList(beats.origin_peaks.indices + int(offset), beats.origin_peaks.trace_ref),
        sample_rate_hz=beats.sample_rate_hz,
        pre_samples=beats.pre_samples,
    )


def split_beats_at(beats: BeatMatrix, boundary_index: int) -> tuple[BeatMatrix, BeatMatrix]:
    """Partition rows chronologically at a sample boundary.

    A row goes to the first part if its whole window ends at or before the
    boundary and to the second if it starts at or after it; rows straddling
    the boundary are dropped so the parts never share samples.
    """
    starts = beats.origin_peaks.indices - beats.pre_samples
    ends = starts + beats.width
    head = np.nonzero(ends <= boundary_index)[0]
    tail = np.nonzero(starts >= boundary_index)[0]
    return beats.take(head), beats.take(tail)


def segment_trace(trace: EcgTrace, config: SegmentationConfig) -> tuple[BeatMatrix, PeakList, np.ndarray]:
    """Accentuate, detect, and extract in one pass; returns (beats, peaks, accentuated)."""
    ref = (trace.subject, trace.session, trace.recording_index)
    accentuated = accentuate_qrs(trace, config.wavelet_scale_s)
    peaks = detect_r_peaks(accentuated, config, trace.sample_rate_hz, trace_ref=ref)
    beats = extract_beats(trace, peaks, config)
    return beats, peaks, accentuated


# ---------------------------------------------------------------------------
# text codec for segment outputs

def write_beats_file(path, beats: BeatMatrix) -> None:
    """One beat per row, space separated, with geometry in the header line."""
    header = (
        f"# beats subject={beats.subject} session={beats.session.value} "
        f"sample_rate_hz={beats.sample_rate_hz!r} pre_samples={beats.pre_samples} width={beats.width}"
    )
    lines = [header]
    for row in beats.beats:
        lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_beats_file(path) -> BeatMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    if not header.startswith("# beats "):
        raise ValueError(f"{path}: not a beats file")
    attrs = dict(token.split("=", 1) for token in header[len("# beats "):].split())
    rows = np.loadtxt(path, comments="#", dtype=np.float64, ndmin=2)
    # synthetic origins: stored beat files do not carry peak positions
    pre = int(attrs["pre_samples"])
    width = int(attrs["width"])
    origins = pre + np.arange(rows.shape[0], dtype=np.int64) * (width + 1)
    return BeatMatrix(
        beats=rows,
        subject=attrs["subject"],
        session=Session.parse(attrs["session"]),
        origin_peaks=PeakList(origins),
        sample_rate_hz=float(attrs["sample_rate_hz"]),
        pre_samples=pre,
    )


def write_peaks_file(path, peaks: PeakList) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(int(i)) for i in peaks.indices) + "\n")
