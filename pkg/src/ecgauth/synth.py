"""Deterministic synthetic ECG corpora with ground-truth beat locations.

Each subject is a sum-of-Gaussians beat template (P, Q, R, S, T waves)
repeated at jittered RR intervals, plus sinusoidal baseline wander, mains
interference, and white noise.  Session S2 can perturb the template shape
to model signal drift between collection sessions months apart.  All
randomness derives from one seed through per-subject child streams, so
corpora are bit-reproducible and independent of generation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Corpus, CorpusManifest, EcgTrace, Session, TraceEntry, save_corpus, trace_filename

PEAKS_SUFFIX = ".peaks"

WAVE_NAMES = ("P", "Q", "R", "S", "T")

# Uniform sampling ranges per wave: (amplitude mV, center s relative to R, width s).
# Ranges give every subject a distinct template while keeping the population
# close enough that session drift produces genuine cross-session confusions;
# R stays dominant even under +/-15% drift.
_WAVE_RANGES = {
    "P": ((0.09, 0.20), (-0.245, -0.195), (0.022, 0.032)),
    "Q": ((-0.18, -0.08), (-0.046, -0.032), (0.010, 0.015)),
    "R": ((0.95, 1.35), (0.0, 0.0), (0.018, 0.026)),
    "S": ((-0.35, -0.13), (0.032, 0.050), (0.010, 0.016)),
    "T": ((0.17, 0.38), (0.245, 0.315), (0.052, 0.072)),
}
_MEAN_RR_RANGE = (0.70, 1.20)
_RR_JITTER_RANGE = (0.020, 0.055)

_MIN_RR_S = 0.4  # physiological floor for jittered RR intervals


@dataclass(frozen=True)
class WaveShape:
    amplitude_mv: float
    center_s: float
    width_s: float


@dataclass(frozen=True)
class SubjectTemplate:
    """Morphology and rhythm parameters of one simulated subject."""

    waves: tuple[WaveShape, ...]  # ordered P, Q, R, S, T
    mean_rr_s: float
    rr_jitter_s: float

    def __post_init__(self):
        if len(self.waves) != len(WAVE_NAMES):
            raise ValueError(f"expected {len(WAVE_NAMES)} waves, got {len(self.waves)}")
        r_amp = self.waves[2].amplitude_mv
        for name, wave in zip(WAVE_NAMES, self.waves):
            if wave.width_s <= 0:
                raise ValueError(f"{name} wave width must be positive")
            if name != "R" and abs(wave.amplitude_mv) >= r_amp:
                raise ValueError(f"R amplitude must dominate, but |{name}| >= R")
        if not 0.5 <= self.mean_rr_s <= 1.5:
            raise ValueError(f"mean_rr_s must lie in [0.5, 1.5], got {self.mean_rr_s}")
        if self.rr_jitter_s < 0:
            raise ValueError("rr_jitter_s must be non-negative")


@dataclass(frozen=True)
class NoiseConfig:
    baseline_amp_mv: float = 0.08
    baseline_hz: float = 0.25
    mains_amp_mv: float = 0.04
    mains_hz: float = 50.0
    white_std_mv: float = 0.015

    def __post_init__(self):
        for name in ("baseline_amp_mv", "baseline_hz", "mains_amp_mv", "mains_hz", "white_std_mv"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 10
    duration_s: float = 120.0  # per recording
    recordings_per_session: int = 2
    sample_rate_hz: float = 300.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    session_drift: float = 0.1  # relative S2 perturbation of wave parameters
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValueError("n_subjects must be at least 2")
        if self.duration_s <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("duration_s and sample_rate_hz must be positive")
        if self.recordings_per_session < 1:
            raise ValueError("recordings_per_session must be at least 1")
        if self.session_drift < 0:
            raise ValueError("session_drift must be non-negative")


def sample_subject(rng: np.random.Generator) -> SubjectTemplate:
    """Draw one subject template from the documented uniform ranges."""
    waves = []
    for name in WAVE_NAMES:
        (a_lo, a_hi), (c_lo, c_hi), (w_lo, w_hi) = _WAVE_RANGES[name]
        waves.append(
            WaveShape(
                amplitude_mv=float(rng.uniform(a_lo, a_hi)),
                center_s=float(rng.uniform(c_lo, c_hi)) if c_lo != c_hi else c_lo,
                width_s=float(rng.uniform(w_lo, w_hi)),
            )
        )
    mean_rr = float(rng.uniform(*_MEAN_RR_RANGE))
    jitter = float(rng.uniform(*_RR_JITTER_RANGE))
    return SubjectTemplate(waves=tuple(waves), mean_rr_s=mean_rr, rr_jitter_s=jitter)


def drift_template(template: SubjectTemplate, drift: float, rng: np.random.Generator) -> SubjectTemplate:
    """Multiplicative (1 + drift*u) perturbation of wave parameters, u ~ U(-1, 1).

    RR statistics are untouched; with drift == 0 the template is returned as is.
    """
    if drift == 0.0:
        return template
    u = rng.uniform(-1.0, 1.0, size=(len(template.waves), 3))
    waves = []
    for wave, row in zip(template.waves, u):
        waves.append(
            WaveShape(
                amplitude_mv=wave.amplitude_mv * (1.0 + drift * row[0]),
                center_s=wave.center_s * (1.0 + drift * row[1]),
                width_s=wave.width_s * (1.0 + drift * row[2]),
            )
        )
    return SubjectTemplate(waves=tuple(waves), mean_rr_s=template.mean_rr_s, rr_jitter_s=template.rr_jitter_s)


def render_trace(
    template: SubjectTemplate,
    config: SynthConfig,
    rng: np.random.Generator,
    subject: str,
    session: Session,
    recording: int = 0,
) -> tuple[EcgTrace, np.ndarray]:
    """Render one recording; returns the trace and its ground-truth R indices.

    Draw order from ``rng`` is fixed (RR intervals, two noise phases, white
    noise) so renders are reproducible for a given stream.
    """
    fs = config.sample_rate_hz
    n = int(round(config.duration_s * fs))
    # enough intervals to cover the duration even if all are clipped at the floor
    m = int(config.duration_s / _MIN_RR_S) + 4
    rr = rng.normal(template.mean_rr_s, template.rr_jitter_s, size=m)
    rr = np.maximum(rr, _MIN_RR_S)
    r_times = np.cumsum(rr) - 0.5 * rr[0]
    r_times = r_times[r_times < config.duration_s]

    clean = np.zeros(n)
    t_grid = np.arange(n) / fs
    for r_t in r_times:
        for wave in template.waves:
            center = r_t + wave.center_s
            lo = max(0, int(math.floor((center - 6.0 * wave.width_s) * fs)))
            hi = min(n, int(math.ceil((center + 6.0 * wave.width_s) * fs)) + 1)
            if lo >= hi:
                continue
            tt = t_grid[lo:hi] - center
            clean[lo:hi] += wave.amplitude_mv * np.exp(-0.5 * (tt / wave.width_s) ** 2)

    noise = config.noise
    phase_baseline = rng.uniform(0.0, 2.0 * math.pi)
    phase_mains = rng.uniform(0.0, 2.0 * math.pi)
    samples = clean.copy()
    if noise.baseline_amp_mv > 0:
        samples += noise.baseline_amp_mv * np.sin(2.0 * math.pi * noise.baseline_hz * t_grid + phase_baseline)
    if noise.mains_amp_mv > 0:
        samples += noise.mains_amp_mv * np.sin(2.0 * math.pi * noise.mains_hz * t_grid + phase_mains)
    if noise.white_std_mv > 0:
        samples += rng.normal(0.0, noise.white_std_mv, size=n)

    gt = np.round(r_times * fs).astype(np.int64)
    gt = gt[(gt >= 0) & (gt < n)]
    trace = EcgTrace(subject, session, fs, samples, recording_index=recording)
    return trace, gt


def subject_label(index: int) -> str:
    return f"s{index + 1:02d}"


def generate_corpus(config: SynthConfig) -> tuple[Corpus, dict[tuple[str, Session, int], np.ndarray]]:
    """Generate an in-memory corpus plus ground-truth R indices per trace."""
    root_ss = np.random.SeedSequence(config.seed)
    traces: list[EcgTrace] = []
    ground_truth: dict[tuple[str, Session, int], np.ndarray] = {}
    for i, subject_ss in enumerate(root_ss.spawn(config.n_subjects)):
        streams = subject_ss.spawn(2 + 2 * config.recordings_per_session)
        template = sample_subject(np.random.default_rng(streams[0]))
        drifted = drift_template(template, config.session_drift, np.random.default_rng(streams[1]))
        subject = subject_label(i)
        k = 2
        for session, tmpl in ((Session.S1, template), (Session.S2, drifted)):
            for rec in range(config.recordings_per_session):
                rng = np.random.default_rng(streams[k])
                k += 1
                trace, gt = render_trace(tmpl, config, rng, subject, session, rec)
                traces.append(trace)
                ground_truth[(subject, session, rec)] = gt
    keyed = {(t.subject, t.session, t.recording_index): t for t in traces}
    entries = tuple(
        # manifest entries name the files emit_corpus would write
        TraceEntry(
            t.subject,
            t.session,
            t.recording_index,
            trace_filename(t.subject, t.session, t.recording_index),
            t.sample_rate_hz,
        )
        for t in traces
    )
    corpus = Corpus(manifest=CorpusManifest(entries=entries), traces=keyed, root=None)
    return corpus, ground_truth


def emit_corpus(config: SynthConfig, out_dir: Path) -> Corpus:
    """Write a synthetic corpus (traces, manifest, and ``.peaks`` sidecars)."""
    corpus, ground_truth = generate_corpus(config)
    out_dir = Path(out_dir)
    saved = save_corpus(out_dir, list(corpus.traces.values()))
    for key, gt in ground_truth.items():
        name = trace_filename(*key)
        sidecar = out_dir / (name[: -len(".ecg")] + PEAKS_SUFFIX)
        sidecar.write_text("\n".join(str(int(v)) for v in gt) + "\n", encoding="utf-8")
    return saved


def load_peaks(path: Path) -> np.ndarray:
    """Read a ground-truth sidecar file (one sample index per line)."""
    text = Path(path).read_text(encoding="utf-8")
    values = [int(line) for line in text.splitlines() if line.strip()]
    return np.asarray(values, dtype=np.int64)


def peaks_path(corpus_root: Path, subject: str, session: Session, recording: int) -> Path:
    name = trace_filename(subject, session, recording)
    return Path(corpus_root) / (name[: -len(".ecg")] + PEAKS_SUFFIX)
