"""Standalone SVG figures: overlaid mean beats and peak-detection overlays."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_SVG_METADATA = {"Date": None}  # keep emitted SVGs byte-stable across runs


def _use_agg():
    import matplotlib

    matplotlib.use("Agg", force=False)
    matplotlib.rcParams["svg.hashsalt"] = "ecgauth"
    import matplotlib.pyplot as plt

    return plt


def plot_mean_beats(
    labeled_beats: list[tuple[str, np.ndarray, float, int]],
    out_path: Path,
) -> None:
    """Overlay one mean beat waveform per subject.

    ``labeled_beats`` entries are (label, beat rows, sample_rate_hz,
    pre_samples); the time axis is seconds relative to the R peak.
    """
    if not labeled_beats:
        raise ValueError("nothing to plot")
    plt = _use_agg()
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for label, rows, fs, pre in labeled_beats:
        mean = rows.mean(axis=0)
        t = (np.arange(mean.size) - pre) / fs
        ax.plot(t, mean, linewidth=1.2, label=label)
    ax.set_xlabel("time relative to R peak (s)")
    ax.set_ylabel("amplitude (mV)")
    ax.set_title("Mean heartbeat waveform per subject")
    ax.legend(loc="upper right", fontsize="small", ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)


def plot_peak_detection(
    signal: np.ndarray,
    threshold: np.ndarray,
    peak_indices: np.ndarray,
    sample_rate_hz: float,
    out_path: Path,
    max_seconds: float = 10.0,
) -> None:
    """Accentuated signal, its running-mean threshold, and detected peaks."""
    plt = _use_agg()
    n = min(signal.size, int(max_seconds * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(t, signal[:n], linewidth=0.8, label="signal")
    ax.plot(t, threshold[:n], linewidth=1.0, linestyle="--", label="threshold")
    peaks = np.asarray(peak_indices, dtype=np.int64)
    peaks = peaks[peaks < n]
    if peaks.size:
        ax.plot(peaks / sample_rate_hz, signal[peaks], "o", markersize=4, label="peaks")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("magnitude")
    ax.set_title("Peak detection against the running-mean threshold")
    ax.legend(loc="upper right", fontsize="small")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
