"""Signal conditioning: mains notch and Butterworth band-pass, zero phase.

Filters are designed as cascades of second-order sections and applied
forward-backward with reflective edge padding, so R-peak timing is
preserved.  Designs are deterministic functions of their parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal as sp_signal

from .dataset import EcgTrace

_STABILITY_MARGIN = 1e-12
_PAD_DECAY = 1e-11  # impulse-response magnitude the edge padding must absorb


class FilterDesignError(ValueError):
    """Raised when requested filter parameters cannot produce a stable design."""


@dataclass(frozen=True)
class FilterConfig:
    """Conditioning parameters: band-pass corners plus the mains notch.

    ``order`` is the overall band-pass order and must be even (the design is
    built from second-order sections).
    """

    hp_cutoff_hz: float = 0.5
    lp_cutoff_hz: float = 40.0
    order: int = 4
    mains_hz: float = 50.0
    mains_q: float = 30.0

    def validate(self, sample_rate_hz: float) -> None:
        nyquist = sample_rate_hz / 2.0
        if not 0.0 < self.hp_cutoff_hz < self.lp_cutoff_hz:
            raise FilterDesignError(
                f"need 0 < hp_cutoff_hz < lp_cutoff_hz, got {self.hp_cutoff_hz} and {self.lp_cutoff_hz}"
            )
        if self.lp_cutoff_hz >= nyquist:
            raise FilterDesignError(f"lp_cutoff_hz {self.lp_cutoff_hz} at or above Nyquist {nyquist}")
        if not 0.0 < self.mains_hz < nyquist:
            raise FilterDesignError(f"mains_hz {self.mains_hz} outside (0, Nyquist)")
        if self.mains_q <= 0:
            raise FilterDesignError("mains_q must be positive")
        if self.order < 2 or self.order % 2 != 0:
            raise FilterDesignError(f"order must be a positive even integer, got {self.order}")


@dataclass(frozen=True, eq=False)
class BiquadCascade:
    """A stable cascade of second-order sections (scipy ``sos`` layout, a0 == 1)."""

    sos: np.ndarray
    description: str = ""

    def __post_init__(self):
        sos = np.asarray(self.sos, dtype=np.float64)
        if sos.ndim != 2 or sos.shape[1] != 6 or sos.shape[0] < 1:
            raise FilterDesignError(f"sos must have shape (n, 6), got {sos.shape}")
        if not np.allclose(sos[:, 3], 1.0, rtol=0, atol=1e-12):
            raise FilterDesignError("sections must be normalized to a0 == 1")
        if not np.isfinite(sos).all():
            raise FilterDesignError("non-finite filter coefficients")
        sos = sos.copy()
        sos.setflags(write=False)
        object.__setattr__(self, "sos", sos)
        rho = self.max_pole_radius()
        if rho >= 1.0 - _STABILITY_MARGIN:
            raise FilterDesignError(f"unstable design: pole radius {rho:.16f}")

    @property
    def sections(self) -> tuple[tuple[float, float, float, float, float], ...]:
        """(b0, b1, b2, a1, a2) per section."""
        return tuple((s[0], s[1], s[2], s[4], s[5]) for s in self.sos)

    def max_pole_radius(self) -> float:
        radius = 0.0
        for section in self.sos:
            poles = np.roots([1.0, section[4], section[5]])
            if poles.size:
                radius = max(radius, float(np.abs(poles).max()))
        return radius

    def cascade(self, other: "BiquadCascade") -> "BiquadCascade":
        joined = "; ".join(d for d in (self.description, other.description) if d)
        return BiquadCascade(np.vstack([self.sos, other.sos]), description=joined)

    def transient_length(self, decay: float = _PAD_DECAY) -> int:
        """Samples until the impulse response magnitude falls below ``decay``."""
        rho = self.max_pole_radius()
        if rho <= 0.0:
            return 32
        return max(32, int(math.ceil(math.log(decay) / math.log(rho))))

    def dump_text(self) -> str:
        lines = [f"# biquad cascade: {self.description}", "# b0\tb1\tb2\ta1\ta2"]
        for b0, b1, b2, a1, a2 in self.sections:
            lines.append("\t".join(repr(float(v)) for v in (b0, b1, b2, a1, a2)))
        return "\n".join(lines) + "\n"


def design_butterworth_bandpass(config: FilterConfig, sample_rate_hz: float) -> BiquadCascade:
    """Maximally flat band-pass with -3 dB points at the configured corners."""
    config.validate(sample_rate_hz)
    sos = sp_signal.butter(
        config.order // 2,
        [config.hp_cutoff_hz, config.lp_cutoff_hz],
        btype="bandpass",
        fs=sample_rate_hz,
        output="sos",
    )
    desc = (
        f"butterworth bandpass {config.hp_cutoff_hz}-{config.lp_cutoff_hz} Hz "
        f"order {config.order} at {sample_rate_hz} Hz"
    )
    return BiquadCascade(sos, description=desc)


def design_notch(mains_hz: float, q: float, sample_rate_hz: float) -> BiquadCascade:
    """Narrow notch at the mains frequency; passes DC with unit gain."""
    nyquist = sample_rate_hz / 2.0
    if not 0.0 < mains_hz < nyquist:
        raise FilterDesignError(f"notch center {mains_hz} outside (0, Nyquist {nyquist})")
    if q <= 0:
        raise FilterDesignError("notch quality must be positive")
    b, a = sp_signal.iirnotch(mains_hz, q, fs=sample_rate_hz)
    sos = np.hstack([b, a])[np.newaxis, :]
    return BiquadCascade(sos, description=f"notch {mains_hz} Hz Q={q} at {sample_rate_hz} Hz")


def design_conditioning(config: FilterConfig, sample_rate_hz: float) -> BiquadCascade:
    """Notch plus band-pass as a single cascade."""
    notch = design_notch(config.mains_hz, config.mains_q, sample_rate_hz)
    bandpass = design_butterworth_bandpass(config, sample_rate_hz)
    return notch.cascade(bandpass)


def filter_zero_phase(trace: EcgTrace, cascade: BiquadCascade) -> EcgTrace:
    """Forward-backward filtering with reflective padding; length preserved.

    Requires the trace to be longer than three filter transients so the
    padded edges fully absorb startup artifacts.
    """
    return replace(trace, samples=filter_samples_zero_phase(trace.samples, cascade))


def filter_samples_zero_phase(x: np.ndarray, cascade: BiquadCascade) -> np.ndarray:
    """Array variant of :func:`filter_zero_phase` for non-trace signals."""
    pad = cascade.transient_length()
    x = np.asarray(x, dtype=np.float64)
    if x.size <= 3 * pad:
        raise ValueError(
            f"signal too short for zero-phase filtering: {x.size} samples, "
            f"need more than {3 * pad} (3 transient lengths)"
        )
    padded = np.pad(x, pad, mode="reflect")
    sos = np.array(cascade.sos)  # scipy needs a writable buffer
    return sp_signal.sosfiltfilt(sos, padded, padtype=None)[pad:-pad]
