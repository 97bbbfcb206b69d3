import numpy as np
import pytest

from ecgauth.dataset import EcgTrace, Session
from ecgauth.dsp import (
    BiquadCascade,
    FilterConfig,
    FilterDesignError,
    design_butterworth_bandpass,
    design_conditioning,
    design_notch,
    filter_samples_zero_phase,
    filter_zero_phase,
)

from oracles import cascade_gain

FS = 300.0


def trace_of(samples, rate=FS):
    return EcgTrace("s01", Session.S1, rate, samples)


class TestBandpassDesign:
    def test_passband_gain_near_unity(self):
        cascade = design_butterworth_bandpass(FilterConfig(0.5, 40.0, 4), FS)
        assert 0.99 <= cascade_gain(cascade.sections, 10.0, FS) <= 1.01

    def test_dc_gain_exactly_zero(self):
        cascade = design_butterworth_bandpass(FilterConfig(), FS)
        assert cascade_gain(cascade.sections, 0.0, FS) == 0.0

    def test_nyquist_gain_vanishes(self):
        cascade = design_butterworth_bandpass(FilterConfig(), FS)
        assert cascade_gain(cascade.sections, FS / 2.0, FS) <= 1e-6

    def test_corner_attenuation(self):
        # -3 dB points at the configured cutoffs within 2%
        cascade = design_butterworth_bandpass(FilterConfig(), FS)
        for corner in (0.5, 40.0):
            assert cascade_gain(cascade.sections, corner, FS) == pytest.approx(2 ** -0.5, rel=0.02)

    def test_bad_configs_rejected(self):
        with pytest.raises(FilterDesignError):
            design_butterworth_bandpass(FilterConfig(lp_cutoff_hz=200.0), FS)  # above Nyquist
        with pytest.raises(FilterDesignError):
            design_butterworth_bandpass(FilterConfig(order=3), FS)
        with pytest.raises(FilterDesignError):
            design_butterworth_bandpass(FilterConfig(hp_cutoff_hz=50.0, lp_cutoff_hz=10.0), FS)

    def test_design_deterministic(self):
        a = design_butterworth_bandpass(FilterConfig(), FS)
        b = design_butterworth_bandpass(FilterConfig(), FS)
        assert np.array_equal(a.sos, b.sos)


class TestNotchDesign:
    def test_sine_suppressed_in_steady_state(self):
        cascade = design_notch(50.0, 30.0, FS)
        t = np.arange(int(30 * FS)) / FS
        sine = np.sin(2 * np.pi * 50.0 * t)
        out = filter_samples_zero_phase(sine, cascade)
        tail = out[int(10 * FS) : int(20 * FS)]  # away from both edges
        assert np.abs(tail).max() < 0.05

    def test_dc_gain_unity(self):
        cascade = design_notch(50.0, 30.0, FS)
        assert cascade_gain(cascade.sections, 0.0, FS) == pytest.approx(1.0, abs=1e-9)

    def test_passband_untouched(self):
        cascade = design_notch(50.0, 30.0, FS)
        assert cascade_gain(cascade.sections, 10.0, FS) >= 0.95

    def test_center_gain_tiny(self):
        cascade = design_notch(50.0, 30.0, FS)
        assert cascade_gain(cascade.sections, 50.0, FS) <= 0.01

    def test_bandwidth_edges_pass(self):
        q = 30.0
        cascade = design_notch(50.0, q, FS)
        for f in (50.0 - 50.0 / q, 50.0 + 50.0 / q):
            assert cascade_gain(cascade.sections, f, FS) >= 0.5

    def test_invalid_center_rejected(self):
        with pytest.raises(FilterDesignError):
            design_notch(200.0, 30.0, FS)
        with pytest.raises(FilterDesignError):
            design_notch(0.0, 30.0, FS)


class TestZeroPhase:
    def test_constant_input_killed(self):
        cascade = design_butterworth_bandpass(FilterConfig(), FS)
        trace = trace_of(np.ones(int(60 * FS)))
        out = filter_zero_phase(trace, cascade)
        assert np.abs(out.samples[int(FS) :]).max() < 0.01

    def test_zero_in_zero_out(self):
        cascade = design_conditioning(FilterConfig(), FS)
        out = filter_zero_phase(trace_of(np.zeros(int(60 * FS))), cascade)
        assert np.abs(out.samples).max() == 0.0

    def test_time_reversal_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, int(60 * FS))
        cascade = design_conditioning(FilterConfig(), FS)
        direct = filter_samples_zero_phase(x, cascade)
        reversed_path = filter_samples_zero_phase(x[::-1], cascade)[::-1]
        assert np.abs(direct - reversed_path).max() < 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(0, 1, int(45 * FS))
        y = rng.normal(0, 1, int(45 * FS))
        cascade = design_conditioning(FilterConfig(), FS)
        combined = filter_samples_zero_phase(2.5 * x - 1.25 * y, cascade)
        separate = 2.5 * filter_samples_zero_phase(x, cascade) - 1.25 * filter_samples_zero_phase(y, cascade)
        scale = np.abs(combined).max()
        assert np.abs(combined - separate).max() / scale < 1e-9

    def test_length_and_labels_preserved(self):
        cascade = design_conditioning(FilterConfig(), FS)
        trace = trace_of(np.random.default_rng(3).normal(0, 1, int(45 * FS)))
        out = filter_zero_phase(trace, cascade)
        assert out.n_samples == trace.n_samples
        assert (out.subject, out.session, out.recording_index) == (
            trace.subject,
            trace.session,
            trace.recording_index,
        )

    def test_too_short_trace_rejected(self):
        cascade = design_conditioning(FilterConfig(), FS)
        with pytest.raises(ValueError, match="too short"):
            filter_zero_phase(trace_of(np.ones(100)), cascade)


class TestStability:
    def test_impulse_response_decays(self):
        # every designed cascade decays below 1e-12 within its pole-derived horizon
        for cascade in (
            design_butterworth_bandpass(FilterConfig(), FS),
            design_notch(50.0, 30.0, FS),
            design_conditioning(FilterConfig(), FS),
            design_butterworth_bandpass(FilterConfig(hp_cutoff_hz=1.0, lp_cutoff_hz=30.0, order=6), FS),
        ):
            horizon = cascade.transient_length(decay=1e-12)
            impulse = np.zeros(horizon + 256)
            impulse[0] = 1.0
            from scipy.signal import sosfilt

            response = sosfilt(np.array(cascade.sos), impulse)
            assert np.abs(response[horizon:]).max() < 1e-12

    def test_sections_stable(self):
        cascade = design_conditioning(FilterConfig(), FS)
        assert cascade.max_pole_radius() < 1.0

    def test_unstable_cascade_rejected(self):
        sos = np.array([[1.0, 0.0, 0.0, 1.0, -2.1, 1.2]])  # poles outside unit circle
        with pytest.raises(FilterDesignError, match="unstable"):
            BiquadCascade(sos)


class TestDumpText:
    def test_sections_dump_parseable(self):
        cascade = design_conditioning(FilterConfig(), FS)
        text = cascade.dump_text()
        rows = [l for l in text.splitlines() if not l.startswith("#")]
        assert len(rows) == len(cascade.sections)
        parsed = [tuple(float(v) for v in row.split("\t")) for row in rows]
        assert parsed[0] == cascade.sections[0]
