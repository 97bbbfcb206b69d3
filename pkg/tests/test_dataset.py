import numpy as np
import pytest

from ecgauth import synth
from ecgauth.dataset import (
    CorpusError,
    EcgTrace,
    Session,
    chronological_split,
    concat_recordings,
    load_corpus,
    read_trace_file,
    save_corpus,
    split_index,
    write_trace_file,
)


def make_trace(n=100, rate=300.0, subject="s01", session=Session.S1, rec=0, seed=0):
    rng = np.random.default_rng(seed)
    return EcgTrace(subject, session, rate, rng.normal(0, 1, n), recording_index=rec)


class TestEcgTrace:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            EcgTrace("", Session.S1, 300.0, [1.0])
        with pytest.raises(ValueError):
            EcgTrace("s01", Session.S1, -1.0, [1.0])
        with pytest.raises(ValueError):
            EcgTrace("s01", Session.S1, 300.0, [])
        with pytest.raises(ValueError):
            EcgTrace("s01", Session.S1, 300.0, [1.0, np.nan])

    def test_samples_immutable(self):
        trace = make_trace()
        with pytest.raises(ValueError):
            trace.samples[0] = 99.0


class TestTraceFileCodec:
    def test_round_trip_bit_exact(self, tmp_path):
        trace = make_trace(n=512, seed=3)
        path = tmp_path / "t.ecg"
        write_trace_file(path, trace)
        rate, samples = read_trace_file(path)
        assert rate == trace.sample_rate_hz
        assert np.array_equal(samples, trace.samples)

    def test_nan_token_reports_file_and_line(self, tmp_path):
        path = tmp_path / "bad.ecg"
        path.write_text("# sample_rate_hz=300.0\n0.1\n0.2\nNaN\n0.3\n", encoding="utf-8")
        with pytest.raises(CorpusError) as exc_info:
            read_trace_file(path)
        assert exc_info.value.path == str(path)
        assert exc_info.value.line == 4
        assert "bad.ecg:4" in str(exc_info.value)

    def test_garbage_token_reports_line(self, tmp_path):
        path = tmp_path / "bad.ecg"
        path.write_text("# sample_rate_hz=300.0\n0.1\nhello\n", encoding="utf-8")
        with pytest.raises(CorpusError) as exc_info:
            read_trace_file(path)
        assert exc_info.value.line == 3

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.ecg"
        path.write_text("0.1\n0.2\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            read_trace_file(path)


class TestLoadCorpus:
    def test_count_preserved(self, tmp_path):
        traces = [
            make_trace(subject=s, session=ses, seed=i)
            for i, (s, ses) in enumerate(
                [("a", Session.S1), ("a", Session.S2), ("b", Session.S1), ("b", Session.S2)]
            )
        ]
        save_corpus(tmp_path, traces)
        corpus = load_corpus(tmp_path)
        assert len(corpus.manifest.entries) == 4
        assert corpus.subjects == ("a", "b")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(CorpusError, match="missing manifest"):
            load_corpus(tmp_path / "nowhere")

    def test_duplicate_key_rejected(self, tmp_path):
        save_corpus(tmp_path, [make_trace()])
        manifest = tmp_path / "manifest.tsv"
        row = [l for l in manifest.read_text().splitlines() if not l.startswith("#")][0]
        manifest.write_text(manifest.read_text() + row + "\n", encoding="utf-8")
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(tmp_path)

    def test_rate_mismatch_rejected(self, tmp_path):
        corpus = save_corpus(tmp_path, [make_trace(rate=300.0)])
        entry = corpus.manifest.entries[0]
        manifest = tmp_path / "manifest.tsv"
        text = manifest.read_text().replace("300.0", "250.0")
        manifest.write_text(text, encoding="utf-8")
        with pytest.raises(CorpusError, match="disagrees"):
            load_corpus(tmp_path)
        assert entry.sample_rate_hz == 300.0

    def test_synth_round_trip_bit_exact(self, tmp_path):
        cfg = synth.SynthConfig(n_subjects=2, duration_s=30.0, recordings_per_session=2, seed=9)
        emitted = synth.emit_corpus(cfg, tmp_path)
        loaded = load_corpus(tmp_path)
        assert loaded.manifest == emitted.manifest
        assert set(loaded.traces) == set(emitted.traces)
        for key in emitted.traces:
            assert loaded.traces[key] == emitted.traces[key]

    def test_loading_is_pure(self, tmp_path):
        synth.emit_corpus(synth.SynthConfig(n_subjects=2, duration_s=20.0, seed=2), tmp_path)
        first = load_corpus(tmp_path)
        second = load_corpus(tmp_path)
        for key in first.traces:
            assert first.traces[key] == second.traces[key]


class TestChronologicalSplit:
    def test_240s_at_080(self):
        trace = make_trace(n=240 * 300, rate=300.0)
        train, test = chronological_split(trace, 0.8)
        assert train.duration_s == pytest.approx(192.0)
        assert test.duration_s == pytest.approx(48.0)
        assert train.n_samples == 192 * 300

    def test_even_split(self):
        trace = make_trace(n=10)
        train, test = chronological_split(trace, 0.5)
        assert train.n_samples == 5 and test.n_samples == 5

    def test_partition_identity(self):
        trace = make_trace(n=777, seed=4)
        train, test = chronological_split(trace, 0.8)
        assert np.array_equal(np.concatenate([train.samples, test.samples]), trace.samples)
        assert train.subject == test.subject == trace.subject
        assert train.session == trace.session

    def test_floor_rule(self):
        trace = make_trace(n=7)
        train, test = chronological_split(trace, 0.8)
        assert train.n_samples == 5  # floor(5.6)
        assert split_index(7, 0.8) == 5

    def test_degenerate_split_rejected(self):
        trace = make_trace(n=2)
        with pytest.raises(ValueError, match="degenerate"):
            chronological_split(trace, 0.1)
        with pytest.raises(ValueError):
            chronological_split(make_trace(n=10), 1.0)

    def test_chronological_never_shuffled(self):
        # sample values encode their index, so ordering is directly checkable
        trace = EcgTrace("s01", Session.S1, 300.0, np.arange(100, dtype=float))
        train, test = chronological_split(trace, 0.63)
        assert train.samples.max() < test.samples.min()


class TestConcatRecordings:
    def test_order_and_labels(self):
        first = make_trace(n=50, rec=0, seed=1)
        second = make_trace(n=70, rec=1, seed=2)
        merged = concat_recordings([second, first])  # order given should not matter
        assert merged.n_samples == 120
        assert np.array_equal(merged.samples[:50], first.samples)

    def test_mixed_subjects_rejected(self):
        with pytest.raises(ValueError):
            concat_recordings([make_trace(subject="a"), make_trace(subject="b")])
