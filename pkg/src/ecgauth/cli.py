"""Command-line frontend wiring all stages into runnable experiments.

Exit codes: 0 success, 1 stage failure, 2 usage error.  Every subcommand
is deterministic given its inputs, configuration, and seed; the env var
``ECG_AUTH_THREADS`` caps worker parallelism.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import classifiers, plots, segmentation, synth
from .config import ConfigError, RunConfig, apply_overrides, config_digest, config_items, read_config
from .dataset import CorpusError, Session, load_corpus, save_corpus
from .dsp import FilterDesignError, design_conditioning, filter_zero_phase
from .evaluation import (
    CONDITIONS,
    Condition,
    EvalReport,
    condition_features,
    format_summary,
    prepare_subject_beats,
    run_protocol_a,
    run_protocol_b,
    write_report,
)
from .features import fit_feature_model, project, write_feature_model

log = logging.getLogger("ecgauth")

THREADS_ENV = "ECG_AUTH_THREADS"


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", type=Path, help="key=value config file (flags win over the file)")
    group.add_argument("--seed", type=int, help="run seed (default 0)")
    group.add_argument("--hp", type=float, help="band-pass high-pass corner, Hz")
    group.add_argument("--lp", type=float, help="band-pass low-pass corner, Hz")
    group.add_argument("--order", type=int, help="band-pass order (even)")
    group.add_argument("--mains", type=float, help="mains notch center, Hz")
    group.add_argument("--mains-q", type=float, dest="mains_q", help="mains notch quality factor")
    group.add_argument("--model", choices=classifiers.KINDS, help="classifier kind (default svm)")
    group.add_argument(
        "--grid",
        action="append",
        default=[],
        metavar="KEY=V1,V2",
        help="hyperparameter grid override, e.g. --grid svm_c=1,10 (repeatable)",
    )
    group.add_argument("--folds", type=int, help="cross-validation folds")
    group.add_argument("--train-fraction", type=float, dest="train_fraction")
    group.add_argument("--components", type=int, help="number of PCA components")
    group.add_argument("--max-train-beats", type=int, dest="max_train_beats")
    group.add_argument("--max-test-beats", type=int, dest="max_test_beats")
    group.add_argument("--threads", type=int, help="worker threads (capped by $ECG_AUTH_THREADS)")


def build_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None):
        config = read_config(args.config, base=config)
    overrides: dict[str, str] = {}
    direct = {
        "seed": "seed",
        "train_fraction": "train_fraction",
        "components": "n_components",
        "model": "model",
        "max_train_beats": "max_train_beats",
        "max_test_beats": "max_test_beats",
        "threads": "threads",
        "hp": "filter.hp_cutoff_hz",
        "lp": "filter.lp_cutoff_hz",
        "order": "filter.order",
        "mains": "filter.mains_hz",
        "mains_q": "filter.mains_q",
        "folds": "grid.folds",
    }
    for attr, key in direct.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    for item in getattr(args, "grid", []) or []:
        if "=" not in item:
            raise ConfigError(f"--grid expects KEY=V1,V2 but got {item!r}")
        key, _, value = item.partition("=")
        overrides[f"grid.{key.strip()}"] = value.strip()
    config = apply_overrides(config, overrides)
    env_cap = os.environ.get(THREADS_ENV)
    if env_cap:
        config = replace(config, threads=max(1, min(config.threads, int(env_cap))))
    return config


def _session(token: str) -> Session:
    return Session.parse(token)


def _condition(args) -> Condition:
    return Condition(_session(args.train_session), _session(args.test_session))


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    noise = synth.NoiseConfig(
        baseline_amp_mv=args.baseline_amp,
        mains_amp_mv=args.mains_amp,
        white_std_mv=args.white_std,
    )
    config = synth.SynthConfig(
        n_subjects=args.subjects,
        duration_s=args.duration,
        recordings_per_session=args.recordings,
        sample_rate_hz=args.rate,
        noise=noise,
        session_drift=args.drift,
        seed=args.seed if args.seed is not None else 0,
    )
    corpus = synth.emit_corpus(config, args.out)
    print(f"wrote {len(corpus.manifest.entries)} traces for {len(corpus.subjects)} subjects to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    corpus = load_corpus(args.corpus)
    print(f"corpus: {args.corpus}")
    print(f"subjects: {len(corpus.subjects)}")
    for subject in corpus.subjects:
        parts = []
        for session in corpus.manifest.sessions:
            recs = corpus.recordings(subject, session)
            if recs:
                total = sum(t.duration_s for t in recs)
                parts.append(f"{session.value}: {len(recs)} rec, {total:.1f} s")
        print(f"  {subject}  " + "; ".join(parts))
    return 0


def cmd_preprocess(args) -> int:
    config = build_config(args)
    corpus = load_corpus(args.corpus)
    cascades = {}
    filtered = []
    for key in sorted(corpus.traces):
        trace = corpus.traces[key]
        fs = trace.sample_rate_hz
        if fs not in cascades:
            cascades[fs] = design_conditioning(config.filter, fs)
        filtered.append(filter_zero_phase(trace, cascades[fs]))
    out = Path(args.out)
    save_corpus(out, filtered)
    if args.dump_filter:
        text = "".join(c.dump_text() for c in cascades.values())
        Path(args.dump_filter).write_text(text, encoding="utf-8")
    print(f"wrote {len(filtered)} conditioned traces to {out}")
    return 0


def _segment_sessions(corpus, config: RunConfig):
    """Per (subject, session): conditioned, segmented, outlier-rejected beats."""
    cascades = {}
    for subject in corpus.subjects:
        for session in corpus.manifest.sessions:
            recordings = corpus.recordings(subject, session)
            if not recordings:
                continue
            parts = []
            offset = 0
            accent_first = None
            for trace in recordings:
                fs = trace.sample_rate_hz
                if fs not in cascades:
                    cascades[fs] = design_conditioning(config.filter, fs)
                conditioned = filter_zero_phase(trace, cascades[fs])
                beats, peaks, accent = segmentation.segment_trace(conditioned, config.segmentation)
                if accent_first is None:
                    accent_first = (accent, peaks, fs)
                parts.append(segmentation.shift_peaks(beats, offset))
                offset += trace.n_samples
            merged = segmentation.merge_beat_matrices(parts)
            if merged.n_beats >= 2:
                merged = segmentation.reject_outlier_beats(merged, config.segmentation.reject_fraction)
            yield subject, session, merged, accent_first


def cmd_segment(args) -> int:
    config = build_config(args)
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kept = []
    first_accent = None
    for subject, session, beats, accent in _segment_sessions(corpus, config):
        stem = f"{subject}_{session.value}"
        segmentation.write_beats_file(out / f"{stem}.beats", beats)
        segmentation.write_peaks_file(out / f"{stem}.peaks", beats.origin_peaks)
        kept.append((subject, session, beats))
        if first_accent is None:
            first_accent = accent
        log.info("%s %s: %d beats", subject, session.value, beats.n_beats)
    if args.plot and kept:
        accent, peaks, fs = first_accent
        threshold = segmentation.detection_threshold(accent, config.segmentation, fs)
        plots.plot_peak_detection(accent, threshold, peaks.indices, fs, out / "peak_detection.svg")
        labeled = [
            (f"{s}/{ses.value}", bm.beats, bm.sample_rate_hz, bm.pre_samples)
            for s, ses, bm in kept[:8]
        ]
        plots.plot_mean_beats(labeled, out / "mean_beats.svg")
    print(f"wrote beats for {len(kept)} subject-sessions to {out}")
    return 0


def cmd_features(args) -> int:
    config = build_config(args)
    corpus = load_corpus(args.corpus)
    prepared = prepare_subject_beats(corpus, config)
    train_session = _session(args.train_session)
    stacks = [sb.train for (s, ses), sb in sorted(prepared.items()) if ses == train_session and sb.train.size]
    if not stacks:
        raise CorpusError(f"no training beats in session {train_session.value}")
    model = fit_feature_model(np.vstack(stacks), config.n_components)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_feature_model(out / "feature_model.txt", model)
    for name, pick in (("train_vectors.tsv", lambda sb: sb.train), ("test_vectors.tsv", lambda sb: sb.test)):
        lines = ["subject\tsession\t" + "\t".join(f"v{i}" for i in range(model.n_components))]
        for (subject, session), sb in sorted(prepared.items()):
            rows = pick(sb)
            if rows.size == 0:
                continue
            for vec in project(rows, model):
                lines.append(f"{subject}\t{session.value}\t" + "\t".join(repr(float(v)) for v in vec))
        (out / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote feature model ({model.n_components} components) and vectors to {out}")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    corpus = load_corpus(args.corpus)
    prepared = prepare_subject_beats(corpus, config)
    condition = Condition(_session(args.train_session), _session(args.train_session))
    data = condition_features(prepared, condition, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    all_train = [v for s in sorted(data.train_vectors) for v in data.train_vectors[s]]
    trained = 0
    for target in sorted(data.train_vectors):
        labeled = classifiers.LabeledSet(tuple(all_train), target)
        from .evaluation import stable_seed

        model = classifiers.train_auth_model(
            labeled, config.model, config.grid, seed=stable_seed(config.seed, condition.label, "train", target)
        )
        classifiers.write_auth_model(out / f"model_{target}.txt", model)
        trained += 1
        log.info("trained %s model for %s (threshold %.4f)", config.model, target, model.decision_threshold)
    print(f"wrote {trained} {config.model} models to {out}")
    return 0


def cmd_eval(args) -> int:
    config = build_config(args)
    corpus = load_corpus(args.corpus)
    condition = _condition(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare_subject_beats(corpus, config)
    if args.protocol == "a":
        result = run_protocol_a(None, condition, config, prepared=prepared)
        report = result.eer
    else:
        report = run_protocol_b(None, condition, config, prepared=prepared)
    name = f"protocol_{args.protocol}_{condition.train_session.value}_{condition.test_session.value}.tsv"
    write_report(out / name, report)
    print(format_summary([report], title=f"Protocol {report.protocol} ({report.metric.upper()})"))
    print(f"wrote {out / name}")
    return 0


def cmd_pipeline(args) -> int:
    config = build_config(args)
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare_subject_beats(corpus, config)
    reports_a: list[EvalReport] = []
    reports_b: list[EvalReport] = []
    for condition in CONDITIONS:
        log.info("condition %s: protocol A", condition.label)
        result_a = run_protocol_a(None, condition, config, prepared=prepared)
        reports_a.append(result_a.eer)
        name_a = f"protocol_a_{condition.train_session.value}_{condition.test_session.value}.tsv"
        write_report(out / name_a, result_a.eer)
        log.info("condition %s: protocol B", condition.label)
        report_b = run_protocol_b(None, condition, config, prepared=prepared)
        reports_b.append(report_b)
        name_b = f"protocol_b_{condition.train_session.value}_{condition.test_session.value}.tsv"
        write_report(out / name_b, report_b)
    summary_a = format_summary(reports_a, title="Protocol A: average test-score EER per condition")
    summary_b = format_summary(reports_b, title="Protocol B: average HTER per condition (training-time thresholds)")
    (out / "summary_protocol_a.txt").write_text(summary_a, encoding="utf-8")
    (out / "summary_protocol_b.txt").write_text(summary_b, encoding="utf-8")
    log_lines = [
        "ecg-auth pipeline run",
        f"config_digest={config_digest(config)}",
        f"seed={config.seed}",
        f"corpus={args.corpus}",
        f"subjects={len(corpus.subjects)}",
        f"subject_sessions_prepared={len(prepared)}",
        "reports=" + ",".join(sorted(p.name for p in out.glob("protocol_*.tsv"))),
        "",
        "configuration:",
    ]
    log_lines += [f"  {k}={v}" for k, v in config_items(config)]
    (out / "run.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    print(summary_a)
    print(summary_b)
    print(f"wrote 6 reports and run log to {out}")
    return 0


def cmd_plot(args) -> int:
    if args.style == "beats":
        matrices = [segmentation.read_beats_file(p) for p in args.inputs]
        labeled = [(f"{m.subject}/{m.session.value}", m.beats, m.sample_rate_hz, m.pre_samples) for m in matrices]
        plots.plot_mean_beats(labeled, args.out)
    else:
        config = build_config(args)
        from .dataset import read_trace_file

        rate, samples = read_trace_file(Path(args.inputs[0]))
        from .dataset import EcgTrace

        trace = EcgTrace("trace", Session.S1, rate, samples)
        cascade = design_conditioning(config.filter, rate)
        conditioned = filter_zero_phase(trace, cascade)
        accent = segmentation.accentuate_qrs(conditioned, config.segmentation.wavelet_scale_s)
        peaks = segmentation.detect_r_peaks(accent, config.segmentation, rate)
        threshold = segmentation.detection_threshold(accent, config.segmentation, rate)
        plots.plot_peak_detection(accent, threshold, peaks.indices, rate, args.out)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecg-auth",
        description="ECG biometric authentication experiments on text corpora.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-session corpus with ground truth")
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--duration", type=float, default=120.0, help="seconds per recording")
    p.add_argument("--recordings", type=int, default=2, help="recordings per session")
    p.add_argument("--rate", type=float, default=300.0, help="sample rate, Hz")
    p.add_argument("--drift", type=float, default=0.1, help="relative S2 template perturbation")
    p.add_argument("--baseline-amp", type=float, default=0.08, help="baseline wander amplitude, mV")
    p.add_argument("--mains-amp", type=float, default=0.04, help="mains interference amplitude, mV")
    p.add_argument("--white-std", type=float, default=0.012, help="white noise std, mV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="load and validate a corpus, print a summary")
    p.add_argument("corpus", type=Path)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="apply mains notch and band-pass, write a conditioned corpus")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dump-filter", type=Path, help="write designed coefficients to this file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("segment", help="detect R peaks and emit per-session beat matrices")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plot", action="store_true", help="also emit SVG figures")
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("features", help="fit the standardization+PCA model and emit vectors")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train-session", default="S1", help="session whose training split fits the model")
    _add_config_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one authenticator per subject")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train-session", default="S1")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run one evaluation protocol for one condition")
    p.add_argument("corpus", type=Path)
    p.add_argument("--protocol", choices=("a", "b"), required=True)
    p.add_argument("--train-session", default="S1")
    p.add_argument("--test-session", default="S1")
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run both protocols over all three session conditions")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("plot", help="emit standalone SVG figures")
    p.add_argument("style", choices=("beats", "peaks"))
    p.add_argument("inputs", nargs="+", type=Path, help="beats files, or one trace file for style=peaks")
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CorpusError, ConfigError, FilterDesignError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except classifiers.ConvergenceError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
