"""Command-line frontend: reproducible pipeline runs over WAV recordings.

Subcommands: filter, segment, heart-rate, pairs, train, classify, evaluate.
Every subcommand accepts --config FILE (key=value lines) and repeatable
--set key=value overrides; explicit flags win over both. All randomness flows
from the single `seed` key.
"""

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dp_labeler, evaluation, filtering, onset, siamese, signal_io
from .config import ConfigError, PipelineConfig, apply_setting, config_schema, load_config_file

JSON_SCHEMA_VERSION = 1


def _build_config(args) -> PipelineConfig:
    config = PipelineConfig()
    if getattr(args, "config", None):
        config = load_config_file(args.config, config)
    for setting in getattr(args, "set", None) or []:
        if "=" not in setting:
            raise ConfigError(f"--set expects key=value, got {setting!r}")
        key, raw = setting.split("=", 1)
        config = apply_setting(config, key.strip(), raw.strip())
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    return config


def _load_canonical(path, config: PipelineConfig) -> signal_io.PcgSignal:
    signal = signal_io.read_wav(path)
    if signal.sample_rate != config.sample_rate:
        signal = signal_io.resample(signal, config.sample_rate)
    return signal


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _cmd_filter(args, config: PipelineConfig) -> int:
    signal = _load_canonical(args.wav, config)
    filtered = filtering.butterworth_bandpass(signal, config.bandpass)
    if args.dump_spectrum:
        spectrum = filtering.fft(filtered.samples, filtered.sample_rate)
        half = spectrum.n // 2 + 1
        rows = [
            f"{k * spectrum.bin_hz:.6f},{abs(spectrum.bins[k]):.9g}"
            for k in range(half)
        ]
        Path(args.dump_spectrum).write_text("freq_hz,magnitude\n" + "\n".join(rows) + "\n")
    filtered = filtering.fft_filter(filtered, config.fft_filter)
    out = args.output or (Path(args.wav).stem + ".filtered.wav")
    signal_io.write_wav(out, filtered)
    return 0


def _segment(args, config: PipelineConfig):
    signal = _load_canonical(args.wav, config)
    labeled, env = evaluation.segment_recording(signal, config)
    return signal, labeled, env


def _cmd_segment(args, config: PipelineConfig) -> int:
    _, labeled, env = _segment(args, config)
    if args.dump_envelope:
        frame_s = env.frame_hop / env.sample_rate
        rows = [
            f"{t},{t * frame_s:.6f},{value:.9g}" for t, value in enumerate(env.strength)
        ]
        Path(args.dump_envelope).write_text("frame,time_s,strength\n" + "\n".join(rows) + "\n")
    try:
        bpm = dp_labeler.heart_rate(labeled, cycle="s1s1")
    except dp_labeler.HeartRateUndefinedError:
        bpm = None
    payload = {
        "schema_version": JSON_SCHEMA_VERSION,
        "recording": Path(args.wav).stem,
        "sample_rate": config.sample_rate,
        "onsets": [
            {"time_s": o.time, "label": o.label, "inserted": o.inserted}
            for o in labeled.onsets
        ],
        "heart_rate_bpm": bpm,
    }
    if args.format == "csv":
        rows = ["time_s,label,inserted,dp_value,parent_index"]
        rows += [
            f"{o.time:.6f},{o.label},{int(o.inserted)},{o.dp_value:.9g},"
            f"{'' if o.parent is None else o.parent}"
            for o in labeled.onsets
        ]
        text = "\n".join(rows) + "\n"
        if args.output and args.output != "-":
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
    else:
        _write_json(args.output or "-", payload)
    return 0


def _cmd_heart_rate(args, config: PipelineConfig) -> int:
    _, labeled, _ = _segment(args, config)
    bpm = dp_labeler.heart_rate(labeled, cycle=args.cycle_def)
    print(f"{bpm:.2f}")
    return 0


def _collect_events(data_dir: Path, config: PipelineConfig):
    """Per-recording S1/S2 event images cut between consecutive annotations."""
    class1: list[siamese.EventImage] = []
    class2: list[siamese.EventImage] = []
    for wav_path in sorted(data_dir.glob("*.wav")):
        ann_path = evaluation.find_annotation(wav_path)
        if ann_path is None:
            warnings.warn(f"{wav_path}: no annotation file, skipped")
            continue
        raw = signal_io.read_wav(wav_path)
        annotations = signal_io.load_annotations(ann_path)
        if len(annotations) < 2:
            continue
        signal = raw
        if signal.sample_rate != config.sample_rate:
            signal = signal_io.resample(signal, config.sample_rate)
        scale = config.sample_rate / raw.sample_rate
        positions = [int(round(t * scale)) for t, _ in annotations.entries]
        gaps = np.diff(positions)
        median_gap = int(np.median(gaps)) if gaps.size else config.siamese.event_len
        bounds = positions + [min(len(signal), positions[-1] + median_gap)]
        for k, (_, label) in enumerate(annotations.entries):
            start, end = bounds[k], bounds[k + 1]
            if end - start < 2 or end > len(signal):
                continue
            event = siamese.extract_event(
                signal, start, end, config.siamese.event_len, recording_id=wav_path.stem
            )
            (class1 if label == "S1" else class2).append(event)
    return class1, class2


def _cmd_pairs(args, config: PipelineConfig) -> int:
    data_dir = Path(args.data)
    class1, class2 = _collect_events(data_dir, config)
    if args.train_recordings:
        # seeded selection of recordings mirrors a train/test split by stem
        stems = sorted({ev.source[0] for ev in class1 + class2})
        rng = np.random.default_rng(config.seed)
        chosen = set(
            rng.choice(stems, size=min(args.train_recordings, len(stems)), replace=False)
        )
        class1 = [ev for ev in class1 if ev.source[0] in chosen]
        class2 = [ev for ev in class2 if ev.source[0] in chosen]
    if len(class1) < 2:
        print("error: need at least 2 S1 events to build pairs", file=sys.stderr)
        return 1
    siamese.save_pair_dataset(args.output, class1, class2)
    n_pos = len(class1) * (len(class1) - 1) // 2
    print(
        f"{len(class1)} S1 events, {len(class2)} S2 events -> "
        f"{n_pos} positive and {len(class1) * len(class2)} negative pairs"
    )
    return 0


def _cmd_train(args, config: PipelineConfig) -> int:
    class1, class2 = siamese.load_pair_dataset(args.pairs)
    hyper = replace(config.siamese, event_len=class1[0].values.size)
    pairs = siamese.make_pairs(class1, class2)
    result = siamese.train(
        pairs,
        hyper=hyper,
        learning_rate=config.train.learning_rate,
        epochs=config.train.epochs,
        batch_size=config.train.batch_size,
        seed=config.seed,
    )
    siamese.save_model(args.output, result.model)
    for epoch, (loss_value, acc) in enumerate(zip(result.losses, result.accuracies)):
        print(f"epoch {epoch}: loss {loss_value:.6f} accuracy {acc:.4f}")
    return 0


def _cmd_classify(args, config: PipelineConfig) -> int:
    model = siamese.load_model(args.model)
    exemplars, _ = siamese.load_pair_dataset(args.exemplars)
    signal = _load_canonical(args.wav, config)
    work = filtering.butterworth_bandpass(signal, config.bandpass)
    work = filtering.fft_filter(work, config.fft_filter)
    onsets = onset.detect_onsets(work, config.onset)
    events = []
    for start, end in zip(onsets.times, onsets.times[1:]):
        if end - start < 2:
            continue
        event = siamese.extract_event(
            signal, int(start), int(end), model.hyper.event_len,
            recording_id=Path(args.wav).stem,
        )
        label = siamese.classify_event(model, event, exemplars, threshold=config.threshold)
        events.append(
            {
                "start_s": int(start) / config.sample_rate,
                "end_s": int(end) / config.sample_rate,
                "label": label,
            }
        )
    payload = {
        "schema_version": JSON_SCHEMA_VERSION,
        "recording": Path(args.wav).stem,
        "sample_rate": config.sample_rate,
        "events": events,
    }
    _write_json(args.output or "-", payload)
    return 0


def _cmd_evaluate(args, config: PipelineConfig) -> int:
    report = evaluation.evaluate_dataset(
        args.data, config, pairing=args.pairing, jobs=args.jobs
    )
    if args.text:
        text = report.to_text()
        if args.output and args.output != "-":
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
    else:
        _write_json(args.output or "-", report.to_dict())
    return 1 if report.any_flagged else 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="override the RNG seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heartseg",
        description="S1/S2 heart sound segmentation and classification for PCG recordings",
        epilog="configuration keys: " + " ".join(sorted(config_schema())),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="bandpass + dominant-band FFT filter a recording")
    p.add_argument("wav")
    p.add_argument("-o", "--output")
    p.add_argument("--dump-spectrum", metavar="FILE", help="write freq_hz,magnitude rows")
    _add_common(p)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("segment", help="detect and label S1/S2 onsets")
    p.add_argument("wav")
    p.add_argument("-o", "--output")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--dump-envelope", metavar="FILE", help="write frame,time_s,strength rows")
    _add_common(p)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("heart-rate", help="print beats per minute")
    p.add_argument("wav")
    p.add_argument(
        "--cycle-def",
        choices=("s1s1", "s1s2"),
        default="s1s1",
        help="cycle definition: S1-to-next-S1 (default) or S1-to-S2 pair duration",
    )
    _add_common(p)
    p.set_defaults(func=_cmd_heart_rate)

    p = sub.add_parser("pairs", help="build a Siamese pair dataset from annotated recordings")
    p.add_argument("--data", required=True, help="directory of WAV + annotation files")
    p.add_argument("-o", "--output", required=True)
    p.add_argument(
        "--train-recordings",
        type=int,
        metavar="N",
        help="randomly keep events from N recordings (seeded)",
    )
    _add_common(p)
    p.set_defaults(func=_cmd_pairs)

    p = sub.add_parser("train", help="fit the Siamese model on a pair dataset")
    p.add_argument("--pairs", required=True)
    p.add_argument("-o", "--output", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("classify", help="one-class S1 labeling of inter-onset events")
    p.add_argument("wav")
    p.add_argument("--model", required=True)
    p.add_argument("--exemplars", required=True, help="pair dataset supplying S1 exemplars")
    p.add_argument("-o", "--output")
    _add_common(p)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("evaluate", help="total-error benchmark over a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("-o", "--output")
    p.add_argument("--text", action="store_true", help="emit delimited text instead of JSON")
    p.add_argument("--pairing", choices=("nearest", "aligned"), default="nearest")
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _build_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, config)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
