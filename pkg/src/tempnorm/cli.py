"""Command-line entry point: ``tempnorm <stage> [flags]``.

Stages hand off through files.  JSON outputs carry the resolved
configuration under ``config``; CSV and JSON Lines outputs get a
``<stem>.meta.json`` sidecar holding it.  Every write is atomic.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from tempnorm import __version__
from tempnorm.core import (
    DEFAULT_OFFSET,
    DEFAULT_SCALE,
    classify_region,
    combine_max,
    format_half_life,
    parse_half_life,
    tempnorm_ratings,
)
from tempnorm.evaluation import (
    DEFAULT_HALF_LIVES,
    cohort_diagnostics,
    enrollment_curve,
    sweep_half_life,
)
from tempnorm.features import (
    FeatureRecord,
    TranscriptRecord,
    emotion_feature_vector,
    read_records,
    synthetic_feature_records,
    transcript_graph_features,
    write_records,
)
from tempnorm.io import atomic_write, dumps_json, rounded, sidecar_path
from tempnorm.neural import MLPConfig, TrainConfig, subjects_from_records, train
from tempnorm.sim import (
    CohortJitter,
    SubjectGenConfig,
    apply_selection,
    generate_cohort,
    read_cohort,
    write_cohort,
)

log = logging.getLogger("tempnorm")

EXIT_IO = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", message, self.format_usage().strip())
        sys.exit(EXIT_USAGE)


def _fail(kind: str, message: str, usage: str | None = None) -> None:
    payload = {"error": kind, "message": message}
    if usage:
        payload["usage"] = usage
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _half_lives(text: str) -> list[float]:
    try:
        return [parse_half_life(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _half_life(text: str) -> float:
    try:
        return parse_half_life(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _pair(text: str) -> tuple[float, float]:
    parts = [float(t) for t in str(text).split(",")]
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected 'mania,depression' or one value")
    return tuple(parts)


def _add_thresholds(p):
    p.add_argument("--lower", type=float, default=1.0, help="typical/unused boundary (SD)")
    p.add_argument("--upper", type=float, default=2.0, help="unused/anomaly boundary (SD)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tempnorm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def stage(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON file of flag defaults; explicit flags win")
        return p

    p = stage("simulate", "generate a synthetic cohort CSV")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--weeks", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--anomaly-rate", type=float, default=SubjectGenConfig.anomaly_rate)
    p.add_argument("--anomaly-magnitude", type=float, default=SubjectGenConfig.anomaly_magnitude)
    p.add_argument("--zero-inflation", type=float, default=SubjectGenConfig.zero_inflation)
    p.add_argument("--missing-rate", type=float, default=SubjectGenConfig.missing_rate)
    p.add_argument("--base-mean", type=_pair, default=SubjectGenConfig.base_mean)
    p.add_argument("--base-std", type=_pair, default=SubjectGenConfig.base_std)
    p.add_argument("--drift-std", type=_pair, default=SubjectGenConfig.drift_std)
    p.add_argument("--jitter-mean", type=_pair, default=CohortJitter.base_mean)
    p.add_argument("--jitter-std", type=_pair, default=CohortJitter.base_std)

    p = stage("normalize", "per-week normalized scores and regions")
    p.add_argument("-i", "--input", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--half-life", type=_half_life, default=16.0)
    p.add_argument("--offset", type=float, default=DEFAULT_OFFSET)
    p.add_argument("--scale", type=float, default=DEFAULT_SCALE)
    _add_thresholds(p)

    p = stage("sweep", "UAR against flags for each half-life")
    p.add_argument("-i", "--input", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--half-lives", type=_half_lives, default=list(DEFAULT_HALF_LIVES))
    p.add_argument("--min-samples", type=int, default=0)
    p.add_argument("--csv", type=Path, help="also write a plot-ready table")
    _add_thresholds(p)

    p = stage("enroll", "UAR as a function of enrollment length")
    p.add_argument("-i", "--input", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--half-lives", type=_half_lives, default=[8.0, 16.0])
    p.add_argument("--max-enrollment", type=int, default=12)
    p.add_argument("--min-samples", type=int, default=0)
    p.add_argument("--csv", type=Path)
    _add_thresholds(p)

    p = stage("diagnose", "mean/std/normality of normalized ratings")
    p.add_argument("-i", "--input", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--half-lives", type=_half_lives, default=list(DEFAULT_HALF_LIVES))
    p.add_argument("--csv", type=Path)

    p = stage("features", "build feature records (JSON Lines)")
    p.add_argument("-i", "--input", type=Path, required=True,
                   help="cohort CSV (synthetic) or JSON Lines of segments (emotion, graph)")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--kind", choices=("synthetic", "emotion", "graph"), default="synthetic")
    p.add_argument("--width", type=int, default=8, help="synthetic feature width")
    p.add_argument("--dims", type=int, default=6, help="emotion dimensions per segment")
    p.add_argument("--offset-std", type=float, default=2.0)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = stage("train", "five-fold training and per-subject test UAR")
    p.add_argument("-i", "--input", type=Path, required=True, help="cohort CSV")
    p.add_argument("-f", "--features", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    p.add_argument("--half-life", type=_half_life, default=8.0)
    p.add_argument("--hidden", type=int, default=256, help="width of all six hidden layers")
    p.add_argument("--folds", type=int, default=TrainConfig.folds)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--pretrain-epochs", type=int, default=TrainConfig.pretrain_epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--weight-cap", type=float, default=TrainConfig.weight_cap)
    p.add_argument("--min-samples", type=int, default=8)
    p.add_argument("--no-feature-tempnorm", action="store_true")
    p.add_argument("--no-reorder", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = stage("report", "render a JSON report as a CSV table")
    p.add_argument("-i", "--input", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    return parser


def _resolved(args: argparse.Namespace) -> dict:
    skip = {"config", "verbose", "input", "output", "csv", "features"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        if k == "half_life":
            v = format_half_life(v)
        elif k == "half_lives":
            v = [format_half_life(h) for h in v]
        elif isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    for k in ("input", "features"):
        if getattr(args, k, None) is not None:
            out[k] = str(getattr(args, k))
    return out


def _write_csv(path: Path, header, rows, config: dict) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    atomic_write(path, buf.getvalue())
    atomic_write(sidecar_path(path), dumps_json({"config": config}))


def _cell(v):
    v = rounded(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def _load_cohort(args):
    cohort = read_cohort(args.input)
    min_samples = getattr(args, "min_samples", 0)
    if min_samples:
        cohort = apply_selection(cohort, min_samples)
    return cohort


def cmd_simulate(args, config):
    template = SubjectGenConfig(
        n_weeks=args.weeks,
        base_mean=args.base_mean,
        base_std=args.base_std,
        drift_std=args.drift_std,
        anomaly_rate=args.anomaly_rate,
        anomaly_magnitude=args.anomaly_magnitude,
        zero_inflation=args.zero_inflation,
        missing_rate=args.missing_rate,
    )
    jitter = CohortJitter(base_mean=args.jitter_mean, base_std=args.jitter_std)
    cohort = generate_cohort(args.subjects, template, jitter, seed=args.seed)
    write_cohort(cohort, args.output, config)


def cmd_normalize(args, config):
    cohort = read_cohort(args.input)
    rows = []
    for tl in sorted(cohort.subjects, key=lambda s: s.subject_id):
        if len(tl) == 0:
            continue
        mania, depression = tempnorm_ratings(tl.ymrs, tl.hdrs, args.half_life, args.offset, args.scale)
        both = combine_max(mania, depression)
        for r, m, d, y in zip(tl.rows, mania, depression, both):
            region = classify_region(y, args.lower, args.upper).value
            rows.append((tl.subject_id, r.week, r.ymrs, r.hdrs, int(r.flag), m, d, y, region))
    header = ("subject_id", "week", "ymrs", "hdrs", "flag", "mania", "depression", "max", "region")
    _write_csv(args.output, header, rows, config)


SWEEP_HEADER = (
    "half_life", "enrollment", "n_subjects",
    "typical", "typical_flagged", "unused", "unused_flagged", "anomaly", "anomaly_flagged",
    "uar_mean", "uar_std",
)


def _row_cells(row: dict) -> list:
    c = row["counts"]
    return [
        row["half_life"], row.get("enrollment", 0), row["n_subjects"],
        c["typical"]["total"], c["typical"]["flagged"],
        c["unused"]["total"], c["unused"]["flagged"],
        c["anomaly"]["total"], c["anomaly"]["flagged"],
        row["uar_mean"], row["uar_std"],
    ]


def cmd_sweep(args, config):
    rows = [r.to_dict() for r in sweep_half_life(_load_cohort(args), args.half_lives, args.lower, args.upper)]
    report = {"kind": "sweep", "config": config, "rows": rows}
    atomic_write(args.output, dumps_json(report))
    if args.csv:
        _write_csv(args.csv, SWEEP_HEADER, [_row_cells(r) for r in rows], config)


def cmd_enroll(args, config):
    if args.max_enrollment < 0:
        raise UsageError("--max-enrollment must be >= 0")
    curve = enrollment_curve(
        _load_cohort(args), args.half_lives, range(args.max_enrollment + 1), args.lower, args.upper
    )
    rows = []
    for r in curve:
        d = r.to_dict()
        d["enrollment"] = r.enrollment
        rows.append(d)
    report = {"kind": "enroll", "config": config, "rows": rows}
    atomic_write(args.output, dumps_json(report))
    if args.csv:
        _write_csv(args.csv, SWEEP_HEADER, [_row_cells(r) for r in rows], config)


DIAG_HEADER = ("half_life", "dimension", "mean", "std", "r2", "n")


def _diag_cells(rows):
    for r in rows:
        for dim in ("mania", "depression"):
            d = r[dim]
            yield [r["half_life"], dim, d["mean"], d["std"], d["r2"], d["n"]]


def cmd_diagnose(args, config):
    rows = cohort_diagnostics(read_cohort(args.input), args.half_lives)
    atomic_write(args.output, dumps_json({"kind": "diagnose", "config": config, "rows": rows}))
    if args.csv:
        _write_csv(args.csv, DIAG_HEADER, list(_diag_cells(rows)), config)


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def cmd_features(args, config):
    if args.kind == "synthetic":
        records = synthetic_feature_records(
            read_cohort(args.input), args.width, args.seed, args.offset_std, args.noise_std
        )
    elif args.kind == "emotion":
        records = []
        for obj in _read_jsonl(args.input):
            segs = np.asarray(obj["segments"], float)
            vec = emotion_feature_vector(segs, args.dims)
            meta = {"segments": int(len(segs))}
            records.append(FeatureRecord(obj["subject_id"], obj["week"], vec, f"emotion-stats-{args.dims}", meta))
    else:
        records = []
        for obj in _read_jsonl(args.input):
            rec = TranscriptRecord(obj["segments"])
            meta = {"segments": len(rec.segments), "words": rec.word_count}
            records.append(FeatureRecord(obj["subject_id"], obj["week"], transcript_graph_features(rec), "speech-graph-72", meta))
    records.sort(key=lambda r: (r.subject_id, r.week))
    atomic_write(args.output, write_records(records))
    atomic_write(sidecar_path(args.output), dumps_json({"config": config}))


def cmd_train(args, config):
    cohort = read_cohort(args.input)
    records = read_records(args.features.read_text(encoding="utf-8"))
    if records and records[0].meta and "segments" in records[0].meta and "words" in records[0].meta:
        cohort = apply_selection(cohort, args.min_samples, records)
    else:
        cohort = apply_selection(cohort, args.min_samples)
    subjects = subjects_from_records(cohort, records)
    if not subjects:
        raise ValueError("no subjects with both ratings and features")
    width = subjects[0].features.shape[1]
    mlp = MLPConfig(width, hidden=(args.hidden,) * 6, half_life=args.half_life)
    tcfg = TrainConfig(
        folds=args.folds,
        epochs=args.epochs,
        pretrain_epochs=args.pretrain_epochs,
        learning_rate=args.lr,
        weight_cap=args.weight_cap,
        reorder=not args.no_reorder,
        feature_tempnorm=not args.no_feature_tempnorm,
    )
    result = train(subjects, mlp, tcfg, seed=args.seed)
    out: Path = args.output
    report = {"kind": "train", "config": config, **result.report()}
    for fold in result.folds:
        atomic_write(out / f"fold{fold.fold}.json", fold.model.to_json() + "\n")
    atomic_write(out / "train_log.jsonl", "".join(json.dumps(rounded(r), sort_keys=True) + "\n" for r in result.log))
    atomic_write(out / "train_log.meta.json", dumps_json({"config": config}))
    atomic_write(out / "report.json", dumps_json(report))


def cmd_report(args, config):
    report = json.loads(args.input.read_text(encoding="utf-8"))
    kind = report.get("kind")
    if kind in ("sweep", "enroll"):
        _write_csv(args.output, SWEEP_HEADER, [_row_cells(r) for r in report["rows"]], report["config"])
    elif kind == "diagnose":
        _write_csv(args.output, DIAG_HEADER, list(_diag_cells(report["rows"])), report["config"])
    elif kind == "train":
        rows = [(sid, u) for sid, u in report["subject_uar"].items()]
        rows.append(("mean", report["uar_mean"]))
        _write_csv(args.output, ("subject_id", "uar"), rows, report["config"])
    else:
        raise ValueError(f"{args.input}: unknown report kind {kind!r}")


COMMANDS = {
    "simulate": cmd_simulate,
    "normalize": cmd_normalize,
    "sweep": cmd_sweep,
    "enroll": cmd_enroll,
    "diagnose": cmd_diagnose,
    "features": cmd_features,
    "train": cmd_train,
    "report": cmd_report,
}


def parse_args(argv) -> argparse.Namespace:
    """Parse ``argv``, folding a ``--config`` file in beneath explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        overrides = json.loads(args.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(overrides, dict):
        parser.error("config file must hold a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            parser.error(f"unknown config key {key!r} for {args.command}")
        action = known[dest]
        if action.type is not None and isinstance(value, (str, int, float)):
            value = action.type(str(value))
        elif action.type is not None and isinstance(value, list):
            value = action.type(",".join(str(v) for v in value))
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except OSError as exc:
        _fail("io", str(exc))
        return EXIT_IO
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    config = _resolved(args)
    try:
        COMMANDS[args.command](args, config)
    except UsageError as exc:
        _fail("usage", str(exc))
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        _fail("io" if isinstance(exc, OSError) else "invalid-input", str(exc))
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
