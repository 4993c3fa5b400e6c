"""Command-line entry point: ``ctxabx {items,abx,map,perturb,synth,report}``.

Exit codes: 0 success, 1 nothing evaluable, 2 input or validation error.
The default output directory comes from ``$CTXABX_OUTPUT_DIR`` (else ``.``).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .abxscore import Evaluator, NoEvaluableTasks, reports_to_csv, reports_to_json
from .dissim import FrameDissimKind, SeqDissimKind
from .featureio import (
    AlignmentError,
    FeatureFormatError,
    FeatureMatrix,
    extract_tokens,
    read_alignments,
    read_features,
    read_word_alignments,
    write_alignments,
    write_features,
    write_word_alignments,
)
from .itemgen import ConditionSpec, cell_statistics, cells_from_tokens, enumerate_tasks, read_item_file, write_item_file
from .mapeval import map_result, result_to_json, word_tokens
from .perturb import PerturbSpec, PhoneInventory, filter_corpus, one_hot_corpus, shift_corpus
from .synthgen import SynthSpec, generate

log = logging.getLogger("ctxabx")

OUTPUT_ENV = "CTXABX_OUTPUT_DIR"
EXIT_OK, EXIT_EMPTY, EXIT_INPUT = 0, 1, 2

REPORT_COLUMNS = ("system", "metric", "condition", "speaker_mode", "seq_dissim", "frame_dissim", "value")


class InputError(Exception):
    """Bad paths or arguments; maps to exit code 2."""


def _existing(path: str | None, what: str) -> Path:
    if path is None:
        raise InputError(f"missing required {what}")
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _conditions(args) -> list[ConditionSpec]:
    return [
        ConditionSpec(c, s, max_triples_per_task=args.max_triples, rng_seed=args.seed)
        for c in args.context
        for s in args.speaker
    ]


def _frame_kind(args) -> FrameDissimKind:
    return FrameDissimKind(args.frame_dissim, args.epsilon)


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------- commands


def cmd_items(args) -> int:
    features = read_features(_existing(args.features, "feature archive"), args.frame_period)
    segments = read_alignments(_existing(args.alignments, "alignment file"))
    tokens = extract_tokens(features, segments)
    out = _out_dir(args)
    for spec in _conditions(args):
        cells = cells_from_tokens(tokens, spec)
        taskset = enumerate_tasks(cells, spec)
        stem = f"items_{spec.context_mode.value}_context_{spec.speaker_mode.value}_speaker"
        write_item_file(cells, out / f"{stem}.tsv")
        stats = cell_statistics(cells)
        stats.update({
            "condition": f"{spec.context_mode.value}_context",
            "speaker_mode": f"{spec.speaker_mode.value}_speaker",
            "cell_key": ["phone", "prev", "next", "speaker"] if spec.context_mode.value == "within"
            else ["phone", "speaker"],
            "n_tasks": len(taskset.tasks),
            "n_skipped": taskset.n_skipped,
            "skipped_reasons": dict(sorted(taskset.skipped_reasons.items())),
        })
        _write(out / f"{stem}.json", json.dumps(stats, indent=2, sort_keys=True) + "\n")
        log.info("%s: %d cells, %d tasks, %d skipped", stem, stats["n_cells"], stats["n_tasks"], stats["n_skipped"])
    return EXIT_OK


def cmd_abx(args) -> int:
    features = read_features(_existing(args.features, "feature archive"), args.frame_period)
    if args.items:
        segments = read_item_file(_existing(args.items, "item file"))
    else:
        segments = read_alignments(_existing(args.alignments, "alignment file"))
    tokens = extract_tokens(features, segments)
    frame_kind = _frame_kind(args)
    reports = []
    empty = []
    for seq in args.seq_dissim:
        ev = Evaluator(tokens, frame_kind=frame_kind, seq_kind=SeqDissimKind(seq), workers=args.workers)
        for spec in _conditions(args):
            try:
                reports.append(ev.run(spec))
            except NoEvaluableTasks as exc:
                empty.append(str(exc))
    if empty:
        for msg in empty:
            print(f"ctxabx abx: {msg}", file=sys.stderr)
        return EXIT_EMPTY
    out = _out_dir(args)
    if "csv" in args.format:
        _write(out / "abx.csv", reports_to_csv(reports))
    if "json" in args.format:
        _write(out / "abx.json", reports_to_json(reports, system=args.name))
    for r in reports:
        log.info("%s %s %s/%s: %.2f%%", r.condition, r.speaker_mode, r.seq_dissim, r.frame_dissim,
                 r.error_rate_percent)
    return EXIT_OK


def cmd_map(args) -> int:
    features = read_features(_existing(args.features, "feature archive"), args.frame_period)
    words = read_word_alignments(_existing(args.words, "word alignment file"))
    tokens = word_tokens(words, features)
    try:
        result = map_result(tokens, _frame_kind(args))
    except ValueError as exc:
        print(f"ctxabx map: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    out = _out_dir(args)
    if "csv" in args.format:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("metric", "frame_dissim", "map_percent", "n_tokens", "n_same_pairs"))
        w.writerow(("MAP", result.frame_dissim, f"{result.map_percent:.2f}", result.n_tokens, result.n_same_pairs))
        _write(out / "map.csv", buf.getvalue())
    if "json" in args.format:
        _write(out / "map.json", result_to_json(result, system=args.name))
    log.info("MAP %.2f%% over %d word tokens", result.map_percent, result.n_tokens)
    return EXIT_OK


def cmd_perturb(args) -> int:
    spec = PerturbSpec(args.shift_k, args.shift_p, args.filter_width, args.seed)
    out = _out_dir(args)
    features = read_features(_existing(args.features, "feature archive"), args.frame_period) if args.features else None
    if args.one_hot or args.shift_k:
        segments = read_alignments(_existing(args.alignments, "alignment file"))
    else:
        segments = None
    period = args.frame_period
    if features:
        period = next(iter(features.values())).frame_period_s
    if segments is not None and spec.shift_frames:
        segments = shift_corpus(segments, spec, period)
        write_alignments(segments, out / "alignments_shifted.tsv")
    if args.one_hot:
        n_frames = {uid: m.n_frames for uid, m in features.items()} if features else None
        features = one_hot_corpus(segments, PhoneInventory.from_segments(segments), period, n_frames)
    if features is None:
        if spec.filter_width != 1:
            raise InputError("--filter-width needs --features or --one-hot")
        return EXIT_OK
    features = filter_corpus(features, spec.filter_width)
    write_features(features, out / "features.abxf")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_phones=args.n_phones, n_speakers=args.n_speakers, n_utterances=args.n_utterances,
        phones_per_utterance=args.phones_per_utterance, dim=args.dim,
        context_coloring=args.context_coloring, speaker_strength=args.speaker_strength,
        noise=args.noise, frames_per_phone=(args.min_frames, args.max_frames), rng_seed=args.seed,
        word_length=args.word_length, lexicon_size=args.lexicon_size,
        shared_prototype=args.shared_prototype, frame_period_s=args.frame_period,
    )
    corpus = generate(spec)
    out = _out_dir(args)
    write_features(corpus.features, out / "features.abxf")
    write_alignments(corpus.phones, out / "phones.tsv")
    write_word_alignments(corpus.words, out / "words.tsv")
    _write(out / "synth.json", json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _report_rows(doc: dict, source: Path) -> list[dict]:
    system = doc.get("system")
    kind = doc.get("kind")
    if not system or kind not in ("abx", "map"):
        raise InputError(f"{source}: not an abx or map report")
    if kind == "map":
        return [{"system": system, "metric": "MAP", "condition": "", "speaker_mode": "", "seq_dissim": "",
                 "frame_dissim": doc["frame_dissim"], "value": f"{doc['map_percent']:.2f}"}]
    return [
        {"system": system, "metric": "ABX", "condition": r["condition"], "speaker_mode": r["speaker_mode"],
         "seq_dissim": r["seq_dissim"], "frame_dissim": r["frame_dissim"],
         "value": f"{r['error_rate_percent']:.2f}"}
        for r in doc["reports"]
    ]


def cmd_report(args) -> int:
    src = _existing(args.inputs, "report directory")
    files = sorted(src.glob("*.json")) if src.is_dir() else [src]
    if not files:
        raise InputError(f"no report JSON files in {src}")
    rows = []
    seen: dict[tuple[str, str], Path] = {}
    for f in files:
        try:
            doc = json.loads(f.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{f}: invalid JSON ({exc})") from None
        new = _report_rows(doc, f)
        key = (doc["system"], doc["kind"])
        if key in seen:
            raise InputError(f"duplicate system {doc['system']!r} ({doc['kind']}) in {seen[key]} and {f}")
        seen[key] = f
        rows.extend(new)
    rows.sort(key=lambda r: (r["system"], r["metric"], r["condition"], r["speaker_mode"],
                             r["seq_dissim"], r["frame_dissim"]))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    target = Path(args.output) if args.output else _out_dir(args) / "report.csv"
    _write(target, buf.getvalue())
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxabx", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, features=True):
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
        sp.add_argument("--frame-period", type=float, default=0.01,
                        help="frame period in seconds for text feature directories")
        if features:
            sp.add_argument("--features", help="ABXF archive or directory of .txt matrices")

    def conditions(sp):
        sp.add_argument("--context", nargs="+", choices=["within", "without"], default=["within", "without"])
        sp.add_argument("--speaker", nargs="+", choices=["within", "across"], default=["within", "across"])
        sp.add_argument("--max-triples", type=_positive_int, default=None,
                        help="cap on (a, b, x) triples per task; sampled deterministically")
        sp.add_argument("--seed", type=int, default=0)

    def dissims(sp):
        sp.add_argument("--frame-dissim", choices=["angular", "kl"], default="angular")
        sp.add_argument("--epsilon", type=float, default=1e-10, help="KL flooring constant")

    sp = sub.add_parser("items", help="build ABX cells and write item files")
    common(sp)
    sp.add_argument("--alignments", help="phone alignment TSV")
    conditions(sp)
    sp.set_defaults(func=cmd_items)

    sp = sub.add_parser("abx", help="compute ABX error rates")
    common(sp)
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--alignments", help="phone alignment TSV")
    src.add_argument("--items", help="item file written by 'items'")
    conditions(sp)
    dissims(sp)
    sp.add_argument("--seq-dissim", nargs="+", choices=["dtw", "hamming"], default=["dtw"])
    sp.add_argument("--workers", type=_positive_int, default=1)
    sp.add_argument("--format", nargs="+", choices=["csv", "json"], default=["csv", "json"])
    sp.add_argument("--name", default="system", help="system name recorded in the JSON report")
    sp.set_defaults(func=cmd_abx)

    sp = sub.add_parser("map", help="MAP of mean-pooled word embeddings")
    common(sp)
    sp.add_argument("--words", help="word alignment TSV")
    dissims(sp)
    sp.add_argument("--format", nargs="+", choices=["csv", "json"], default=["csv", "json"])
    sp.add_argument("--name", default="system")
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("perturb", help="one-hot gold, boundary shift, square filter")
    common(sp)
    sp.add_argument("--alignments", help="phone alignment TSV")
    sp.add_argument("--one-hot", action="store_true", help="replace features by one-hot gold labels")
    sp.add_argument("--shift-k", type=int, default=0, help="shift boundaries right by k frames")
    sp.add_argument("--shift-p", type=float, default=0.5, help="probability of shifting each boundary")
    sp.add_argument("--filter-width", type=int, default=1, help="odd square filter width")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_perturb)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    common(sp, features=False)
    sp.add_argument("--n-phones", type=_positive_int, default=5)
    sp.add_argument("--n-speakers", type=_positive_int, default=4)
    sp.add_argument("--n-utterances", type=_positive_int, default=10, help="per speaker")
    sp.add_argument("--phones-per-utterance", type=_positive_int, default=12)
    sp.add_argument("--dim", type=int, default=16)
    sp.add_argument("--context-coloring", type=float, default=0.0)
    sp.add_argument("--speaker-strength", type=float, default=0.0)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--min-frames", type=_positive_int, default=4)
    sp.add_argument("--max-frames", type=_positive_int, default=10)
    sp.add_argument("--word-length", type=_positive_int, default=2)
    sp.add_argument("--lexicon-size", type=int, default=0)
    sp.add_argument("--shared-prototype", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("report", help="merge report JSONs into one grid CSV")
    sp.add_argument("--inputs", required=True, help="directory of abx/map JSON reports")
    sp.add_argument("--output", help="grid CSV path (default <out>/report.csv)")
    sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except NoEvaluableTasks as exc:
        print(f"ctxabx {args.command}: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (InputError, AlignmentError, FeatureFormatError, FileNotFoundError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ctxabx {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
