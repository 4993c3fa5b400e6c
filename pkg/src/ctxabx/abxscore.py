"""ABX discriminability per task, symmetrisation and hierarchical aggregation."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dissim import FrameDissimKind, SeqDissimKind, TokenDissimilarity, count_wins_ties
from .featureio import AlignmentSegment, FeatureMatrix, TokenFrames, extract_tokens
from .itemgen import AbxTask, ConditionSpec, TaskSet, cells_from_tokens, enumerate_tasks

CSV_COLUMNS = ("condition", "speaker_mode", "seq_dissim", "frame_dissim",
               "error_percent", "n_tasks", "n_skipped")

AGGREGATION = ("mean over contexts, then over speaker keys, within each ordered phone pair; "
               "symmetrise the two directions; mean over unordered phone pairs; all unweighted")
TIE_RULE = "d(a,x) == d(b,x) (exact float equality) scores 1/2"


class NoEvaluableTasks(RuntimeError):
    """No task survived the minimum cell-size requirements."""


@dataclass(frozen=True)
class TaskScore:
    phone_a: str
    phone_b: str
    context: tuple[str, str] | None
    speaker_key: tuple[str, ...]
    delta: float
    n_triples: int
    n_ties: int

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta out of range: {self.delta}")
        if self.n_ties > self.n_triples:
            raise ValueError("more ties than triples")


def delta(task: AbxTask, dissim: TokenDissimilarity | Callable[[TokenFrames, TokenFrames], float]) -> TaskScore:
    """Score one task: fraction of triples with d(a,x) < d(b,x), ties counting 1/2.

    ``dissim`` is either a batch engine over global token ids, or a plain
    function of two :class:`TokenFrames` called once per comparison.
    """
    if task.n_triples == 0:
        raise ValueError(f"task {task.key} has no triples")
    if isinstance(dissim, TokenDissimilarity):
        ids_a, ids_b, ids_x = task.cell_A.token_ids, task.cell_B.token_ids, task.cell_X.token_ids
        D_ax = dissim.block(ids_a, ids_x)
        D_bx = dissim.block(ids_b, ids_x)
        if task.sample is None:
            wins, ties = count_wins_ties(D_ax, D_bx, task.x_is_a)
            return _score(task, int(wins), int(ties), task.n_full)
        t = task.triples
        d_ax = D_ax[t[:, 0], t[:, 2]]
        d_bx = D_bx[t[:, 1], t[:, 2]]
    else:
        t = task.triples
        A, B, X = task.cell_A.tokens, task.cell_B.tokens, task.cell_X.tokens
        d_ax = np.empty(t.shape[0])
        d_bx = np.empty(t.shape[0])
        for k, (ia, ib, ix) in enumerate(t.tolist()):
            try:
                d_ax[k] = dissim(A[ia], X[ix])
                d_bx[k] = dissim(B[ib], X[ix])
            except Exception as exc:
                raise RuntimeError(
                    f"dissimilarity failed for a={_ident(A[ia])}, b={_ident(B[ib])}, x={_ident(X[ix])}"
                ) from exc
    if not (np.all(np.isfinite(d_ax)) and np.all(np.isfinite(d_bx))):
        raise FloatingPointError(f"non-finite dissimilarity in task {task.key}")
    wins = int(np.count_nonzero(d_ax < d_bx))
    ties = int(np.count_nonzero(d_ax == d_bx))
    return _score(task, wins, ties, int(d_ax.shape[0]))


def _score(task: AbxTask, wins: int, ties: int, n: int) -> TaskScore:
    return TaskScore(task.cell_A.phone, task.cell_B.phone, task.context, task.speaker_key,
                     (2 * wins + ties) / (2 * n), n, ties)


def uncached_delta(task: AbxTask, engine: TokenDissimilarity) -> TaskScore:
    """Reference route: every comparison computed afresh, one (a, x) and (b, x) pair per triple."""
    a, b, x = task.global_triples()
    d_ax = engine.compute(a, x)
    d_bx = engine.compute(b, x)
    wins = int(np.count_nonzero(d_ax < d_bx))
    ties = int(np.count_nonzero(d_ax == d_bx))
    return _score(task, wins, ties, int(d_ax.shape[0]))


def _ident(tok: TokenFrames) -> str:
    s = tok.segment
    return f"{s.utterance_id}[{s.onset_s},{s.offset_s}):{s.phone}"


def symmetrize(score_ab: TaskScore, score_ba: TaskScore) -> float:
    if (score_ab.phone_a, score_ab.phone_b) != (score_ba.phone_b, score_ba.phone_a):
        raise ValueError(
            f"not mirrored: ({score_ab.phone_a},{score_ab.phone_b}) vs ({score_ba.phone_a},{score_ba.phone_b})"
        )
    if score_ab.context != score_ba.context or score_ab.speaker_key != score_ba.speaker_key:
        raise ValueError("mirrored scores differ in context or speaker key")
    return 0.5 * (score_ab.delta + score_ba.delta)


@dataclass
class ScoreReport:
    condition: str
    speaker_mode: str
    seq_dissim: str
    frame_dissim: str
    error_rate_percent: float
    n_tasks: int
    n_skipped: int
    pair_scores: dict[tuple[str, str], float]
    ordered_scores: dict[tuple[str, str], float]
    speaker_scores: dict[tuple[str, str, tuple[str, ...]], float]
    config: dict = field(default_factory=dict)
    skipped_reasons: dict = field(default_factory=dict)

    @property
    def score(self) -> float:
        return 1.0 - self.error_rate_percent / 100.0

    def csv_row(self) -> dict:
        return {
            "condition": self.condition,
            "speaker_mode": self.speaker_mode,
            "seq_dissim": self.seq_dissim,
            "frame_dissim": self.frame_dissim,
            "error_percent": f"{self.error_rate_percent:.2f}",
            "n_tasks": self.n_tasks,
            "n_skipped": self.n_skipped,
        }

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "speaker_mode": self.speaker_mode,
            "seq_dissim": self.seq_dissim,
            "frame_dissim": self.frame_dissim,
            "error_rate_percent": self.error_rate_percent,
            "n_tasks": self.n_tasks,
            "n_skipped": self.n_skipped,
            "skipped_reasons": dict(sorted(self.skipped_reasons.items())),
            "config": self.config,
            "aggregation": AGGREGATION,
            "tie_rule": TIE_RULE,
            "phone_pairs": [
                {"phone_1": p, "phone_2": q, "score": s} for (p, q), s in sorted(self.pair_scores.items())
            ],
            "ordered_phone_pairs": [
                {"phone_a": p, "phone_b": q, "delta": s} for (p, q), s in sorted(self.ordered_scores.items())
            ],
            "by_speaker": [
                {"phone_a": p, "phone_b": q, "speakers": list(spk), "delta": s}
                for (p, q, spk), s in sorted(self.speaker_scores.items())
            ],
        }


def aggregate(task_scores: Iterable[TaskScore], spec: ConditionSpec, *,
              seq_kind: SeqDissimKind = SeqDissimKind(), frame_kind: FrameDissimKind = FrameDissimKind(),
              n_skipped: int = 0, skipped_reasons: Mapping[str, int] | None = None) -> ScoreReport:
    """Average task deltas up the context > speaker > direction > phone-pair hierarchy."""
    scores = list(task_scores)
    if not scores:
        raise NoEvaluableTasks(f"no evaluable tasks for condition {spec.name}")

    by_context: dict[tuple, list[float]] = {}
    for s in scores:
        by_context.setdefault((s.phone_a, s.phone_b, s.speaker_key), []).append(s.delta)
    speaker_scores = {k: _mean(v) for k, v in by_context.items()}

    by_speaker: dict[tuple[str, str], list[float]] = {}
    for (pa, pb, _), v in sorted(speaker_scores.items()):
        by_speaker.setdefault((pa, pb), []).append(v)
    ordered = {k: _mean(v) for k, v in by_speaker.items()}

    pairs: dict[tuple[str, str], float] = {}
    for (pa, pb) in sorted(ordered):
        key = (min(pa, pb), max(pa, pb))
        if key in pairs:
            continue
        available = [ordered[d] for d in ((key[0], key[1]), (key[1], key[0])) if d in ordered]
        pairs[key] = _mean(available)

    score = _mean(pairs[k] for k in sorted(pairs))
    error = 100.0 * (1.0 - score)
    return ScoreReport(
        condition=f"{spec.context_mode.value}_context",
        speaker_mode=f"{spec.speaker_mode.value}_speaker",
        seq_dissim=seq_kind.kind.value,
        frame_dissim=frame_kind.kind.value,
        error_rate_percent=min(100.0, max(0.0, error)),
        n_tasks=len(scores),
        n_skipped=n_skipped,
        pair_scores=pairs,
        ordered_scores=ordered,
        speaker_scores=speaker_scores,
        config={
            "context_mode": spec.context_mode.value,
            "speaker_mode": spec.speaker_mode.value,
            "max_triples_per_task": spec.max_triples_per_task,
            "rng_seed": spec.rng_seed,
            "frame_dissim": frame_kind.kind.value,
            "epsilon": frame_kind.epsilon,
            "seq_dissim": seq_kind.kind.value,
        },
        skipped_reasons=dict(skipped_reasons or {}),
    )


def _mean(values) -> float:
    vals = list(values)
    # fsum: exact, order-independent reduction
    return math.fsum(vals) / len(vals)


# ---------------------------------------------------------------- pipeline


class Evaluator:
    """Runs ABX conditions over one token list, sharing the dissimilarity cache."""

    def __init__(self, tokens: Sequence[TokenFrames], frame_kind: FrameDissimKind = FrameDissimKind(),
                 seq_kind: SeqDissimKind = SeqDissimKind(), workers: int = 1, cache: bool = True):
        self.tokens = list(tokens)
        self.frame_kind = frame_kind
        self.seq_kind = seq_kind
        self.engine = TokenDissimilarity(self.tokens, frame_kind, seq_kind, workers=workers, cache=cache)

    @classmethod
    def from_alignments(cls, segments: Iterable[AlignmentSegment], features: Mapping[str, FeatureMatrix],
                        **kwargs) -> "Evaluator":
        return cls(extract_tokens(features, segments), **kwargs)

    def tasks(self, spec: ConditionSpec) -> TaskSet:
        return enumerate_tasks(cells_from_tokens(self.tokens, spec), spec)

    def task_scores(self, spec: ConditionSpec) -> tuple[list[TaskScore], TaskSet]:
        taskset = self.tasks(spec)
        score = delta if self.engine.cache_enabled else uncached_delta
        return [score(t, self.engine) for t in taskset.tasks], taskset

    def run(self, spec: ConditionSpec) -> ScoreReport:
        scores, taskset = self.task_scores(spec)
        return aggregate(scores, spec, seq_kind=self.seq_kind, frame_kind=self.frame_kind,
                         n_skipped=taskset.n_skipped, skipped_reasons=taskset.skipped_reasons)


def evaluate(segments: Iterable[AlignmentSegment], features: Mapping[str, FeatureMatrix],
             spec: ConditionSpec, frame_kind: FrameDissimKind = FrameDissimKind(),
             seq_kind: SeqDissimKind = SeqDissimKind(), workers: int = 1, cache: bool = True) -> ScoreReport:
    ev = Evaluator.from_alignments(segments, features, frame_kind=frame_kind, seq_kind=seq_kind,
                                   workers=workers, cache=cache)
    return ev.run(spec)


# ------------------------------------------------------------ serialisation


def reports_to_csv(reports: Sequence[ScoreReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def reports_to_json(reports: Sequence[ScoreReport], system: str = "system", extra: dict | None = None) -> str:
    doc = {"kind": "abx", "system": system, "reports": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"

