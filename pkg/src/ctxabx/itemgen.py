"""ABX cells and (a, b, x) task enumeration.

A cell groups tokens sharing a category key: ``(phone, prev, next, speaker)``
in the within-context condition, ``(phone, speaker)`` without context. A
task pairs an A cell, a B cell of a different phone, and an X cell of A's
phone, either from the same speaker (X is A itself) or from another one.
"""
from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._rng import keyed_generator
from .featureio import (
    AlignmentError,
    AlignmentSegment,
    FeatureMatrix,
    TokenFrames,
    extract_tokens,
    format_time,
)

ITEM_COLUMNS = ("utterance_id", "onset", "offset", "phone", "prev", "next", "speaker")


class ContextMode(str, enum.Enum):
    WITHIN = "within"
    WITHOUT = "without"


class SpeakerMode(str, enum.Enum):
    WITHIN = "within"
    ACROSS = "across"


@dataclass(frozen=True)
class ConditionSpec:
    context_mode: ContextMode = ContextMode.WITHIN
    speaker_mode: SpeakerMode = SpeakerMode.WITHIN
    max_triples_per_task: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "context_mode", ContextMode(self.context_mode))
        object.__setattr__(self, "speaker_mode", SpeakerMode(self.speaker_mode))
        if self.max_triples_per_task is not None and self.max_triples_per_task < 1:
            raise ValueError("max_triples_per_task must be >= 1 (or None for unlimited)")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @property
    def name(self) -> str:
        return f"{self.context_mode.value}_context/{self.speaker_mode.value}_speaker"


@dataclass
class AbxCell:
    phone: str
    context: tuple[str, str] | None
    speaker: str
    tokens: list[TokenFrames]
    token_ids: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("an ABX cell needs at least one token")
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        if self.token_ids.shape != (len(self.tokens),):
            raise ValueError("token_ids must align with tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def key(self) -> tuple:
        if self.context is None:
            return (self.phone, self.speaker)
        return (self.phone, *self.context, self.speaker)


@dataclass
class AbxTask:
    """One (A, B, X) cell triple and its (a, b, x) index triples.

    Indices are local to each cell. ``sample`` holds sorted flat indices
    into the full triple enumeration when subsampled, else ``None``.
    """

    cell_A: AbxCell
    cell_B: AbxCell
    cell_X: AbxCell
    sample: np.ndarray | None = field(default=None, repr=False)

    @property
    def x_is_a(self) -> bool:
        return self.cell_X is self.cell_A

    @property
    def n_full(self) -> int:
        nA, nB, nX = len(self.cell_A), len(self.cell_B), len(self.cell_X)
        if self.x_is_a:
            return nA * (nA - 1) * nB
        return nA * nB * nX

    @property
    def n_triples(self) -> int:
        return self.n_full if self.sample is None else int(self.sample.shape[0])

    @property
    def context(self) -> tuple[str, str] | None:
        return self.cell_A.context

    @property
    def speaker_key(self) -> tuple[str, ...]:
        if self.x_is_a:
            return (self.cell_A.speaker,)
        return (self.cell_A.speaker, self.cell_X.speaker)

    @property
    def key(self) -> tuple:
        ctx = self.context if self.context is not None else ()
        return (self.cell_A.phone, self.cell_B.phone, *ctx, *self.speaker_key)

    @property
    def triples(self) -> np.ndarray:
        """``(n, 3)`` array of local ``(a, b, x)`` indices."""
        return decode_triples(self._flat(), len(self.cell_A), len(self.cell_B),
                              len(self.cell_X), self.x_is_a)

    def _flat(self) -> np.ndarray:
        if self.sample is not None:
            return self.sample
        return np.arange(self.n_full, dtype=np.int64)

    def global_triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = self.triples
        return (self.cell_A.token_ids[t[:, 0]], self.cell_B.token_ids[t[:, 1]],
                self.cell_X.token_ids[t[:, 2]])


def decode_triples(flat: np.ndarray, nA: int, nB: int, nX: int, x_is_a: bool) -> np.ndarray:
    """Map flat enumeration indices to ``(a, b, x)``; the a-major, x, then b order."""
    flat = np.asarray(flat, dtype=np.int64)
    if x_is_a:
        b = flat % nB
        rest = flat // nB
        xo = rest % (nA - 1)
        a = rest // (nA - 1)
        x = xo + (xo >= a)
    else:
        b = flat % nB
        rest = flat // nB
        x = rest % nX
        a = rest // nX
    return np.stack([a, b, x], axis=1)


@dataclass
class TaskSet:
    tasks: list[AbxTask]
    n_skipped: int = 0
    skipped_reasons: Counter = field(default_factory=Counter)


# ---------------------------------------------------------------- cells


def cell_key(segment: AlignmentSegment, spec: ConditionSpec) -> tuple:
    if spec.context_mode is ContextMode.WITHIN:
        return (segment.phone, segment.prev_phone, segment.next_phone, segment.speaker_id)
    return (segment.phone, segment.speaker_id)


def cells_from_tokens(tokens: Sequence[TokenFrames], spec: ConditionSpec,
                      token_ids: Sequence[int] | None = None) -> list[AbxCell]:
    ids = range(len(tokens)) if token_ids is None else token_ids
    groups: dict[tuple, list[int]] = {}
    for pos, tok in enumerate(tokens):
        groups.setdefault(cell_key(tok.segment, spec), []).append(pos)
    cells = []
    for key in sorted(groups):
        members = groups[key]
        context = (key[1], key[2]) if spec.context_mode is ContextMode.WITHIN else None
        cells.append(
            AbxCell(
                phone=key[0],
                context=context,
                speaker=key[-1],
                tokens=[tokens[p] for p in members],
                token_ids=[ids[p] for p in members],
            )
        )
    return cells


def build_cells(segments: Iterable[AlignmentSegment], features: Mapping[str, FeatureMatrix],
                spec: ConditionSpec) -> list[AbxCell]:
    """Extract every token and partition them into cells by the condition's key."""
    tokens = extract_tokens(features, segments)
    return cells_from_tokens(tokens, spec)


# ---------------------------------------------------------------- tasks


def _maybe_subsample(task: AbxTask, spec: ConditionSpec) -> AbxTask:
    cap = spec.max_triples_per_task
    n = task.n_full
    if cap is None or n <= cap:
        return task
    rng = keyed_generator(spec.rng_seed, "triples", spec.name, *task.key)
    task.sample = np.sort(rng.choice(n, size=cap, replace=False)).astype(np.int64)
    return task


def enumerate_tasks(cells: Sequence[AbxCell], spec: ConditionSpec) -> TaskSet:
    """All (A, B, X) tasks of the condition, in deterministic key order."""
    result = TaskSet([])

    def skip(reason: str):
        result.n_skipped += 1
        result.skipped_reasons[reason] += 1

    # group cells by the part of the key that must be shared by A and B
    def shared(c: AbxCell):
        return (c.context or ("",), c.speaker)

    by_shared: dict[tuple, dict[str, AbxCell]] = {}
    for c in cells:
        by_shared.setdefault(shared(c), {})[c.phone] = c

    if spec.speaker_mode is SpeakerMode.WITHIN:
        for skey in sorted(by_shared):
            phones = by_shared[skey]
            for pa in sorted(phones):
                for pb in sorted(phones):
                    if pa == pb:
                        continue
                    A, B = phones[pa], phones[pb]
                    if len(A) < 2:
                        skip("A cell has fewer than 2 tokens")
                        continue
                    result.tasks.append(_maybe_subsample(AbxTask(A, B, A), spec))
        return result

    by_context: dict[tuple, dict[str, dict[str, AbxCell]]] = {}
    for c in cells:
        by_context.setdefault(c.context or ("",), {}).setdefault(c.speaker, {})[c.phone] = c
    for ctx in sorted(by_context):
        speakers = by_context[ctx]
        for s_ab in sorted(speakers):
            phones = speakers[s_ab]
            for s_x in sorted(speakers):
                if s_x == s_ab:
                    continue
                x_phones = speakers[s_x]
                for pa in sorted(phones):
                    for pb in sorted(phones):
                        if pa == pb:
                            continue
                        X = x_phones.get(pa)
                        if X is None:
                            skip("no X cell for the A phone in the other speaker")
                            continue
                        task = AbxTask(phones[pa], phones[pb], X)
                        result.tasks.append(_maybe_subsample(task, spec))
    return result


def check_task(task: AbxTask, spec: ConditionSpec) -> None:
    """Raise AssertionError if ``task`` or any of its triples breaks the task invariants."""
    A, B, X = task.cell_A, task.cell_B, task.cell_X
    assert A.phone != B.phone
    assert X.phone == A.phone
    if spec.speaker_mode is SpeakerMode.WITHIN:
        assert A.speaker == B.speaker == X.speaker
    else:
        assert A.speaker == B.speaker and X.speaker != A.speaker
    if spec.context_mode is ContextMode.WITHIN:
        assert A.context == B.context == X.context and A.context is not None
    ga, _, gx = task.global_triples()
    assert np.all(ga != gx)


# ------------------------------------------------------------ item files


def write_item_file(cells: Iterable[AbxCell], path) -> None:
    """One row per token, in cell order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("\t".join(ITEM_COLUMNS) + "\n")
        for cell in cells:
            for tok in cell.tokens:
                s = tok.segment
                fh.write(
                    "\t".join((s.utterance_id, format_time(s.onset_s), format_time(s.offset_s),
                               s.phone, s.prev_phone, s.next_phone, s.speaker_id)) + "\n"
                )


def read_item_file(path) -> list[AlignmentSegment]:
    """Token rows of an item file, in file order, with their recorded context."""
    out: list[AlignmentSegment] = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise AlignmentError("empty item file, header row required", 1) from None
        missing = [c for c in ITEM_COLUMNS if c not in header]
        if missing:
            raise AlignmentError(f"missing column(s) {', '.join(missing)} in item header", 1)
        idx = [header.index(c) for c in ITEM_COLUMNS]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise AlignmentError(f"expected {len(header)} fields, got {len(row)}", lineno)
            utt, on, off, phone, prev, nxt, spk = (row[i].strip() for i in idx)
            try:
                onset, offset = float(on), float(off)
            except ValueError:
                raise AlignmentError(f"non-numeric time in {on!r}/{off!r}", lineno) from None
            if not offset > onset:
                raise AlignmentError(f"offset {offset} not after onset {onset}", lineno)
            out.append(AlignmentSegment(utt, spk, phone, onset, offset, prev, nxt))
    return out


def cell_statistics(cells: Sequence[AbxCell]) -> dict:
    sizes = [len(c) for c in cells]
    by_phone = {phone: sum(len(c) for c in group)
                for phone, group in groupby(sorted(cells, key=lambda c: c.phone), key=lambda c: c.phone)}
    return {
        "n_cells": len(cells),
        "n_tokens": int(sum(sizes)),
        "min_cell_size": int(min(sizes)) if sizes else 0,
        "max_cell_size": int(max(sizes)) if sizes else 0,
        "n_singleton_cells": int(sum(1 for s in sizes if s == 1)),
        "tokens_per_phone": by_phone,
    }
