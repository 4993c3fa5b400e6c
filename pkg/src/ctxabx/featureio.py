"""Feature archives, alignment tables and token extraction.

Binary archive layout (little-endian)::

    b"ABXF"  u32 version=1  f64 frame_period_s  u32 n_utterances
    per utterance:
        u32 id_length  id (UTF-8)  u32 n_frames  u32 n_dims
        n_frames * n_dims float32, row-major

A directory of ``<utterance_id>.txt`` matrices (one frame per line) is
accepted as a text fallback.
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"ABXF"
VERSION = 1
DEFAULT_FRAME_PERIOD = 0.01
BOUNDARY = "#"

ALIGNMENT_COLUMNS = ("utterance_id", "speaker_id", "phone", "onset", "offset")
WORD_ALIGNMENT_COLUMNS = ("utterance_id", "speaker_id", "word", "onset", "offset")

# overlap tolerance for times printed with finite precision
_TIME_EPS = 1e-9


class FeatureFormatError(ValueError):
    """Raised for malformed or invalid feature archives and matrices."""


class AlignmentError(ValueError):
    """Raised for malformed or inconsistent alignment tables."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class FeatureMatrix:
    utterance_id: str
    data: np.ndarray
    frame_period_s: float = DEFAULT_FRAME_PERIOD

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise FeatureFormatError(
                f"{self.utterance_id}: expected a non-empty 2-d matrix, got shape {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise FeatureFormatError(f"{self.utterance_id}: non-finite values in features")
        if not self.frame_period_s > 0:
            raise FeatureFormatError(f"{self.utterance_id}: frame period must be positive")
        if data is self.data:
            data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_dims(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames * self.frame_period_s

    def frame_centers(self) -> np.ndarray:
        return (np.arange(self.n_frames) + 0.5) * self.frame_period_s


@dataclass(frozen=True)
class AlignmentSegment:
    """One labelled interval; ``phone`` holds the word label for word tables."""

    utterance_id: str
    speaker_id: str
    phone: str
    onset_s: float
    offset_s: float
    prev_phone: str = BOUNDARY
    next_phone: str = BOUNDARY

    @property
    def label(self) -> str:
        return self.phone

    @property
    def context(self) -> tuple[str, str]:
        return (self.prev_phone, self.next_phone)


@dataclass(frozen=True)
class TokenFrames:
    segment: AlignmentSegment
    frames: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.frames.shape[0]


def format_time(t: float) -> str:
    """Format seconds with at least 3 decimals, losslessly."""
    short = f"{t:.3f}"
    if float(short) == t:
        return short
    return repr(float(t))


# ---------------------------------------------------------------- alignments


def _read_segments(path, label_column: str) -> list[AlignmentSegment]:
    path = Path(path)
    columns = ("utterance_id", "speaker_id", label_column, "onset", "offset")
    rows: list[AlignmentSegment] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise AlignmentError("empty file, header row required", 1) from None
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise AlignmentError(f"missing column(s) {', '.join(missing)} in header", 1)
        idx = [header.index(c) for c in columns]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise AlignmentError(f"expected {len(header)} fields, got {len(row)}", lineno)
            utt, spk, label, on, off = (row[i].strip() for i in idx)
            if not utt or not spk or not label:
                raise AlignmentError("empty utterance, speaker or label field", lineno)
            try:
                onset, offset = float(on), float(off)
            except ValueError:
                raise AlignmentError(f"non-numeric time in {on!r}/{off!r}", lineno) from None
            if not (np.isfinite(onset) and np.isfinite(offset)):
                raise AlignmentError("non-finite time", lineno)
            if not offset > onset:
                raise AlignmentError(f"offset {offset} not after onset {onset}", lineno)
            rows.append(AlignmentSegment(utt, spk, label, onset, offset))
    return link_context(rows)


def link_context(segments: Iterable[AlignmentSegment]) -> list[AlignmentSegment]:
    """Sort by (utterance, onset), validate, and fill in neighbour labels."""
    ordered = sorted(segments, key=lambda s: (s.utterance_id, s.onset_s, s.offset_s))
    out: list[AlignmentSegment] = []
    for utt_segs in _group_by_utterance(ordered):
        for prev, cur in zip(utt_segs, utt_segs[1:]):
            if cur.onset_s < prev.offset_s - _TIME_EPS:
                raise AlignmentError(
                    f"overlapping segments in {cur.utterance_id}: "
                    f"[{prev.onset_s}, {prev.offset_s}) and [{cur.onset_s}, {cur.offset_s})"
                )
            if cur.speaker_id != prev.speaker_id:
                raise AlignmentError(f"utterance {cur.utterance_id} has more than one speaker")
        for i, seg in enumerate(utt_segs):
            prev_label = utt_segs[i - 1].phone if i > 0 else BOUNDARY
            next_label = utt_segs[i + 1].phone if i + 1 < len(utt_segs) else BOUNDARY
            out.append(
                AlignmentSegment(
                    seg.utterance_id, seg.speaker_id, seg.phone, seg.onset_s, seg.offset_s,
                    prev_label, next_label,
                )
            )
    return out


def _group_by_utterance(ordered: list[AlignmentSegment]) -> list[list[AlignmentSegment]]:
    groups: list[list[AlignmentSegment]] = []
    for seg in ordered:
        if groups and groups[-1][0].utterance_id == seg.utterance_id:
            groups[-1].append(seg)
        else:
            groups.append([seg])
    return groups


def group_by_utterance(segments: Iterable[AlignmentSegment]) -> dict[str, list[AlignmentSegment]]:
    groups: dict[str, list[AlignmentSegment]] = {}
    for seg in segments:
        groups.setdefault(seg.utterance_id, []).append(seg)
    return groups


def read_alignments(path) -> list[AlignmentSegment]:
    """Read a phone alignment TSV (header ``utterance_id speaker_id phone onset offset``)."""
    return _read_segments(path, "phone")


def read_word_alignments(path) -> list[AlignmentSegment]:
    """Read a word alignment TSV; the ``word`` column lands in ``segment.phone``."""
    return _read_segments(path, "word")


def write_alignments(segments: Iterable[AlignmentSegment], path, label_column: str = "phone") -> None:
    ordered = sorted(segments, key=lambda s: (s.utterance_id, s.onset_s, s.offset_s))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("\t".join(("utterance_id", "speaker_id", label_column, "onset", "offset")) + "\n")
        for s in ordered:
            fh.write(
                f"{s.utterance_id}\t{s.speaker_id}\t{s.phone}\t"
                f"{format_time(s.onset_s)}\t{format_time(s.offset_s)}\n"
            )


def write_word_alignments(segments: Iterable[AlignmentSegment], path) -> None:
    write_alignments(segments, path, label_column="word")


# ------------------------------------------------------------------ features


def _common_period(features: Mapping[str, FeatureMatrix]) -> float:
    periods = {m.frame_period_s for m in features.values()}
    if len(periods) > 1:
        raise FeatureFormatError(f"archive needs one frame period, got {sorted(periods)}")
    return periods.pop() if periods else DEFAULT_FRAME_PERIOD


def write_features(features: Mapping[str, FeatureMatrix], path, frame_period_s: float | None = None) -> None:
    """Write an ``ABXF`` archive; utterances are stored sorted by id."""
    for uid, mat in features.items():
        if not isinstance(mat, FeatureMatrix):
            raise FeatureFormatError(f"{uid}: expected FeatureMatrix, got {type(mat).__name__}")
        if mat.utterance_id != uid:
            raise FeatureFormatError(f"key {uid!r} does not match matrix id {mat.utterance_id!r}")
        if not np.all(np.isfinite(mat.data)):
            raise FeatureFormatError(f"{uid}: non-finite values in features")
    period = _common_period(features) if frame_period_s is None else float(frame_period_s)
    chunks = [MAGIC, struct.pack("<IdI", VERSION, period, len(features))]
    for uid in sorted(features):
        mat = features[uid]
        encoded = uid.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<II", mat.n_frames, mat.n_dims))
        chunks.append(mat.data.astype("<f4", copy=False).tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_features(path, frame_period_s: float = DEFAULT_FRAME_PERIOD) -> dict[str, FeatureMatrix]:
    """Read an ``ABXF`` archive, or a directory of text matrices.

    ``frame_period_s`` only applies to the text fallback; binary archives
    carry their own period.
    """
    path = Path(path)
    if path.is_dir():
        return _read_text_dir(path, frame_period_s)
    return _read_archive(path.read_bytes(), str(path))


def _read_archive(buf: bytes, name: str) -> dict[str, FeatureMatrix]:
    if buf[:4] != MAGIC:
        raise FeatureFormatError(f"{name}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 20:
        raise FeatureFormatError(f"{name}: truncated header")
    version, period, n_utts = struct.unpack_from("<IdI", buf, 4)
    if version != VERSION:
        raise FeatureFormatError(f"{name}: unsupported archive version {version}")
    pos = 20
    out: dict[str, FeatureMatrix] = {}
    for k in range(n_utts):
        if pos + 4 > len(buf):
            raise FeatureFormatError(f"{name}: truncated before utterance #{k}")
        (id_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if pos + id_len + 8 > len(buf):
            raise FeatureFormatError(f"{name}: truncated header of utterance #{k}")
        uid = buf[pos:pos + id_len].decode("utf-8")
        pos += id_len
        n_frames, n_dims = struct.unpack_from("<II", buf, pos)
        pos += 8
        nbytes = 4 * n_frames * n_dims
        if pos + nbytes > len(buf):
            raise FeatureFormatError(
                f"{name}: payload of utterance {uid!r} truncated "
                f"({len(buf) - pos} of {nbytes} bytes)"
            )
        data = np.frombuffer(buf, dtype="<f4", count=n_frames * n_dims, offset=pos)
        pos += nbytes
        if uid in out:
            raise FeatureFormatError(f"{name}: duplicate utterance {uid!r}")
        try:
            out[uid] = FeatureMatrix(uid, data.reshape(n_frames, n_dims).astype(np.float32), period)
        except FeatureFormatError as exc:
            raise FeatureFormatError(f"{name}: {exc}") from None
    if pos != len(buf):
        raise FeatureFormatError(f"{name}: {len(buf) - pos} trailing bytes after last utterance")
    return out


def _read_text_dir(path: Path, frame_period_s: float) -> dict[str, FeatureMatrix]:
    out: dict[str, FeatureMatrix] = {}
    for fname in sorted(os.listdir(path)):
        if not fname.endswith(".txt"):
            continue
        uid = fname[:-4]
        try:
            data = np.loadtxt(path / fname, dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise FeatureFormatError(f"{uid}: cannot parse text matrix ({exc})") from None
        out[uid] = FeatureMatrix(uid, data, frame_period_s)
    return out


def write_text_features(features: Mapping[str, FeatureMatrix], path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for uid, mat in features.items():
        np.savetxt(path / f"{uid}.txt", mat.data, fmt="%.9g")


# ------------------------------------------------------------ token frames


def frame_span(features: FeatureMatrix, segment: AlignmentSegment) -> tuple[int, int]:
    """Half-open frame index range ``[start, stop)`` assigned to ``segment``."""
    if segment.utterance_id != features.utterance_id:
        raise ValueError(
            f"segment of {segment.utterance_id!r} applied to features of {features.utterance_id!r}"
        )
    T = features.frame_period_s
    n = features.n_frames
    if segment.onset_s >= n * T or segment.offset_s <= 0:
        raise ValueError(
            f"segment [{segment.onset_s}, {segment.offset_s}) of {segment.utterance_id} "
            f"lies outside the feature range [0, {n * T})"
        )
    if segment.offset_s > (n + 1) * T + _TIME_EPS or segment.onset_s < -T - _TIME_EPS:
        raise ValueError(
            f"segment [{segment.onset_s}, {segment.offset_s}) of {segment.utterance_id} "
            f"exceeds the feature range [0, {n * T}) by more than one frame"
        )
    centers = features.frame_centers()
    start = int(np.searchsorted(centers, segment.onset_s, side="left"))
    stop = int(np.searchsorted(centers, segment.offset_s, side="left"))
    if stop > start:
        return start, stop
    mid = 0.5 * (segment.onset_s + segment.offset_s)
    nearest = int(np.argmin(np.abs(centers - mid)))
    return nearest, nearest + 1


def extract_token(features: FeatureMatrix, segment: AlignmentSegment) -> TokenFrames:
    """Frames whose centre lies in ``[onset, offset)``; nearest-to-midpoint frame if none."""
    start, stop = frame_span(features, segment)
    return TokenFrames(segment, features.data[start:stop])


def extract_tokens(features: Mapping[str, FeatureMatrix], segments: Iterable[AlignmentSegment]) -> list[TokenFrames]:
    out = []
    for seg in segments:
        try:
            mat = features[seg.utterance_id]
        except KeyError:
            raise KeyError(f"no features for utterance {seg.utterance_id!r}") from None
        out.append(extract_token(mat, seg))
    return out
