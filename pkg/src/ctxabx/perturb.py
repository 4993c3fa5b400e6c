"""Gold one-hot encoding, random boundary shifting and square-filter smoothing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._rng import keyed_generator
from .featureio import (
    DEFAULT_FRAME_PERIOD,
    AlignmentSegment,
    FeatureMatrix,
    group_by_utterance,
    link_context,
)


class PhoneInventory:
    """Sorted, de-duplicated phone labels with index lookup."""

    def __init__(self, labels: Iterable[str]):
        self.labels: tuple[str, ...] = tuple(sorted(set(labels)))
        self._index = {p: i for i, p in enumerate(self.labels)}

    @classmethod
    def from_segments(cls, segments: Iterable[AlignmentSegment]) -> "PhoneInventory":
        return cls(s.phone for s in segments)

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"phone {label!r} not in inventory") from None


@dataclass(frozen=True)
class PerturbSpec:
    shift_frames: int = 0
    shift_prob: float = 0.5
    filter_width: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.shift_frames < 0:
            raise ValueError("shift_frames must be non-negative")
        if not 0.0 <= self.shift_prob <= 1.0:
            raise ValueError("shift_prob must lie in [0, 1]")
        if self.filter_width < 1 or self.filter_width % 2 == 0:
            raise ValueError("filter_width must be an odd positive integer")


def one_hot_encode(segments: Sequence[AlignmentSegment], inventory: PhoneInventory,
                   frame_period_s: float = DEFAULT_FRAME_PERIOD, n_frames: int | None = None,
                   utterance_id: str | None = None) -> FeatureMatrix:
    """Frame i is hot at the phone whose segment contains its centre; all-zero in gaps."""
    if not segments and (n_frames is None or utterance_id is None):
        raise ValueError("cannot infer utterance id and length from no segments")
    uid = utterance_id if utterance_id is not None else segments[0].utterance_id
    if any(s.utterance_id != uid for s in segments):
        raise ValueError("segments from more than one utterance")
    if n_frames is None:
        n_frames = int(np.ceil(max(s.offset_s for s in segments) / frame_period_s - 1e-9))
    centers = (np.arange(n_frames) + 0.5) * frame_period_s
    data = np.zeros((n_frames, len(inventory)), dtype=np.float32)
    for s in segments:
        k = inventory.index(s.phone)
        lo = int(np.searchsorted(centers, s.onset_s, side="left"))
        hi = int(np.searchsorted(centers, s.offset_s, side="left"))
        data[lo:hi] = 0.0
        data[lo:hi, k] = 1.0
    return FeatureMatrix(uid, data, frame_period_s)


def one_hot_corpus(segments: Iterable[AlignmentSegment], inventory: PhoneInventory | None = None,
                   frame_period_s: float = DEFAULT_FRAME_PERIOD,
                   n_frames: Mapping[str, int] | None = None) -> dict[str, FeatureMatrix]:
    segments = list(segments)
    inventory = inventory or PhoneInventory.from_segments(segments)
    out = {}
    for uid, segs in sorted(group_by_utterance(segments).items()):
        nf = None if n_frames is None else n_frames.get(uid)
        out[uid] = one_hot_encode(segs, inventory, frame_period_s, nf, uid)
    return out


def shift_boundaries(segments: Sequence[AlignmentSegment], spec: PerturbSpec,
                     frame_period_s: float = DEFAULT_FRAME_PERIOD) -> list[AlignmentSegment]:
    """Move each internal boundary right by ``shift_frames`` frames with probability ``shift_prob``.

    Boundary ``j`` is the offset of segment ``j`` (and the onset of segment
    ``j + 1`` when they touch). Draws come from a generator keyed by
    ``(rng_seed, utterance_id)`` and indexed by ``j``. Shifts are clamped so
    every segment keeps at least one frame period; the utterance start and
    end never move.
    """
    segs = sorted(segments, key=lambda s: s.onset_s)
    if len(segs) < 2 or spec.shift_frames == 0 or spec.shift_prob == 0.0:
        return list(segs)
    uid = segs[0].utterance_id
    n_bounds = len(segs) - 1
    draws = keyed_generator(spec.rng_seed, "shift", uid).random(n_bounds)
    shifted = draws < spec.shift_prob
    delta = spec.shift_frames * frame_period_s

    offsets = [s.offset_s for s in segs]
    onsets = [s.onset_s for s in segs]
    # right to left, so each boundary is clamped against its final right neighbour
    for j in range(n_bounds - 1, -1, -1):
        if not shifted[j]:
            continue
        touching = abs(onsets[j + 1] - offsets[j]) < 1e-9
        limit = offsets[j + 1] - frame_period_s
        new = round(min(offsets[j] + delta, limit), 9)
        new = max(new, offsets[j])
        if touching:
            onsets[j + 1] = new
        elif new > onsets[j + 1]:
            onsets[j + 1] = new
        offsets[j] = new
    out = [
        AlignmentSegment(s.utterance_id, s.speaker_id, s.phone, onsets[k], offsets[k],
                         s.prev_phone, s.next_phone)
        for k, s in enumerate(segs)
    ]
    return out


def shift_corpus(segments: Iterable[AlignmentSegment], spec: PerturbSpec,
                 frame_period_s: float = DEFAULT_FRAME_PERIOD) -> list[AlignmentSegment]:
    out: list[AlignmentSegment] = []
    for _, segs in sorted(group_by_utterance(segments).items()):
        out.extend(shift_boundaries(segs, spec, frame_period_s))
    return link_context(out)


def square_filter(features: FeatureMatrix, width: int) -> FeatureMatrix:
    """Replace each frame by the mean of the ``width`` frames centred on it, truncated at the edges."""
    if width < 1 or width % 2 == 0:
        raise ValueError("filter width must be an odd positive integer")
    if width == 1:
        return FeatureMatrix(features.utterance_id, features.data.copy(), features.frame_period_s)
    x = features.data.astype(np.float64)
    n = x.shape[0]
    half = (width - 1) // 2
    total = np.zeros_like(x)
    count = np.zeros((n, 1))
    for off in range(-half, half + 1):
        lo, hi = max(0, -off), min(n, n - off)
        if hi <= lo:
            continue
        total[lo:hi] += x[lo + off:hi + off]
        count[lo:hi] += 1
    return FeatureMatrix(features.utterance_id, (total / count).astype(np.float32), features.frame_period_s)


def filter_corpus(features: Mapping[str, FeatureMatrix], width: int) -> dict[str, FeatureMatrix]:
    return {uid: square_filter(m, width) for uid, m in features.items()}
