"""Synthetic corpora with tunable coarticulation, speaker offsets and noise.

A frame of phone ``q`` between neighbours ``l`` and ``r`` is::

    (1 - gamma) * proto[q] + gamma / 2 * (proto[l] + proto[r]) + offset[speaker] + noise

Utterance edges use a dedicated boundary prototype for the missing neighbour.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from ._rng import keyed_generator
from .featureio import BOUNDARY, DEFAULT_FRAME_PERIOD, AlignmentSegment, FeatureMatrix, link_context


@dataclass(frozen=True)
class SynthSpec:
    n_phones: int = 5
    n_speakers: int = 4
    n_utterances: int = 10          # per speaker
    phones_per_utterance: int = 12
    dim: int = 16
    context_coloring: float = 0.0   # gamma
    speaker_strength: float = 0.0   # s
    noise: float = 0.0              # sigma
    frames_per_phone: tuple[int, int] = (4, 10)
    rng_seed: int = 0
    word_length: int = 2
    lexicon_size: int = 0           # 0: words are free groupings of the phone stream
    shared_prototype: bool = False  # every phone gets the same prototype (chance corpus)
    frame_period_s: float = DEFAULT_FRAME_PERIOD

    def __post_init__(self):
        for name in ("n_phones", "n_speakers", "n_utterances", "phones_per_utterance", "word_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if not 0.0 <= self.context_coloring <= 1.0:
            raise ValueError("context_coloring must lie in [0, 1]")
        if self.speaker_strength < 0 or self.noise < 0:
            raise ValueError("speaker_strength and noise must be non-negative")
        lo, hi = self.frames_per_phone
        if not 1 <= lo <= hi:
            raise ValueError("frames_per_phone must be a range 1 <= lo <= hi")
        if self.lexicon_size < 0:
            raise ValueError("lexicon_size must be non-negative")

    @property
    def phones(self) -> list[str]:
        width = len(str(self.n_phones - 1))
        return [f"p{i:0{width}d}" for i in range(self.n_phones)]

    @property
    def speakers(self) -> list[str]:
        width = max(2, len(str(self.n_speakers - 1)))
        return [f"s{i:0{width}d}" for i in range(self.n_speakers)]


@dataclass
class SynthCorpus:
    features: dict[str, FeatureMatrix]
    phones: list[AlignmentSegment]
    words: list[AlignmentSegment]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def make_lexicon(spec: SynthSpec) -> list[tuple[str, ...]]:
    """Distinct phone sequences, preferring distinct phone multisets (mean pooling ignores order)."""
    rng = keyed_generator(spec.rng_seed, "lexicon")
    phones = spec.phones
    n_possible = spec.n_phones ** spec.word_length
    if spec.lexicon_size > n_possible:
        raise ValueError(f"lexicon_size {spec.lexicon_size} exceeds {n_possible} possible words")
    seen_bags: set[tuple[str, ...]] = set()
    words: list[tuple[str, ...]] = []
    candidates = [tuple(w) for w in product(phones, repeat=spec.word_length)]
    for k in rng.permutation(len(candidates)):
        w = candidates[k]
        bag = tuple(sorted(w))
        if bag in seen_bags:
            continue
        seen_bags.add(bag)
        words.append(w)
        if len(words) == spec.lexicon_size:
            return words
    for k in rng.permutation(len(candidates)):
        if candidates[k] not in words:
            words.append(candidates[k])
            if len(words) == spec.lexicon_size:
                break
    return words


def generate(spec: SynthSpec) -> SynthCorpus:
    """Build features plus phone and word alignments; deterministic given ``spec``."""
    T = spec.frame_period_s
    proto_rng = keyed_generator(spec.rng_seed, "prototypes")
    if spec.shared_prototype:
        base = _unit(proto_rng.normal(size=spec.dim))
        protos = {p: base for p in spec.phones}
    else:
        protos = {p: v for p, v in zip(spec.phones, _unit(proto_rng.normal(size=(spec.n_phones, spec.dim))))}
    protos[BOUNDARY] = _unit(keyed_generator(spec.rng_seed, "boundary").normal(size=spec.dim))
    spk_rng = keyed_generator(spec.rng_seed, "speakers")
    offsets = {
        s: spec.speaker_strength * _unit(spk_rng.normal(size=spec.dim))
        for s in spec.speakers
    }
    lexicon = make_lexicon(spec) if spec.lexicon_size else None

    features: dict[str, FeatureMatrix] = {}
    phone_segs: list[AlignmentSegment] = []
    word_segs: list[AlignmentSegment] = []
    lo, hi = spec.frames_per_phone
    g = spec.context_coloring
    for spk in spec.speakers:
        for u in range(spec.n_utterances):
            uid = f"{spk}_u{u:03d}"
            rng = keyed_generator(spec.rng_seed, "utterance", uid)
            if lexicon is None:
                seq = [spec.phones[k] for k in rng.integers(0, spec.n_phones, spec.phones_per_utterance)]
                words = [tuple(seq[i:i + spec.word_length]) for i in range(0, len(seq), spec.word_length)]
            else:
                n_words = max(1, spec.phones_per_utterance // spec.word_length)
                words = [lexicon[k] for k in rng.integers(0, len(lexicon), n_words)]
                seq = [p for w in words for p in w]
            durations = rng.integers(lo, hi + 1, len(seq))
            frames = []
            start = 0
            bounds = []
            for i, (q, dur) in enumerate(zip(seq, durations)):
                left = seq[i - 1] if i > 0 else BOUNDARY
                right = seq[i + 1] if i + 1 < len(seq) else BOUNDARY
                mean = (1.0 - g) * protos[q] + 0.5 * g * (protos[left] + protos[right]) + offsets[spk]
                frames.append(np.broadcast_to(mean, (int(dur), spec.dim)))
                bounds.append((start, start + int(dur)))
                start += int(dur)
            data = np.concatenate(frames, axis=0)
            if spec.noise > 0:
                data = data + spec.noise * rng.normal(size=data.shape)
            features[uid] = FeatureMatrix(uid, data, T)
            for q, (a, b) in zip(seq, bounds):
                phone_segs.append(AlignmentSegment(uid, spk, q, round(a * T, 9), round(b * T, 9)))
            k = 0
            for w in words:
                a = bounds[k][0]
                b = bounds[k + len(w) - 1][1]
                word_segs.append(AlignmentSegment(uid, spk, "-".join(w), round(a * T, 9), round(b * T, 9)))
                k += len(w)
    return SynthCorpus(features, link_context(phone_segs), link_context(word_segs))
