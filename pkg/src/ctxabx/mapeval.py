"""Mean average precision of mean-pooled spoken word embeddings."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dissim import FrameDissimKind, frame_cost_matrix
from .featureio import AlignmentSegment, FeatureMatrix, TokenFrames, extract_token, read_word_alignments

__all__ = [
    "WordToken",
    "MapResult",
    "mean_pool",
    "word_tokens",
    "pair_dissimilarities",
    "ranked_average_precision",
    "map_score",
    "read_word_alignments",
]

TIE_RULE = "pessimistic: different-type pairs rank before same-type pairs at equal dissimilarity"


@dataclass(frozen=True)
class WordToken:
    word_type: str
    embedding: np.ndarray = field(repr=False)
    utterance_id: str = ""
    onset_s: float = 0.0
    offset_s: float = 0.0
    speaker_id: str = ""


@dataclass(frozen=True)
class MapResult:
    map_percent: float
    n_tokens: int
    n_pairs: int
    n_same_pairs: int
    frame_dissim: str

    def to_dict(self) -> dict:
        return {
            "metric": "MAP",
            "map_percent": self.map_percent,
            "n_tokens": self.n_tokens,
            "n_pairs": self.n_pairs,
            "n_same_pairs": self.n_same_pairs,
            "frame_dissim": self.frame_dissim,
            "tie_rule": TIE_RULE,
        }


def mean_pool(seq: TokenFrames | np.ndarray) -> np.ndarray:
    frames = seq.frames if isinstance(seq, TokenFrames) else np.asarray(seq)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("mean pooling needs a non-empty frame sequence")
    return frames.mean(axis=0)


def word_tokens(segments: Iterable[AlignmentSegment], features: Mapping[str, FeatureMatrix]) -> list[WordToken]:
    out = []
    for seg in segments:
        tok = extract_token(features[seg.utterance_id], seg)
        out.append(WordToken(seg.phone, mean_pool(tok), seg.utterance_id, seg.onset_s,
                             seg.offset_s, seg.speaker_id))
    return out


def pair_dissimilarities(embeddings: np.ndarray, frame_kind: FrameDissimKind = FrameDissimKind()):
    """Dissimilarity d(e_i, e_j) and index arrays for all pairs i < j."""
    emb = np.asarray(embeddings, dtype=np.float64)
    full = frame_cost_matrix(emb, emb, frame_kind)
    i, j = np.triu_indices(emb.shape[0], k=1)
    return full[i, j], i, j


def ranked_average_precision(dissim: np.ndarray, same: np.ndarray) -> float:
    """Global ranked AP in [0, 1]: pairs sorted ascending, precision averaged at each positive."""
    dissim = np.asarray(dissim, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    n_pos = int(same.sum())
    if n_pos == 0:
        raise ValueError("no same-type pair: average precision undefined")
    # primary key dissim, secondary: negatives (False) first
    order = np.lexsort((same, dissim))
    hits = same[order]
    ranks = np.nonzero(hits)[0] + 1
    precision = np.arange(1, n_pos + 1) / ranks
    return float(precision.mean())


def map_score(tokens: Sequence[WordToken], frame_kind: FrameDissimKind = FrameDissimKind()) -> float:
    """MAP (percent) for same/different word type classification over all token pairs."""
    return map_result(tokens, frame_kind).map_percent


def map_result(tokens: Sequence[WordToken], frame_kind: FrameDissimKind = FrameDissimKind()) -> MapResult:
    if len(tokens) < 2:
        raise ValueError("MAP needs at least two word tokens")
    dims = {t.embedding.shape for t in tokens}
    if len(dims) != 1:
        raise ValueError(f"word embeddings have mixed shapes {sorted(dims)}")
    emb = np.stack([t.embedding for t in tokens])
    labels = np.array([t.word_type for t in tokens], dtype=object)
    d, i, j = pair_dissimilarities(emb, frame_kind)
    same = labels[i] == labels[j]
    if not same.any():
        raise ValueError("no same-type word pair in the corpus: MAP undefined")
    ap = ranked_average_precision(d, same)
    return MapResult(100.0 * ap, len(tokens), int(d.shape[0]), int(same.sum()), frame_kind.kind.value)


def result_to_json(result: MapResult, system: str = "system") -> str:
    doc = {"kind": "map", "system": system, **result.to_dict()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
