"""Frame and sequence dissimilarities.

Frame level: angular distance (arccos of cosine similarity, divided by pi)
and KL divergence on epsilon-floored distributions. Sequence level: DTW
with the path-averaged cost minimised exactly, or a Hamming-weighted pool
followed by a single frame comparison.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .featureio import TokenFrames

ANGULAR = 0
KL = 1


class FrameKind(str, enum.Enum):
    ANGULAR = "angular"
    KL = "kl"


class SeqKind(str, enum.Enum):
    DTW = "dtw"
    HAMMING = "hamming"


@dataclass(frozen=True)
class FrameDissimKind:
    kind: FrameKind = FrameKind.ANGULAR
    epsilon: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "kind", FrameKind(self.kind))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def code(self) -> int:
        return ANGULAR if self.kind is FrameKind.ANGULAR else KL


@dataclass(frozen=True)
class SeqDissimKind:
    kind: SeqKind = SeqKind.DTW

    def __post_init__(self):
        object.__setattr__(self, "kind", SeqKind(self.kind))


def _as_frames(seq) -> np.ndarray:
    arr = seq.frames if isinstance(seq, TokenFrames) else seq
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"expected a non-empty frame sequence, got shape {arr.shape}")
    return arr


def _check_dims(u: np.ndarray, v: np.ndarray) -> None:
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")


# ------------------------------------------------------------ preprocessing
#
# Frames are turned once into a kernel-ready representation:
#   angular: rows scaled to unit norm, aux[:, 0] = 1 for non-zero rows
#   kl:      rows floored at epsilon and renormalised, aux = log(rows)


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    out = np.zeros_like(x)
    nz = norms > 0
    out[nz] = x[nz] / norms[nz, None]
    return out, nz.astype(np.float64)[:, None]


def _simplex_rows(x: np.ndarray, epsilon: float) -> np.ndarray:
    if np.any(x < -epsilon):
        raise ValueError("KL divergence needs non-negative frames (entries below -epsilon found)")
    floored = np.maximum(x, epsilon)
    return floored / floored.sum(axis=1, keepdims=True)


def prepare_frames(x: np.ndarray, kind: FrameDissimKind) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(rows, aux)`` ready for the compiled kernels."""
    x = np.asarray(x, dtype=np.float64)
    if kind.code == ANGULAR:
        rows, nonzero = _unit_rows(x)
        return np.ascontiguousarray(rows), np.ascontiguousarray(nonzero)
    p = np.ascontiguousarray(_simplex_rows(x, kind.epsilon))
    return p, np.ascontiguousarray(np.log(p))


# ------------------------------------------------------------- frame level


def angular_dissim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    _check_dims(u, v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0 if nu == nv else 1.0
    cos = np.clip(np.dot(u / nu, v / nv), -1.0, 1.0)
    return float(np.arccos(cos) / np.pi)


def kl_dissim(u, v, epsilon: float = 1e-10) -> float:
    """KL(u' || v') with u', v' the floored, renormalised inputs."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    _check_dims(u, v)
    p = _simplex_rows(u[None, :], epsilon)[0]
    q = _simplex_rows(v[None, :], epsilon)[0]
    return float(np.sum(p * (np.log(p) - np.log(q))))


def frame_dissim(u, v, kind: FrameDissimKind = FrameDissimKind()) -> float:
    if kind.code == ANGULAR:
        return angular_dissim(u, v)
    return kl_dissim(u, v, kind.epsilon)


def frame_cost_matrix(seq_a, seq_x, kind: FrameDissimKind = FrameDissimKind()) -> np.ndarray:
    a, x = _as_frames(seq_a), _as_frames(seq_x)
    if a.shape[1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {x.shape[1]}")
    pa, la = prepare_frames(a, kind)
    px, lx = prepare_frames(x, kind)
    out = np.empty((a.shape[0], x.shape[0]))
    _cost_matrix(pa, la, px, lx, kind.code, out)
    return out


# ------------------------------------------------------- compiled kernels


@numba.njit(nogil=True, cache=True)
def _frame_cost(a, la, i, x, lx, j, kind):
    d = a.shape[1]
    if kind == ANGULAR:
        za = la[i, 0] == 0.0
        zx = lx[j, 0] == 0.0
        if za or zx:
            return 0.0 if za and zx else 1.0
        dot = 0.0
        for k in range(d):
            dot += a[i, k] * x[j, k]
        if dot > 1.0:
            dot = 1.0
        elif dot < -1.0:
            dot = -1.0
        return np.arccos(dot) / np.pi
    total = 0.0
    for k in range(d):
        total += a[i, k] * (la[i, k] - lx[j, k])
    return total


@numba.njit(nogil=True, cache=True)
def _cost_matrix(a, la, x, lx, kind, out):
    for i in range(a.shape[0]):
        for j in range(x.shape[0]):
            out[i, j] = _frame_cost(a, la, i, x, lx, j, kind)


@numba.njit(nogil=True, cache=True)
def _dtw_normalized(cost, acc):
    """Minimum over monotone paths of (sum of costs on path) / (points on path).

    ``acc[i, j, l]`` is the least summed cost of an ``l``-point path from
    (0, 0) to (i, j); only ``max(i, j) + 1 <= l <= i + j + 1`` is reachable.
    ``acc`` is scratch of shape >= (m, n, m + n).
    """
    m, n = cost.shape
    inf = np.inf
    acc[0, 0, 1] = cost[0, 0]
    for i in range(m):
        for j in range(n):
            if i == 0 and j == 0:
                continue
            c = cost[i, j]
            lo = max(i, j) + 1
            hi = i + j + 1
            for l in range(lo, hi + 1):
                lp = l - 1
                best = inf
                if i > 0 and j > 0 and max(i, j) <= lp <= i + j - 1:
                    v = acc[i - 1, j - 1, lp]
                    if v < best:
                        best = v
                if i > 0 and max(i - 1, j) + 1 <= lp:
                    v = acc[i - 1, j, lp]
                    if v < best:
                        best = v
                if j > 0 and max(i, j - 1) + 1 <= lp:
                    v = acc[i, j - 1, lp]
                    if v < best:
                        best = v
                acc[i, j, l] = best + c
    result = inf
    for l in range(max(m, n), m + n):
        r = acc[m - 1, n - 1, l] / l
        if r < result:
            result = r
    return result


@numba.njit(nogil=True, cache=True)
def count_wins_ties(d_ax, d_bx, exclude_diagonal):
    """Over all (a, b, x): #[d_ax[a,x] < d_bx[b,x]] and #[d_ax[a,x] == d_bx[b,x]].

    ``exclude_diagonal`` skips a == x (A and X are the same cell).
    """
    n_a, n_x = d_ax.shape
    n_b = d_bx.shape[0]
    col = np.empty(n_b)
    wins = 0
    ties = 0
    for x in range(n_x):
        for b in range(n_b):
            col[b] = d_bx[b, x]
        col.sort()
        for a in range(n_a):
            if exclude_diagonal and a == x:
                continue
            v = d_ax[a, x]
            left = np.searchsorted(col, v, side="left")
            right = np.searchsorted(col, v, side="right")
            wins += n_b - right
            ties += right - left
    return wins, ties


@numba.njit(nogil=True, cache=True)
def _dtw_pairs(rows, aux, offsets, lengths, left, right, kind, max_len, out, start, stop):
    cost = np.empty((max_len, max_len))
    acc = np.empty((max_len, max_len, 2 * max_len))
    for p in range(start, stop):
        ti = left[p]
        tj = right[p]
        oi = offsets[ti]
        oj = offsets[tj]
        m = lengths[ti]
        n = lengths[tj]
        c = cost[:m, :n]
        for i in range(m):
            for j in range(n):
                c[i, j] = _frame_cost(rows, aux, oi + i, rows, aux, oj + j, kind)
        out[p] = _dtw_normalized(c, acc)


# ------------------------------------------------------------ sequence level


def dtw_from_cost(cost: np.ndarray) -> float:
    """Exact path-averaged DTW given a precomputed frame cost matrix."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or 0 in cost.shape:
        raise ValueError("empty sequence")
    m, n = cost.shape
    return float(_dtw_normalized(cost, np.empty((m, n, m + n))))


def dtw_dissim(seq_a, seq_x, frame_kind: FrameDissimKind = FrameDissimKind()) -> float:
    """DTW dissimilarity d(a, x): minimum over monotone alignment paths of the mean frame cost.

    Steps are (1, 0), (0, 1) and (1, 1) from the first frame pair to the
    last. The average is minimised directly (not the raw sum), by tracking
    the best summed cost for every possible path length.
    """
    return dtw_from_cost(frame_cost_matrix(seq_a, seq_x, frame_kind))


def hamming_weights(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("empty sequence")
    w = np.hamming(n)
    return w / w.sum()


def hamming_pool(seq, frame_kind: FrameDissimKind | None = None) -> np.ndarray:
    """Hamming-weighted mean of the frames; projected to the simplex for KL."""
    frames = _as_frames(seq)
    pooled = hamming_weights(frames.shape[0]) @ frames
    if frame_kind is not None and frame_kind.code == KL:
        pooled = _simplex_rows(pooled[None, :], frame_kind.epsilon)[0]
    return pooled


def pooled_dissim(seq_a, seq_x, frame_kind: FrameDissimKind = FrameDissimKind()) -> float:
    pa = hamming_pool(seq_a, frame_kind)
    px = hamming_pool(seq_x, frame_kind)
    return float(frame_cost_matrix(pa[None, :], px[None, :], frame_kind)[0, 0])


def seq_dissim(seq_a, seq_x, frame_kind: FrameDissimKind = FrameDissimKind(),
               seq_kind: SeqDissimKind = SeqDissimKind()) -> float:
    if seq_kind.kind is SeqKind.DTW:
        return dtw_dissim(seq_a, seq_x, frame_kind)
    return pooled_dissim(seq_a, seq_x, frame_kind)


# -------------------------------------------------------------- batch engine


class TokenDissimilarity:
    """Batch token-pair dissimilarities over a fixed token list.

    ``block(rows, cols)`` returns the matrix ``d(rows[r], cols[c])`` and, when
    ``cache`` is on, memoises it under the exact token-id lists, so every
    token pair of a cell pair is computed once per run. Missing values are
    computed in chunks by ``workers`` threads running the compiled kernels;
    pairs are independent, so results do not depend on the worker count.
    """

    chunk_size = 2048

    def __init__(self, tokens: Sequence[TokenFrames | np.ndarray],
                 frame_kind: FrameDissimKind = FrameDissimKind(),
                 seq_kind: SeqDissimKind = SeqDissimKind(),
                 workers: int = 1, cache: bool = True):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.frame_kind = frame_kind
        self.seq_kind = seq_kind
        self.workers = workers
        self.n_tokens = len(tokens)
        self.cache_enabled = cache
        self._blocks: dict[tuple[bytes, bytes], np.ndarray] = {}
        self.n_computed = 0

        seqs = [_as_frames(t) for t in tokens]
        if seq_kind.kind is SeqKind.HAMMING:
            seqs = [hamming_pool(s, frame_kind)[None, :] for s in seqs]
        dims = {s.shape[1] for s in seqs}
        if len(dims) > 1:
            raise ValueError(f"tokens have mixed dimensions {sorted(dims)}")
        lengths = np.array([s.shape[0] for s in seqs], dtype=np.int64)
        self._offsets = np.zeros(len(seqs), dtype=np.int64)
        if len(seqs):
            np.cumsum(lengths[:-1], out=self._offsets[1:])
            stacked = np.concatenate(seqs, axis=0)
        else:
            stacked = np.zeros((0, 1))
        self._rows, self._aux = prepare_frames(stacked, frame_kind)
        self._lengths = lengths
        self._max_len = int(lengths.max()) if len(seqs) else 1

    def compute(self, left, right) -> np.ndarray:
        """d(token_left[k], token_right[k]) for every k, bypassing the cache."""
        left = np.ascontiguousarray(left, dtype=np.int64).ravel()
        right = np.ascontiguousarray(right, dtype=np.int64).ravel()
        if left.shape != right.shape:
            raise ValueError("left and right index arrays differ in length")
        n = left.shape[0]
        out = np.empty(n)
        self.n_computed += n
        bounds = [(s, min(s + self.chunk_size, n)) for s in range(0, n, self.chunk_size)]

        def run(span):
            _dtw_pairs(self._rows, self._aux, self._offsets, self._lengths, left, right,
                       self.frame_kind.code, self._max_len, out, span[0], span[1])

        if self.workers == 1 or len(bounds) <= 1:
            for span in bounds:
                run(span)
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                list(pool.map(run, bounds))
        return out

    def block(self, rows, cols) -> np.ndarray:
        """Matrix of d(token rows[r], token cols[c])."""
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        cols = np.ascontiguousarray(cols, dtype=np.int64)
        key = (rows.tobytes(), cols.tobytes())
        if self.cache_enabled:
            hit = self._blocks.get(key)
            if hit is not None:
                return hit
            # angular costs are symmetric, and so is every sequence dissimilarity built on them
            if self.frame_kind.kind is FrameKind.ANGULAR:
                hit = self._blocks.get((key[1], key[0]))
                if hit is not None:
                    return hit.T
        r, c = np.meshgrid(rows, cols, indexing="ij")
        mat = self.compute(r, c).reshape(rows.shape[0], cols.shape[0])
        if self.cache_enabled:
            mat.flags.writeable = False
            self._blocks[key] = mat
        return mat

    def clear(self) -> None:
        self._blocks.clear()
