"""Slow, independent reference implementations used only by the tests."""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np


def enumerate_paths(n: int, m: int):
    """Every monotone path from (0, 0) to (n-1, m-1) with steps (1,0), (0,1), (1,1)."""
    def walk(i, j, path):
        if i == n - 1 and j == m - 1:
            yield path
            return
        for di, dj in ((1, 1), (0, 1), (1, 0)):
            a, b = i + di, j + dj
            if a < n and b < m:
                yield from walk(a, b, path + [(a, b)])
    yield from walk(0, 0, [(0, 0)])


def dtw_by_enumeration(cost: np.ndarray) -> float:
    """Minimum over all monotone paths of (sum of costs along the path) / (number of points)."""
    n, m = cost.shape
    best = math.inf
    c = cost.tolist()
    for path in enumerate_paths(n, m):
        total = 0.0
        for i, j in path:
            total += c[i][j]
        best = min(best, total / len(path))
    return best


def naive_abx_error(labels, contexts, speakers, D, within_context: bool, within_speaker: bool) -> float:
    """ABX error (percent) by direct enumeration of every admissible (a, b, x) token triple.

    ``D[i, j]`` is d(token i, token j). For each x, every admissible a and b
    is compared (vectorised over the (a, b) grid). A task is identified by
    (phone_a, phone_b, context, speaker key); its score is the mean over its
    triples, then the context > speaker > direction > pair means follow.
    """
    labels = np.asarray(labels, dtype=object)
    speakers = np.asarray(speakers, dtype=object)
    ctx_ids = np.unique(np.array(["|".join(c) for c in contexts], dtype=object), return_inverse=True)[1]
    n = len(labels)
    sums: dict[tuple, float] = defaultdict(float)
    counts: dict[tuple, int] = defaultdict(int)
    idx = np.arange(n)
    for x in range(n):
        same_ctx = ctx_ids == ctx_ids[x] if within_context else np.ones(n, bool)
        ab_speakers = [speakers[x]] if within_speaker else sorted(set(speakers) - {speakers[x]})
        for s_ab in ab_speakers:
            a_mask = (labels == labels[x]) & same_ctx & (speakers == s_ab) & (idx != x)
            if not a_mask.any():
                continue
            d_ax = D[a_mask, x]
            for pb in sorted(set(labels) - {labels[x]}):
                b_mask = (labels == pb) & same_ctx & (speakers == s_ab)
                if not b_mask.any():
                    continue
                d_bx = D[b_mask, x]
                wins = np.count_nonzero(d_ax[:, None] < d_bx[None, :])
                ties = np.count_nonzero(d_ax[:, None] == d_bx[None, :])
                ctx = ctx_ids[x] if within_context else None
                spk = (s_ab,) if within_speaker else (s_ab, speakers[x])
                key = (labels[x], pb, ctx, spk)
                sums[key] += wins + 0.5 * ties
                counts[key] += d_ax.size * d_bx.size
    if not counts:
        raise ValueError("no triples")
    per_ctx = defaultdict(list)
    for key in counts:
        pa, pb, _, spk = key
        per_ctx[(pa, pb, spk)].append(sums[key] / counts[key])
    per_spk = defaultdict(list)
    for (pa, pb, spk), v in per_ctx.items():
        per_spk[(pa, pb)].append(sum(v) / len(v))
    ordered = {k: sum(v) / len(v) for k, v in per_spk.items()}
    pairs = defaultdict(list)
    for (pa, pb), v in ordered.items():
        pairs[tuple(sorted((pa, pb)))].append(v)
    score = np.mean([np.mean(v) for v in pairs.values()])
    return 100.0 * (1.0 - score)


def naive_triple_count(labels, contexts, speakers, within_context: bool, within_speaker: bool) -> int:
    """Number of admissible triples, by the same direct enumeration."""
    n = len(labels)
    total = 0
    for x in range(n):
        for a in range(n):
            if a == x or labels[a] != labels[x]:
                continue
            if within_context and contexts[a] != contexts[x]:
                continue
            if (speakers[a] == speakers[x]) != within_speaker:
                continue
            for b in range(n):
                if labels[b] != labels[a] and speakers[b] == speakers[a] and (
                        not within_context or contexts[b] == contexts[a]):
                    total += 1
    return total


def threshold_sweep_ap(dissim: np.ndarray, same: np.ndarray) -> float:
    """Area under the step PR curve, sweeping every distinct dissimilarity threshold."""
    dissim = np.asarray(dissim, dtype=float)
    same = np.asarray(same, dtype=bool)
    n_pos = same.sum()
    area = 0.0
    prev_recall = 0.0
    for t in np.unique(dissim):
        sel = dissim <= t
        tp = np.sum(same & sel)
        precision = tp / sel.sum()
        recall = tp / n_pos
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return float(area)
