from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxabx.abxscore import evaluate
from ctxabx.dissim import SeqDissimKind
from ctxabx.featureio import AlignmentSegment, FeatureMatrix, link_context
from ctxabx.itemgen import ConditionSpec
from ctxabx.perturb import (
    PerturbSpec,
    PhoneInventory,
    filter_corpus,
    one_hot_corpus,
    one_hot_encode,
    shift_boundaries,
    shift_corpus,
    square_filter,
)
from ctxabx.synthgen import SynthSpec, generate

T = 0.01


def _segs(frame_bounds, phones=None, uid="u"):
    phones = phones or [f"p{i}" for i in range(len(frame_bounds) - 1)]
    return [AlignmentSegment(uid, "s", q, round(a * T, 9), round(b * T, 9))
            for q, a, b in zip(phones, frame_bounds, frame_bounds[1:])]


def _bounds(segs):
    return [round(segs[0].onset_s / T)] + [round(s.offset_s / T) for s in segs]


def test_inventory_sorted_and_lookup():
    inv = PhoneInventory(["b", "a", "b"])
    assert inv.labels == ("a", "b") and inv.index("b") == 1 and len(inv) == 2
    with pytest.raises(KeyError, match="zz"):
        inv.index("zz")


def test_perturb_spec_validation():
    with pytest.raises(ValueError):
        PerturbSpec(filter_width=2)
    with pytest.raises(ValueError):
        PerturbSpec(shift_frames=-1)
    with pytest.raises(ValueError):
        PerturbSpec(shift_prob=1.5)


# ------------------------------------------------------------------ one-hot


def test_one_hot_single_phone():
    m = one_hot_encode(_segs([0, 6], ["a"]), PhoneInventory(["a", "b"]), T)
    np.testing.assert_array_equal(m.data, np.tile([1, 0], (6, 1)))


def test_one_hot_two_phones():
    m = one_hot_encode(_segs([0, 5, 10], ["p1", "p2"]), PhoneInventory(["p1", "p2"]), T)
    assert m.n_frames == 10
    np.testing.assert_array_equal(m.data[:5], np.tile([1, 0], (5, 1)))
    np.testing.assert_array_equal(m.data[5:], np.tile([0, 1], (5, 1)))


def test_one_hot_gap_rows_are_zero():
    segs = [AlignmentSegment("u", "s", "a", 0.0, 0.03), AlignmentSegment("u", "s", "b", 0.05, 0.08)]
    m = one_hot_encode(segs, PhoneInventory(["a", "b"]), T)
    np.testing.assert_array_equal(m.data.sum(axis=1), [1, 1, 1, 0, 0, 1, 1, 1])


def test_one_hot_unknown_phone():
    with pytest.raises(KeyError):
        one_hot_encode(_segs([0, 2], ["q"]), PhoneInventory(["a"]), T)


def test_gold_one_hot_gives_zero_error_in_every_condition():
    corpus = generate(SynthSpec(n_speakers=3, n_utterances=4, noise=0.5, rng_seed=3))
    gold = one_hot_corpus(corpus.phones, frame_period_s=T)
    for c in ("within", "without"):
        for s in ("within", "across"):
            for seq in ("dtw", "hamming"):
                r = evaluate(corpus.phones, gold, ConditionSpec(c, s), seq_kind=SeqDissimKind(seq))
                assert r.error_rate_percent == 0.0


# ------------------------------------------------------------------- shifts


def test_shift_zero_is_identity():
    segs = _segs([0, 10, 20])
    assert shift_boundaries(segs, PerturbSpec(0, 1.0), T) == segs


def test_single_applied_shift():
    segs = _segs([0, 10, 20])
    out = shift_boundaries(segs, PerturbSpec(4, 1.0), T)
    assert _bounds(out) == [0, 14, 20]


def test_shift_clamped_to_keep_one_frame():
    segs = _segs([0, 10, 12, 30])
    # only the first internal boundary shifts: find a seed whose draws are (shift, no shift)
    from ctxabx._rng import keyed_generator
    seed = next(s for s in range(1000)
                if (lambda d: d[0] < 0.5 <= d[1])(keyed_generator(s, "shift", "u").random(2)))
    out = shift_boundaries(segs, PerturbSpec(4, 0.5, rng_seed=seed), T)
    assert _bounds(out) == [0, 11, 12, 30]


def test_shift_draws_are_keyed_and_reproducible():
    segs = _segs(list(range(0, 200, 10)))
    a = shift_boundaries(segs, PerturbSpec(3, 0.5, rng_seed=7), T)
    b = shift_boundaries(segs, PerturbSpec(3, 0.5, rng_seed=7), T)
    c = shift_boundaries(segs, PerturbSpec(3, 0.5, rng_seed=8), T)
    assert a == b and a != c
    moved = [x != y for x, y in zip(_bounds(a)[1:-1], _bounds(segs)[1:-1])]
    assert 0 < sum(moved) < len(moved)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=10), st.integers(0, 10), st.floats(0, 1),
       st.integers(0, 2**32 - 1))
def test_shift_output_valid(durations, k, p, seed):
    bounds = [0] + np.cumsum(durations).tolist()
    segs = _segs(bounds)
    out = shift_boundaries(segs, PerturbSpec(k, p, rng_seed=seed), T)
    nb = _bounds(out)
    assert nb[0] == 0 and nb[-1] == bounds[-1]
    assert all(b - a >= 1 for a, b in zip(nb, nb[1:]))
    assert all(n >= o for n, o in zip(nb, bounds))
    assert [s.phone for s in out] == [s.phone for s in segs]
    link_context(out)


def test_full_probability_shift_changes_some_label():
    corpus = generate(SynthSpec(n_speakers=1, n_utterances=3, frames_per_phone=(2, 6), rng_seed=2))
    shifted = shift_corpus(corpus.phones, PerturbSpec(1, 1.0), T)
    n_frames = {u: m.n_frames for u, m in corpus.features.items()}
    inv = PhoneInventory.from_segments(corpus.phones)
    g0 = one_hot_corpus(corpus.phones, inv, T, n_frames)
    g1 = one_hot_corpus(shifted, inv, T, n_frames)
    for uid in g0:
        assert not np.array_equal(g0[uid].data, g1[uid].data)


# ------------------------------------------------------------------ filters


def _fm(rows):
    return FeatureMatrix("u", np.asarray(rows, dtype=np.float32), T)


def test_square_filter_examples():
    m = _fm([[0.0], [3.0], [6.0]])
    np.testing.assert_array_equal(square_filter(m, 1).data, m.data)
    np.testing.assert_allclose(square_filter(m, 3).data[:, 0], [1.5, 3.0, 4.5])
    const = _fm(np.full((6, 2), 2.5))
    for w in (1, 3, 5, 7, 9, 11):
        np.testing.assert_allclose(square_filter(const, w).data, const.data)
    with pytest.raises(ValueError):
        square_filter(m, 4)


def test_square_filter_matches_window_means():
    x = np.random.default_rng(1).normal(size=(9, 2))
    out = square_filter(_fm(x), 5).data
    for i in range(9):
        lo, hi = max(0, i - 2), min(9, i + 3)
        np.testing.assert_allclose(out[i], x[lo:hi].astype(np.float32).astype(np.float64).mean(axis=0), rtol=1e-6)


def test_square_filter_linear_and_order_matters():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(12, 1)), rng.normal(size=(12, 1))
    fx, fy, fxy = (square_filter(_fm(v), 3).data for v in (x, y, x + 2 * y))
    np.testing.assert_allclose(fxy, fx + 2 * fy, atol=1e-5)
    a = square_filter(square_filter(_fm(x), 3), 5).data
    b = square_filter(square_filter(_fm(x), 5), 3).data
    assert a.shape == b.shape


def test_filter_corpus_keeps_keys_and_shapes():
    corpus = generate(SynthSpec(n_speakers=1, n_utterances=2, rng_seed=1))
    out = filter_corpus(corpus.features, 5)
    assert sorted(out) == sorted(corpus.features)
    assert all(out[k].data.shape == corpus.features[k].data.shape for k in out)
