from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import threshold_sweep_ap

from ctxabx.dissim import FrameDissimKind
from ctxabx.mapeval import (
    WordToken,
    map_result,
    map_score,
    mean_pool,
    pair_dissimilarities,
    ranked_average_precision,
    result_to_json,
    word_tokens,
)
from ctxabx.synthgen import SynthSpec, generate


def _tokens(embs, types):
    return [WordToken(t, np.asarray(e, dtype=float)) for e, t in zip(embs, types)]


def test_mean_pool_examples():
    np.testing.assert_array_equal(mean_pool(np.array([[1.0, 2.0]])), [1.0, 2.0])
    np.testing.assert_array_equal(mean_pool(np.array([[0.0, 0.0], [2.0, 4.0]])), [1.0, 2.0])
    np.testing.assert_allclose(mean_pool(np.tile([3.0, -1.0], (5, 1))), [3.0, -1.0])
    with pytest.raises(ValueError):
        mean_pool(np.zeros((0, 2)))


def test_perfect_separation_is_100():
    toks = _tokens([[1, 0], [1, 0], [0, 1], [0, 1]], ["a", "a", "b", "b"])
    assert map_score(toks) == 100.0


def test_identical_embeddings_pessimistic_ties():
    toks = _tokens([[1, 1]] * 4, ["a", "a", "b", "b"])
    assert map_score(toks) == pytest.approx(100 * (1 / 5 + 2 / 6) / 2)
    assert round(map_score(toks), 2) == 26.67


def test_single_same_pair_ranked_first():
    toks = _tokens([[1, 0], [1, 0.01], [0, 1], [-1, 0.3]], ["a", "a", "b", "c"])
    assert map_score(toks) == 100.0


def test_errors():
    with pytest.raises(ValueError, match="two"):
        map_score(_tokens([[1, 0]], ["a"]))
    with pytest.raises(ValueError, match="same-type"):
        map_score(_tokens([[1, 0], [0, 1]], ["a", "b"]))
    with pytest.raises(ValueError, match="mixed"):
        map_score([WordToken("a", np.ones(2)), WordToken("a", np.ones(3))])


def test_pairs_are_i_less_than_j():
    emb = np.random.default_rng(0).random((4, 3))
    d, i, j = pair_dissimilarities(emb, FrameDissimKind("kl"))
    assert np.all(i < j) and d.shape == (6,)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ranked_ap_equals_threshold_sweep(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 51))
    emb = rng.normal(size=(n, 4))
    types = rng.integers(0, max(1, n // 3), n)
    d, i, j = pair_dissimilarities(emb)
    same = types[i] == types[j]
    if not same.any():
        return
    assert ranked_average_precision(d, same) == pytest.approx(threshold_sweep_ap(d, same), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rank_only_dependence(seed):
    rng = np.random.default_rng(seed)
    d = rng.integers(0, 6, 30).astype(float)
    same = rng.random(30) < 0.3
    if not same.any():
        return
    assert ranked_average_precision(d, same) == ranked_average_precision(np.exp(d) + 2.0, same)


def test_duplicating_tokens_does_not_exceed_ideal():
    rng = np.random.default_rng(3)
    emb = rng.normal(size=(6, 3))
    types = ["a", "b", "c", "a", "b", "c"]
    base = map_score(_tokens(emb, types))
    dup = map_score(_tokens(np.concatenate([emb, emb]), types + types))
    assert 0 < base <= 100.0 and dup <= 100.0
    # exact copies of one shared embedding: ties must not be broken in favour of the copies
    flat = map_score(_tokens([[1.0, 1.0]] * 4, ["a", "b", "a", "b"]))
    assert flat == pytest.approx(100 * (1 / 5 + 2 / 6) / 2)


def test_map_from_synthetic_words_is_100_when_noiseless():
    corpus = generate(SynthSpec(n_speakers=2, n_utterances=4, lexicon_size=6, word_length=2,
                                frames_per_phone=(5, 5), rng_seed=1))
    toks = word_tokens(corpus.words, corpus.features)
    assert len(toks) == len(corpus.words)
    r = map_result(toks)
    assert r.map_percent == 100.0 and r.n_pairs == len(toks) * (len(toks) - 1) // 2
    doc = json.loads(result_to_json(r, system="toy"))
    assert doc["kind"] == "map" and doc["metric"] == "MAP" and doc["map_percent"] == 100.0
