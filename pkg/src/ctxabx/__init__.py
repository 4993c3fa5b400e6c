"""ABX phone discriminability with context-invariance conditions, plus MAP word evaluation."""
from __future__ import annotations

__version__ = "0.1.0"

from .abxscore import Evaluator, NoEvaluableTasks, ScoreReport, aggregate, delta, evaluate
from .dissim import FrameDissimKind, SeqDissimKind, TokenDissimilarity, dtw_dissim, seq_dissim
from .featureio import AlignmentSegment, FeatureMatrix, TokenFrames, read_alignments, read_features
from .itemgen import ConditionSpec, ContextMode, SpeakerMode, cells_from_tokens, enumerate_tasks
from .mapeval import map_score
from .perturb import PerturbSpec, PhoneInventory, one_hot_corpus, shift_corpus, square_filter
from .synthgen import SynthSpec, generate

__all__ = [
    "AlignmentSegment", "ConditionSpec", "ContextMode", "Evaluator", "FeatureMatrix", "FrameDissimKind",
    "NoEvaluableTasks", "PerturbSpec", "PhoneInventory", "ScoreReport", "SeqDissimKind", "SpeakerMode",
    "SynthSpec", "TokenDissimilarity", "TokenFrames", "aggregate", "cells_from_tokens", "delta",
    "dtw_dissim", "enumerate_tasks", "evaluate", "generate", "map_score", "one_hot_corpus",
    "read_alignments", "read_features", "seq_dissim", "shift_corpus", "square_filter",
]
