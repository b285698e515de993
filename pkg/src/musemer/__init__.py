"""Pairwise-comparison emotion annotation and music emotion recognition
experiments: corpus ingestion, Quicksort ranking campaigns, audio features,
SVR and LSTM models, and experiment runners."""

__version__ = "0.1.0"

from . import corpus, evalharness, features, ranking, seqnet, svr  # noqa: F401
