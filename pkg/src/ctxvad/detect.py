"""Reconstruction-error scoring, thresholding and per-feature explanations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dae import DaeModel, reconstruct
from .features import FeatureSchema, assemble, normalize


@dataclass(frozen=True)
class FrameScore:
    frame: int
    error: float
    feature_errors: np.ndarray
    decision: int | None = None

    def with_threshold(self, threshold: float) -> "FrameScore":
        return FrameScore(self.frame, self.error, self.feature_errors, int(self.error > threshold))


def score_vectors(model: DaeModel, raw_vectors) -> np.ndarray:
    """Per-feature squared errors for a batch of raw (unnormalized) vectors."""
    X = normalize(np.atleast_2d(np.asarray(raw_vectors, dtype=np.float64)), model.normalizer)
    Y = reconstruct(model, X)
    return (X - Y) ** 2


def score_frame(model: DaeModel, features, context, threshold: float | None = None) -> FrameScore:
    """Score one frame from its category vector and mined context.

    Test inputs are never corrupted.
    """
    x = assemble(context, features.categories, model.schema)
    fe = score_vectors(model, x)[0]
    score = FrameScore(features.frame, float(fe.mean()), fe)
    return score if threshold is None else score.with_threshold(threshold)


def calibrate_threshold(train_scores, percentile: float = 99.0) -> float:
    s = np.asarray(train_scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("cannot calibrate a threshold from zero scores")
    if not 0 <= percentile <= 100:
        raise ValueError(f"percentile must be in [0, 100], got {percentile}")
    return float(np.percentile(s, percentile))


def explain(score: FrameScore, schema: FeatureSchema, top_k: int = 5) -> list[tuple[str, float]]:
    """The ``top_k`` largest per-feature errors, ties broken by schema position."""
    fe = np.asarray(score.feature_errors)
    if fe.shape != (schema.total_dim,):
        raise ValueError(f"score has {fe.size} feature errors, schema has {schema.total_dim}")
    names = schema.feature_names()
    k = max(0, min(top_k, len(fe)))
    order = np.argsort(-fe, kind="stable")[:k]
    return [(names[i], float(fe[i])) for i in order]
