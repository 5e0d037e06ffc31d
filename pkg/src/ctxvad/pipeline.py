"""End-to-end glue: dataset -> feature vectors -> trained model -> report."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import dae
from .context import (
    ContextParams,
    calibrate_speed_threshold,
    default_schema,
    mine_sequence,
)
from .dae import DaeModel, TrainConfig
from .detect import FrameScore, explain, score_vectors
from .features import FeatureSchema, SchemaError, assemble, fit_normalizer, normalize
from .metrics import auc, eer, roc_curve

logger = logging.getLogger(__name__)

NOISE_GRID = (0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4)


@dataclass(frozen=True)
class FrameRef:
    sequence: str
    frame: int
    label: int | None
    event: str | None


def dataset_vectors(dataset, schema: FeatureSchema, params: ContextParams | None):
    """Assembled (raw) vectors for every frame, plus a reference per row."""
    X, refs = [], []
    j = len(dataset.manifest.object_classes)
    for seq in dataset.sequences:
        if schema.uses_context:
            if params is None:
                raise SchemaError("schema has context blocks but no context parameters were given")
            contexts = mine_sequence(seq, j, params)
        else:
            contexts = [None] * len(seq.frames)
        for f, ctx in zip(seq.frames, contexts):
            X.append(assemble(ctx, f.categories, schema))
            refs.append(FrameRef(seq.name, f.frame, f.label, seq.event_type(f.frame)))
    X = np.array(X, dtype=np.float64).reshape(len(refs), schema.total_dim)
    return X, refs


def context_params_for(train, window=10, percentile=99.5, radius_scale=1.0) -> ContextParams:
    theta = calibrate_speed_threshold(train, window, percentile)
    return ContextParams(window=window, speed_threshold=theta, radius_scale=radius_scale,
                         speed_percentile=percentile)


@dataclass
class FitResult:
    model: DaeModel
    history: list[float]
    noise_factor: float
    selection: dict = field(default_factory=dict)  # noise factor -> selection metric
    selection_metric: str = "none"


def fit(
    train,
    config: TrainConfig = TrainConfig(),
    *,
    context: bool = True,
    blocks: Sequence[str] | None = None,
    window: int = 10,
    speed_percentile: float = 99.5,
    radius_scale: float = 1.0,
    noise_grid: Sequence[float] | None = None,
    validation=None,
    holdout_fraction: float = 0.1,
    clip_upper: bool = False,
) -> FitResult:
    """Train a DAE on a normal-only training Dataset.

    With a ``noise_grid`` of several values one model is trained per value
    and the best kept: by AUC on ``validation`` when it is a labelled
    Dataset, otherwise by clean reconstruction loss on a seeded held-out
    slice of the training frames.

    By default test-time inputs are not clamped above the training range
    (``clip_upper=False``): an overspeed or crowd excursion far beyond
    anything seen in training should cost more than one at the edge.
    """
    schema = default_schema(train, context=context, blocks=blocks)
    params = (
        context_params_for(train, window, speed_percentile, radius_scale)
        if schema.uses_context else None
    )
    X, _ = dataset_vectors(train, schema, params)
    normalizer = fit_normalizer(X, upper=1.0 if clip_upper else None)
    Xn = normalize(X, normalizer)
    base = dae.init(schema, config.seed, normalizer, context_params=params)
    grid = list(noise_grid) if noise_grid else [config.noise]

    if len(grid) == 1:
        cfg = replace(config, noise=grid[0])
        model, hist = dae.train(base, Xn, cfg)
        return FitResult(model, hist, grid[0])

    use_val = validation is not None and validation.has_labels
    if use_val:
        fit_rows, held = Xn, None
        metric = "validation_auc"
    else:
        rng = np.random.default_rng(config.seed)
        order = rng.permutation(len(Xn))
        n_held = max(2, int(round(holdout_fraction * len(Xn))))
        held, fit_rows = Xn[order[:n_held]], Xn[order[n_held:]]
        metric = "holdout_loss"
    results = {}
    best = None
    for s in grid:
        cfg = replace(config, noise=s)
        model, hist = dae.train(base, fit_rows, cfg)
        if use_val:
            value = evaluate(model, validation).auc
            better = best is None or value > best[0]
        else:
            value = dae.loss(held, dae.reconstruct(model, held))
            better = best is None or value < best[0]
        results[s] = value
        logger.info("noise %.3g: %s = %.6g", s, metric, value)
        if better:
            best = (value, s, model, hist)
    _, s, model, hist = best
    model.metadata["noise_selection"] = {"metric": metric, "values": {repr(k): v for k, v in results.items()}}
    return FitResult(model, hist, s, results, metric)


def check_dataset_schema(model: DaeModel, dataset):
    names = [b.name for b in model.schema.blocks]
    try:
        expected = default_schema(dataset, context=model.schema.uses_context, blocks=names)
    except ValueError as e:
        raise SchemaError(f"dataset does not provide the model's feature blocks: {e}") from None
    if expected != model.schema:
        if expected.total_dim != model.schema.total_dim:
            raise SchemaError(
                f"dataset yields input dimension {expected.total_dim}, model expects "
                f"{model.schema.total_dim}"
            )
        raise SchemaError("dataset class tables do not match the model's feature schema")


def score_dataset(model: DaeModel, dataset, threshold: float | None = None):
    """FrameScore for every frame, with the matching FrameRef."""
    check_dataset_schema(model, dataset)
    X, refs = dataset_vectors(dataset, model.schema, model.context_params)
    fe = score_vectors(model, X)
    scores = []
    for ref, row in zip(refs, fe):
        s = FrameScore(ref.frame, float(row.mean()), row)
        scores.append(s if threshold is None else s.with_threshold(threshold))
    return scores, refs


@dataclass
class EvalReport:
    auc: float
    eer: float
    fpr: np.ndarray
    tpr: np.ndarray
    n_positive: int
    n_negative: int
    config: dict
    subset_auc: dict = field(default_factory=dict)
    scores: list[FrameScore] = field(default_factory=list, repr=False)
    refs: list[FrameRef] = field(default_factory=list, repr=False)

    @property
    def roc_points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "eer": self.eer,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "subset_auc": self.subset_auc,
            "config": self.config,
            "roc": [list(p) for p in self.roc_points],
        }

    def roc_csv(self) -> str:
        return "fpr,tpr\n" + "".join(f"{f!r},{t!r}\n" for f, t in self.roc_points)


def evaluate(model: DaeModel, test, context: bool | None = None) -> EvalReport:
    """Frame-level AUC/EER of ``model`` on a labelled Dataset.

    ``context`` only asserts which kind of model is being evaluated: a
    no-context run needs a model trained on a schema without context blocks.
    """
    if not test.has_labels:
        raise ValueError(f"dataset {test.manifest.name!r} has no frame labels")
    if context is not None and context != model.schema.uses_context:
        raise SchemaError(
            f"requested context={'on' if context else 'off'} but the model was trained "
            f"with context {'on' if model.schema.uses_context else 'off'}"
        )
    scores, refs = score_dataset(model, test)
    err = np.array([s.error for s in scores])
    y = np.array([r.label for r in refs], dtype=int)
    fpr, tpr, _ = roc_curve(err, y)
    subset = {}
    events = sorted({r.event for r in refs if r.event is not None and r.label == 1})
    for ev in events:
        mask = np.array([r.label == 0 or r.event == ev for r in refs])
        subset[ev] = auc(err[mask], y[mask])
    return EvalReport(
        auc=auc(err, y),
        eer=eer(err, y),
        fpr=fpr,
        tpr=tpr,
        n_positive=int(y.sum()),
        n_negative=int((1 - y).sum()),
        config={
            "dataset": test.manifest.name,
            "context": model.schema.uses_context,
            "noise_factor": model.metadata.get("noise_factor"),
            "input_dim": model.input_dim,
            "seed": model.metadata.get("seed"),
        },
        subset_auc=subset,
        scores=scores,
        refs=refs,
    )


def format_table(rows: Sequence[tuple[str, EvalReport]], dataset: str = "") -> str:
    """Plain-text table: method, AUC (%), EER (%)."""
    title = f"Frame-level anomaly detection{f' on {dataset}' if dataset else ''}"
    width = max([len("Method")] + [len(name) for name, _ in rows])
    lines = [title, f"{'Method':<{width}}  {'AUC (%)':>8}  {'EER (%)':>8}"]
    lines.append("-" * len(lines[1]))
    for name, r in rows:
        lines.append(f"{name:<{width}}  {100 * r.auc:>8.1f}  {100 * r.eer:>8.1f}")
    return "\n".join(lines) + "\n"


def explain_frame(model: DaeModel, dataset, sequence: str | None, frame: int, top_k: int = 5):
    scores, refs = score_dataset(model, dataset)
    for s, r in zip(scores, refs):
        if r.frame == frame and (sequence is None or r.sequence == sequence):
            return r, s, explain(s, model.schema, top_k)
    raise KeyError(f"frame {frame} not found" + (f" in sequence {sequence!r}" if sequence else ""))
