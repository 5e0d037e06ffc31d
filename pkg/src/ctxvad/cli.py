"""Command-line entry point: ``ctxvad {gen,train,score,eval,explain,context}``.

Set ``CTXVAD_LOG`` (e.g. ``DEBUG``) to change log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import dae, pipeline, synthgen
from ._io import atomic_write_json, atomic_write_text, jsonl_text
from .context import default_schema, mine_sequence
from .dae import ModelFormatError, TrainConfig, TrainingError
from .detect import calibrate_threshold, explain
from .features import SchemaError
from .ingest import IngestError, load_dataset

logger = logging.getLogger("ctxvad")

DEFAULT_RUN = {
    "data": None,
    "validation": None,
    "out": "run",
    "seed": 0,
    "context": True,
    "blocks": None,
    "noise_grid": list(pipeline.NOISE_GRID),
    "threshold_percentile": 99.0,
    "context_params": {"window": 10, "speed_percentile": 99.5, "radius_scale": 1.0},
    "train": {},
}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def load_run_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_RUN))
    if getattr(args, "config", None):
        user = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(user) - set(cfg)
        if unknown:
            raise ValueError(f"unknown run-config keys: {sorted(unknown)}")
        for k, v in user.items():
            if isinstance(v, dict) and isinstance(cfg.get(k), dict):
                cfg[k].update(v)
            else:
                cfg[k] = v
    if getattr(args, "data", None):
        cfg["data"] = args.data
    if getattr(args, "validation", None):
        cfg["validation"] = args.validation
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "noise_grid", None):
        cfg["noise_grid"] = _floats(args.noise_grid)
    if getattr(args, "no_context", False):
        cfg["context"] = False
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["max_epochs"] = args.epochs
    known = {f.name for f in fields(TrainConfig)}
    bad = set(cfg["train"]) - known
    if bad:
        raise ValueError(f"unknown train-config keys: {sorted(bad)}")
    if not cfg["data"]:
        raise ValueError("no training dataset given (--data or 'data' in --config)")
    return cfg


# -- commands ----------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.preset:
        config = synthgen.PRESETS[args.preset](seed=args.seed or 0)
    elif args.config:
        config = synthgen.SceneConfig(**json.loads(Path(args.config).read_text(encoding="utf-8")))
        if args.seed is not None:
            config = replace(config, seed=args.seed)
    else:
        raise ValueError("gen needs --preset or --config")
    out = Path(args.out or "data")
    if args.preset or args.split:
        tr, te = synthgen.generate_split(config, out)
        print(f"train: {tr}\ntest:  {te}")
    else:
        print(synthgen.generate(config, out))
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    out = Path(cfg["out"])
    train = load_dataset(cfg["data"])
    validation = load_dataset(cfg["validation"]) if cfg["validation"] else None
    tc = TrainConfig(**{**cfg["train"], "seed": cfg["seed"]})
    cp = cfg["context_params"]
    result = pipeline.fit(
        train, tc,
        context=cfg["context"],
        blocks=cfg["blocks"],
        window=int(cp["window"]),
        speed_percentile=float(cp["speed_percentile"]),
        radius_scale=float(cp["radius_scale"]),
        noise_grid=cfg["noise_grid"],
        validation=validation,
    )
    model = result.model
    train_scores, _ = pipeline.score_dataset(model, train)
    model.metadata["threshold"] = calibrate_threshold(
        [s.error for s in train_scores], cfg["threshold_percentile"]
    )
    model.metadata["threshold_percentile"] = cfg["threshold_percentile"]
    dae.save(model, out / "model.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(result.history):
        w.writerow([i, repr(v)])
    atomic_write_text(out / "loss_history.csv", buf.getvalue())
    atomic_write_json(out / "train_summary.json", {
        "seed": cfg["seed"],
        "context": cfg["context"],
        "input_dim": model.input_dim,
        "noise_factor": result.noise_factor,
        "selection_metric": result.selection_metric,
        "selection": {repr(k): v for k, v in result.selection.items()},
        "epochs_run": len(result.history),
        "final_loss": result.history[-1] if result.history else None,
        "threshold": model.metadata["threshold"],
    })
    print(f"model: {out / 'model.json'} (noise factor {result.noise_factor}, "
          f"{len(result.history)} epochs, input dim {model.input_dim})")
    return 0


def _threshold(args, model):
    if args.threshold is not None:
        return args.threshold
    return model.metadata.get("threshold")


def cmd_score(args) -> int:
    model = dae.load(args.model)
    data = load_dataset(args.data)
    thr = _threshold(args, model)
    scores, refs = pipeline.score_dataset(model, data, thr)
    records = []
    for s, r in zip(scores, refs):
        rec = {"sequence": r.sequence, "t": r.frame, "err": s.error}
        if s.decision is not None:
            rec["decision"] = s.decision
        rec["top"] = [[n, e] for n, e in explain(s, model.schema, args.top_k)]
        records.append(rec)
    out = Path(args.out or "scores.jsonl")
    atomic_write_text(out, jsonl_text(records))
    print(out)
    return 0


def cmd_eval(args) -> int:
    model = dae.load(args.model)
    data = load_dataset(args.data)
    report = pipeline.evaluate(model, data, context=False if args.no_context else None)
    name = "Our method" if model.schema.uses_context else "Our method without Context"
    table = pipeline.format_table([(name, report)], data.manifest.name)
    out = Path(args.out or "eval")
    atomic_write_json(out / "report.json", report.to_dict())
    atomic_write_text(out / "roc.csv", report.roc_csv())
    atomic_write_text(out / "table.txt", table)
    sys.stdout.write(table)
    return 0


def cmd_explain(args) -> int:
    model = dae.load(args.model)
    data = load_dataset(args.data)
    ref, score, ranked = pipeline.explain_frame(model, data, args.sequence, args.frame, args.top_k)
    print(f"{ref.sequence} frame {ref.frame}: error {score.error:.6g}")
    for n, e in ranked:
        print(f"  {n:<40} {e:.6g}")
    return 0


def cmd_context(args) -> int:
    data = load_dataset(args.data)
    if args.model:
        params = dae.load(args.model).context_params
        if params is None:
            raise SchemaError("model was trained without context; no context parameters stored")
    else:
        calib = load_dataset(args.train) if args.train else data
        params = pipeline.context_params_for(calib, args.window, args.speed_percentile, args.radius_scale)
    schema = default_schema(data)
    j = len(data.manifest.object_classes)
    names = {b.name: b.labels or b.feature_names() for b in schema.blocks if b.source != "categories"}
    records = []
    for seq in data.sequences:
        for f, ctx in zip(seq.frames, mine_sequence(seq, j, params)):
            rec = {"sequence": seq.name, "t": f.frame}
            for block, vec in ctx.vectors().items():
                rec[block] = dict(zip(names[block], vec.tolist()))
            records.append(rec)
    out = Path(args.out or "context.jsonl")
    atomic_write_text(out, jsonl_text(records))
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxvad", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--preset", choices=sorted(synthgen.PRESETS))
    g.add_argument("--config", help="SceneConfig JSON")
    g.add_argument("--split", action="store_true", help="with --config: write train/ and test/")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on normal data")
    t.add_argument("--config", help="run-config JSON; flags override it")
    t.add_argument("--data", help="training manifest (file or directory)")
    t.add_argument("--validation", help="labelled manifest for noise-factor selection")
    t.add_argument("--seed", type=int)
    t.add_argument("--noise-grid", help="comma-separated noise factors")
    t.add_argument("--no-context", action="store_true", help="category features only")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score frames, write JSONL")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--top-k", type=int, default=3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="frame-level AUC / EER report")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--no-context", action="store_true",
                   help="assert the model is a no-context ablation")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("explain", help="rank per-feature errors of one frame")
    x.add_argument("--model", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--frame", type=int, required=True)
    x.add_argument("--sequence")
    x.add_argument("--top-k", type=int, default=5)
    x.set_defaults(func=cmd_explain)

    c = sub.add_parser("context", help="dump mined context features as JSONL")
    c.add_argument("--data", required=True)
    c.add_argument("--model", help="take context parameters from a trained model")
    c.add_argument("--train", help="calibrate the speed threshold on this dataset")
    c.add_argument("--window", type=int, default=10)
    c.add_argument("--speed-percentile", type=float, default=99.5)
    c.add_argument("--radius-scale", type=float, default=1.0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_context)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CTXVAD_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IngestError, SchemaError, ModelFormatError, TrainingError, ValueError,
            KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
