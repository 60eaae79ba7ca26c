"""Command line entry point: generate, augment, train, eval, baseline, predict.

Diagnostics go to stderr as one JSON object per line; machine outputs go
to the files named on the command line (``predict`` prints its ranking to
stdout). The default seed comes from ``MMITF_SEED`` when ``--seed`` is not
given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import datagen
from . import evaluation as ev
from .features import ImageDims
from .model import MMITF, ModelConfig, TrainConfig, load_model, save_model, train

SEED_ENV = "MMITF_SEED"


class UsageError(Exception):
    pass


def log_event(event: str, **fields) -> None:
    print(json.dumps({"event": event, **fields}, sort_keys=True, default=str), file=sys.stderr, flush=True)


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: int = 0  # random augmentation variants added per training sample
    max_noise_level: int = 3
    grid_rows: int = 4
    grid_cols: int = 16

    def to_dict(self) -> dict:
        return asdict(self)


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    """Merge defaults < config file < command-line flags."""
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError(f"config {path}: expected a JSON object")
    model_d = dict(raw.get("model", {}))
    train_d = dict(raw.get("train", {}))
    top = {k: raw[k] for k in ("seed", "augment", "max_noise_level", "grid_rows", "grid_cols") if k in raw}
    for k, v in overrides.items():
        if v is None:
            continue
        if k in ModelConfig.__dataclass_fields__:
            model_d[k] = v
        elif k in TrainConfig.__dataclass_fields__ and k != "seed":
            train_d[k] = v
        else:
            top[k] = v
    seed = top.pop("seed", None)
    if seed is None:
        seed = _default_seed()
    train_d.setdefault("seed", seed)
    try:
        return RunConfig(seed=seed, model=ModelConfig.from_dict(model_d), train=TrainConfig.from_dict(train_d), **top)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _load(path) -> list[datagen.Sample]:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file: {path}")
    return datagen.load_jsonl(p)


def _parse_grid(spec: str) -> tuple[int, int]:
    try:
        r, c = spec.lower().split("x")
        rows, cols = int(r), int(c)
    except ValueError:
        raise UsageError(f"--grid expects ROWSxCOLS, got {spec!r}") from None
    if rows <= 0 or cols <= 0:
        raise UsageError("--grid counts must be positive")
    return rows, cols


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_report(report_dir: Path, samples, preds, grid_rows: int, grid_cols: int, extra: dict) -> dict:
    report_dir.mkdir(parents=True, exist_ok=True)
    m = ev.metrics(preds, samples)
    report = {**m, **extra}
    _write_json(report_dir / "metrics.json", report)
    dims = samples[0].dims
    grid = ev.PatchGrid.for_table(dims, grid_rows, grid_cols)
    pcm = ev.build_pcm(ev.prediction_pairs(samples, preds), grid)
    ev.render(pcm, "csv", report_dir / "pcm.csv")
    ev.render(pcm, "svg", report_dir / "pcm.svg")
    return report


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_generate(args) -> None:
    if args.scenes < 1:
        raise UsageError("--scenes must be >= 1")
    if args.objects < 1:
        raise UsageError("--objects must be >= 1")
    seed = args.seed if args.seed is not None else _default_seed()
    samples = datagen.generate_corpus(
        args.scenes,
        args.objects,
        seed=seed,
        dims=ImageDims(args.width, args.height),
        jitter_deg=args.jitter,
    )
    n = datagen.save_jsonl(samples, args.out)
    log_event("generate", samples=n, scenes=args.scenes, objects=args.objects, seed=seed, out=str(args.out))


def cmd_augment(args) -> None:
    seed = args.seed if args.seed is not None else _default_seed()
    samples = _load(args.input)
    if args.light is not None:
        out = datagen.light_augment(samples, args.light, seed, args.max_noise_level, include_base=False)
        n = datagen.save_jsonl(out, args.out)
    else:
        n = datagen.write_augmented_jsonl(datagen.iter_augmented(samples, seed), args.out)
    log_event(
        "augment",
        input_samples=len(samples),
        output_samples=n,
        multiplicity=n / len(samples) if samples else 0,
        out=str(args.out),
    )


def _train_one(train_set, val_set, cfg: RunConfig, tag: str):
    def on_epoch(rec):
        log_event("epoch", run=tag, **asdict(rec))

    if cfg.augment:
        train_set = datagen.light_augment(train_set, cfg.augment, cfg.seed, cfg.max_noise_level)
    model, tlog = train(train_set, cfg.model, cfg.train, val=val_set or None, on_epoch=on_epoch)
    return model, tlog


def _log_without_timing(tlog) -> dict:
    d = tlog.to_dict()
    for e in d["epochs"]:
        e.pop("seconds", None)
    return d


def cmd_train(args) -> None:
    cfg = load_run_config(
        args.config,
        {
            "modality_mode": args.mode,
            "seed": args.seed,
            "epochs": args.epochs,
            "augment": args.augment,
        },
    )
    samples = _load(args.data)
    if not samples:
        raise UsageError(f"{args.data} holds no samples")
    val = _load(args.val) if args.val else None

    if not args.kfold:
        model, tlog = _train_one(samples, val, cfg, "single")
        save_model(args.out, model, {"run_config": cfg.to_dict()})
        log_path = Path(str(args.out) + ".log.json")
        _write_json(log_path, {"run_config": cfg.to_dict(), **_log_without_timing(tlog)})
        log_event("train", checkpoint=str(args.out), log=str(log_path))
        return

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = ev.kfold_split(datagen.scene_ids(samples), k=args.folds, holdout=args.holdout, seed=cfg.seed)
    test = ev.select_scenes(samples, plan.test)
    per_fold = []
    for f, fold in enumerate(plan.folds):
        tr = ev.select_scenes(samples, fold.train)
        va = ev.select_scenes(samples, fold.val)
        model, tlog = _train_one(tr, va, cfg, f"fold{f}")
        ckpt = out_dir / f"fold_{f}.ckpt"
        save_model(ckpt, model, {"run_config": cfg.to_dict(), "fold": f})
        m = ev.metrics(model.predict_samples(test), test) if test else {}
        per_fold.append(
            {"fold": f, "train_scenes": fold.train, "val_scenes": fold.val, **m, "log": _log_without_timing(tlog)}
        )
        log_event("fold", fold=f, checkpoint=str(ckpt), **{k: m.get(k) for k in ev.METRIC_KEYS})
    report = ev.aggregate(per_fold) if test else {"per_fold": per_fold}
    report["test_scenes"] = plan.test
    report["run_config"] = cfg.to_dict()
    _write_json(out_dir / "kfold_report.json", report)
    log_event("kfold", report=str(out_dir / "kfold_report.json"))


def cmd_eval(args) -> None:
    rows, cols = _parse_grid(args.grid)
    samples = _load(args.data)
    if not samples:
        raise UsageError(f"{args.data} holds no samples")
    model = _load_model(args.ckpt)
    preds = model.predict_samples(samples)
    report = _write_report(Path(args.report), samples, preds, rows, cols, {"method": f"mmitf-{model.config.modality_mode}"})
    log_event("eval", report=str(args.report), **{k: report[k] for k in ev.METRIC_KEYS})


def cmd_baseline(args) -> None:
    rows, cols = _parse_grid(args.grid)
    samples = _load(args.data)
    if not samples:
        raise UsageError(f"{args.data} holds no samples")
    if args.train_data:
        seed = args.seed if args.seed is not None else _default_seed()
        cfg = bl.ClassifierTrainConfig(seed=seed)
        clf = bl.train_classifier(_load(args.train_data), cfg)
        bl.save_classifier(args.ckpt, clf, cfg)
        log_event("baseline-train", checkpoint=str(args.ckpt))
    else:
        if not Path(args.ckpt).exists():
            raise UsageError(f"no such checkpoint: {args.ckpt} (pass --train-data to create it)")
        try:
            clf = bl.load_classifier(args.ckpt)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    preds = bl.baseline_predict_many(samples, clf, ray=args.ray)
    report = _write_report(Path(args.report), samples, preds, rows, cols, {"method": "baseline-ray" if args.ray else "baseline"})
    log_event("baseline", report=str(args.report), **{k: report[k] for k in ev.METRIC_KEYS})


def _load_model(path) -> MMITF:
    if not Path(path).exists():
        raise UsageError(f"no such checkpoint: {path}")
    try:
        return load_model(path)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_predict(args) -> None:
    text = args.sample
    if not text.lstrip().startswith("{") and Path(text).exists():
        text = Path(text).read_text().strip().splitlines()[0]
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--sample is neither a file nor valid JSON: {exc.msg}") from None
    try:
        samples = datagen.samples_from_json(obj)
    except ValueError as exc:
        raise UsageError(f"--sample: {exc}") from None
    model = _load_model(args.ckpt)
    results = []
    for s in samples:
        scores = model.forward(s).scores
        ranked = np.argsort(-scores, kind="stable")
        n = s.n_objects
        results.append(
            {
                "top": int(ranked[0]),
                "pointing": bool(ranked[0] != n),
                "non_pointing_probability": float(scores[n]),
                "ranking": [
                    {"index": int(i), "object": s.objects.tokens()[i].tolist(), "score": float(scores[i])}
                    for i in ranked
                    if i != n
                ],
            }
        )
    print(json.dumps(results if len(results) > 1 else results[0], indent=2))


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmitf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic tabletop corpus")
    g.add_argument("--scenes", type=int, default=30)
    g.add_argument("--objects", type=int, default=10)
    g.add_argument("--seed", type=int)
    g.add_argument("--jitter", type=float, default=5.0, help="max aiming error in degrees")
    g.add_argument("--width", type=float, default=1280.0)
    g.add_argument("--height", type=float, default=720.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("augment", help="expand a corpus by the full augmentation product")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--light", type=int, help="instead keep N random variants per sample")
    a.add_argument("--max-noise-level", type=int, default=3)
    a.set_defaults(func=cmd_augment)

    t = sub.add_parser("train", help="train a model (optionally the k-fold protocol)")
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=("two", "three"))
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="checkpoint path, or a directory with --kfold")
    t.add_argument("--val")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--augment", type=int, help="random augmentation variants per training sample")
    t.add_argument("--kfold", action="store_true")
    t.add_argument("--folds", type=int, default=8)
    t.add_argument("--holdout", type=int, default=6)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics and patch confusion matrix for a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--grid", default="4x16")
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="wrist-fingertip line baseline on the same data")
    b.add_argument("--data", required=True)
    b.add_argument("--ckpt", required=True, help="classifier checkpoint (written when --train-data is given)")
    b.add_argument("--train-data")
    b.add_argument("--seed", type=int)
    b.add_argument("--grid", default="4x16")
    b.add_argument("--report", required=True)
    b.add_argument("--ray", action="store_true", help="measure to a forward ray instead of the full line")
    b.set_defaults(func=cmd_baseline)

    r = sub.add_parser("predict", help="rank the objects for one sample")
    r.add_argument("--sample", required=True, help="JSON record or a file holding one")
    r.add_argument("--ckpt", required=True)
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        args.func(args)
    except UsageError as exc:
        print(f"mmitf {args.command}: {exc}", file=sys.stderr)
        return 2
    except (datagen.DatasetFormatError, OSError, ValueError, RuntimeError) as exc:
        print(f"mmitf {args.command}: error: {exc}", file=sys.stderr)
        return 1
    log_event("done", command=args.command, seconds=round(time.perf_counter() - t0, 3))
    return 0


if __name__ == "__main__":
    sys.exit(main())
