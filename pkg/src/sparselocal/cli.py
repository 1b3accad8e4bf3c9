"""Command-line interface: train, eval, explain, bench.

Run configurations and dataset manifests are JSON files; all tabular
output is line-delimited JSON so downstream tooling can parse it without
version sniffing. Every command accepts --seed and is deterministic
given it.

Dataset manifests, resolved relative to the manifest file:

  {"type": "synthetic", "n": 4000, "d": 20, "seed": 7,
   "fractions": [0.7, 0.1, 0.2]}

  {"type": "image", "train_images": "...", "train_labels": "...",
   "test_images": "...", "test_labels": "...", "val_fraction": 0.1,
   "seed": 0, "train_limit": null, "test_limit": null}

  {"type": "text", "path": "corpus.tsv", "min_freq": 2, "counts": false,
   "fractions": [0.7, 0.1, 0.2], "seed": 0, "stopwords": null}

Training config:

  {"dataset": "manifest.json", "seed": 0,
   "model": {"k": 10, "fc_layers": 1, "fc_width": 128},
   "train": {"adam_lr": 1e-3, "k_coarse": 10, "batch_size": 64,
             "max_coarse_epochs": 20, "max_fine_epochs": 15, "patience": 5}}
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines as bl
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    Sample,
    build_text_dataset,
    downsample_7x7,
    load_image_dataset,
    make_synthetic,
    parse_idx,
    split_dataset,
    tokenize,
    STOPWORDS,
)
from .errors import CheckpointError, ConfigError, DataFormatError, GateExhaustedError
from .model import GatedLocalLinear, ModelConfig
from .render import render_image_svg, render_text_html
from .train import TrainSchedule, coarse_to_fine_train, evaluate


@dataclass
class LoadedData:
    dataset: Dataset
    train: list
    val: list
    test: list

    @property
    def all_samples(self):
        return self.train + self.val + self.test


def _emit(record, stream=None):
    (stream or sys.stdout).write(json.dumps(record, sort_keys=True) + "\n")


def _read_json(path, what):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{what} file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from exc


def load_manifest(path):
    """Build train/validation/test splits from a dataset manifest."""
    manifest = _read_json(path, "dataset manifest")
    base = Path(path).parent
    kind = manifest.get("type")
    if kind == "synthetic":
        for field in ("n", "d", "seed"):
            if field not in manifest:
                raise ConfigError(f'dataset manifest is missing required field "{field}"')
        ds = make_synthetic(manifest["n"], manifest["d"], manifest["seed"])
        fractions = manifest.get("fractions", [0.7, 0.1, 0.2])
        train, val, test = split_dataset(ds.samples, fractions, manifest["seed"])
        return LoadedData(ds, train, val, test)
    if kind == "image":
        for field in ("train_images", "train_labels", "test_images", "test_labels"):
            if field not in manifest:
                raise ConfigError(f'dataset manifest is missing required field "{field}"')
        train_ds = load_image_dataset(
            base / manifest["train_images"], base / manifest["train_labels"],
            limit=manifest.get("train_limit"), id_prefix="train",
        )
        test_ds = load_image_dataset(
            base / manifest["test_images"], base / manifest["test_labels"],
            limit=manifest.get("test_limit"), id_prefix="test",
        )
        val_fraction = manifest.get("val_fraction", 0.1)
        train, val = split_dataset(
            train_ds.samples, [1.0 - val_fraction, val_fraction], manifest.get("seed", 0)
        )
        return LoadedData(train_ds, train, val, test_ds.samples)
    if kind == "text":
        if "path" not in manifest:
            raise ConfigError('dataset manifest is missing required field "path"')
        stopwords = None
        if manifest.get("stopwords"):
            stop_path = base / manifest["stopwords"]
            stopwords = frozenset(stop_path.read_text(encoding="utf-8").split())
        ds = build_text_dataset(
            base / manifest["path"],
            min_freq=manifest.get("min_freq", 2),
            stopwords=stopwords,
            counts=manifest.get("counts", False),
        )
        fractions = manifest.get("fractions", [0.7, 0.1, 0.2])
        train, val, test = split_dataset(ds.samples, fractions, manifest.get("seed", 0))
        return LoadedData(ds, train, val, test)
    raise ConfigError(f'dataset manifest has unknown type {kind!r}; expected synthetic, image or text')


def _extractor_spec(dataset, model_cfg):
    if dataset.kind == "image":
        sample = dataset.samples[0]
        return {
            "kind": "image",
            "in_shape": list(sample.x.shape),
            "channels": model_cfg.get("channels", [16, 32, 64]),
        }
    if dataset.kind == "vector":
        return {"kind": "vector", "dim": int(np.asarray(dataset.samples[0].x).shape[0])}
    if dataset.kind == "text":
        return {
            "kind": "text",
            "vocab_size": len(dataset.vocab),
            "embed_dim": model_cfg.get("embed_dim", 64),
            "filter_widths": model_cfg.get("filter_widths", [3, 4, 5]),
            "filters": model_cfg.get("filters", 32),
            "pad_index": dataset.vocab.oov_index,
        }
    raise ConfigError(f"cannot infer an extractor for dataset kind {dataset.kind!r}")


def build_model_config(dataset, model_cfg):
    return ModelConfig(
        d=dataset.d,
        k=model_cfg.get("k", 10),
        extractor=_extractor_spec(dataset, model_cfg),
        fc_layers=model_cfg.get("fc_layers", 1),
        fc_width=model_cfg.get("fc_width", 128),
        num_classes=dataset.num_classes,
        tau_coarse=model_cfg.get("tau_coarse", 1.0),
        tau_fine=model_cfg.get("tau_fine", 0.1),
    )


def _file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_train(args):
    config = _read_json(args.config, "config")
    if "dataset" not in config:
        raise ConfigError('config is missing required field "dataset"')
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    manifest_path = Path(args.config).parent / config["dataset"]
    data = load_manifest(manifest_path)

    model_cfg = config.get("model", {})
    cfg = build_model_config(data.dataset, model_cfg)
    train_cfg = dict(config.get("train", {}))
    train_cfg.setdefault("k_target", cfg.k)
    try:
        schedule = TrainSchedule(**train_cfg)
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from exc

    rng = np.random.default_rng(seed)
    model = GatedLocalLinear(cfg, rng)
    log_path = Path(args.log) if args.log else Path(args.checkpoint).with_suffix(".log.jsonl")
    with open(log_path, "w", encoding="utf-8") as log_fh:

        def progress(record):
            _emit(record)
            _emit(record, log_fh)

        log = coarse_to_fine_train(model, data.train, data.val, schedule, rng, progress=progress)

    save_checkpoint(
        args.checkpoint, model, schedule=schedule, phase_log=log,
        manifest_sha256=_file_sha256(manifest_path),
    )
    final = {
        "event": "trained",
        "checkpoint": str(args.checkpoint),
        "log": str(log_path),
        "epochs": len(log),
        "val_acc": log[-1]["val_acc"] if log else None,
        "seed": seed,
    }
    _emit(final)
    return 0


def _parse_k_list(text):
    try:
        ks = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--k must be a comma-separated list of integers, got {text!r}") from exc
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"--k values must be positive, got {text!r}")
    return ks


def cmd_eval(args):
    model, _header = load_checkpoint(args.checkpoint)
    data = load_manifest(args.dataset)
    ks = _parse_k_list(args.k)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    for k in ks:
        acc = evaluate(model, data.test, k=k, mode=args.mode, rng=rng)
        _emit({"model": "gated", "k": k, "mode": args.mode, "accuracy": acc})
    if args.dense:
        if model.config.num_classes != 2:
            raise ConfigError("dense truncation evaluation supports binary models only")
        for k in ks:
            correct = 0
            for s in data.test:
                w = bl.topk_truncate(model.generate_weights(s.x), k)
                margin = float(np.asarray(s.z) @ w)
                correct += (1 if margin >= 0 else -1) == s.y
            _emit({"model": "dense_topk", "k": k, "accuracy": correct / len(data.test)})
    if args.baselines:
        if model.config.num_classes != 2:
            raise ConfigError("linear baselines support binary labels only")
        for name, fit in (("ridge", bl.ridge_fit), ("lasso", bl.lasso_fit)):
            grid = [a for a in (10.0**e for e in range(-4, 3)) if name == "ridge" or a > 0]
            linear, alpha = bl.select_alpha(fit, data.train, data.val, grid)
            for k in ks:
                _emit({
                    "model": name,
                    "k": k,
                    "accuracy": bl.topk_truncate_eval(linear.weights, data.test, k),
                    "alpha": alpha,
                })
    return 0


def _sample_from_file(path, data):
    """Build an unlabeled sample from a raw input file (text line or IDX image)."""
    if data.dataset.kind == "text":
        text = Path(path).read_text(encoding="utf-8").strip()
        tokens = [t for t in tokenize(text) if t not in STOPWORDS]
        vocab = data.dataset.vocab
        ids = np.array([vocab.id_of(t) for t in tokens], dtype=np.int64)
        z = np.zeros(data.dataset.d)
        if ids.size:
            np.add.at(z, ids, 1.0)
        z = (z > 0).astype(np.float64)
        return Sample(id=str(path), x=ids, z=z, y=1, m=(z == 0).astype(np.int64), tokens=tokens)
    if data.dataset.kind == "image":
        images = parse_idx(path)
        if images.ndim != 3:
            raise DataFormatError(f"{path}: expected an IDX image file")
        x = images[0].astype(np.float64) / 255.0
        return Sample(
            id=str(path), x=x[None], z=downsample_7x7(x), y=1,
            m=np.zeros(data.dataset.d, dtype=np.int64),
        )
    raise ConfigError(f"file-based samples are not supported for {data.dataset.kind!r} datasets")


def _locate_sample(args, data):
    wanted = args.sample
    if wanted is not None and Path(str(wanted)).is_file():
        return _sample_from_file(wanted, data)
    pool = data.all_samples
    if wanted is None:
        return pool[0]
    for s in pool:
        if str(s.id) == str(wanted):
            return s
    try:
        return pool[int(wanted)]
    except (ValueError, IndexError):
        raise ConfigError(f"sample {wanted!r} not found in the dataset") from None


def cmd_explain(args):
    model, _header = load_checkpoint(args.checkpoint)
    data = load_manifest(args.dataset)
    sample = _locate_sample(args, data)
    k = int(args.k) if args.k else model.config.k
    explanation = model.explain(sample, k=k, feature_names=data.dataset.feature_names)
    record = {
        "sample_id": explanation.sample_id,
        "prediction": explanation.prediction,
        "mode": explanation.mode,
        "k": k,
        "entries": [
            {"index": i, "name": n, "weight": w} for i, n, w in explanation.entries
        ],
    }
    _emit(record)
    if args.svg:
        if data.dataset.kind != "image":
            raise ConfigError("--svg is only available for image datasets")
        side = int(round(np.sqrt(model.config.d)))
        render_image_svg(sample.x[0], explanation.entries, side, args.svg)
        _emit({"event": "wrote", "path": str(args.svg)})
    if args.html:
        if data.dataset.kind != "text":
            raise ConfigError("--html is only available for text datasets")
        tokens = sample.tokens
        if tokens is None:
            tokens = [data.dataset.vocab.tokens[i] for i in np.asarray(sample.x, dtype=int)]
        render_text_html(tokens, data.dataset.vocab, explanation.entries, explanation.prediction, args.html)
        _emit({"event": "wrote", "path": str(args.html)})
    return 0


def cmd_bench(args):
    model, _header = load_checkpoint(args.checkpoint)
    data = load_manifest(args.dataset)
    pool = list(data.test) or data.all_samples
    if not pool:
        raise ConfigError("benchmark needs at least one sample")
    names = data.dataset.feature_names
    reps = int(args.reps)
    for k in _parse_k_list(args.k):
        usable = [s for s in pool if s.live_count >= k]
        if not usable:
            raise ConfigError(f"no sample has {k} unmasked features to benchmark")
        for i in range(min(10, reps)):  # warm-up draws are not measured
            model.explain(usable[i % len(usable)], k=k, feature_names=names)
        times = np.empty(reps)
        for i in range(reps):
            sample = usable[i % len(usable)]
            start = time.perf_counter()
            model.explain(sample, k=k, feature_names=names)
            times[i] = time.perf_counter() - start
        _emit({
            "k": k,
            "reps": reps,
            "mean_ms": float(times.mean() * 1e3),
            "sd_ms": float(times.std(ddof=1) * 1e3) if reps > 1 else 0.0,
        })
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sparselocal",
        description="Train, evaluate, and explain per-sample sparse linear models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run coarse-to-fine training from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--checkpoint", required=True)
    p_train.add_argument("--log", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="accuracy table over a list of gate counts")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--k", default="1,5,10")
    p_eval.add_argument("--mode", choices=["hard", "soft"], default="hard")
    p_eval.add_argument("--dense", action="store_true", help="also evaluate top-k truncated dense weights")
    p_eval.add_argument("--baselines", action="store_true", help="also fit and evaluate ridge and lasso")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_explain = sub.add_parser("explain", help="explanation record for one sample")
    p_explain.add_argument("--checkpoint", required=True)
    p_explain.add_argument("--dataset", required=True)
    p_explain.add_argument("--sample", default=None, help="sample id, integer index, or input file")
    p_explain.add_argument("--k", type=int, default=None)
    p_explain.add_argument("--svg", default=None)
    p_explain.add_argument("--html", default=None)
    p_explain.add_argument("--seed", type=int, default=None)
    p_explain.set_defaults(fn=cmd_explain)

    p_bench = sub.add_parser("bench", help="per-sample explanation latency")
    p_bench.add_argument("--checkpoint", required=True)
    p_bench.add_argument("--dataset", required=True)
    p_bench.add_argument("--k", default="1,5,10")
    p_bench.add_argument("--reps", type=int, default=100)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GateExhaustedError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
