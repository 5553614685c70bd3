"""Command line entry points: ``fit``, ``stream`` and ``synth-bench``.

Every command takes ``--config`` (a JSON file), ``--out`` (a directory it
owns) and an optional ``--seed`` override. The resolved configuration, with
every default spelled out, is embedded in each report so a run can be
replayed from its report alone.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .clustering import PbcConfig, run_pbc
from .core import Dataset, InvalidInputError, PbcError, dataset_loss
from .datagen import (
    SyntheticConfig,
    generate_synthetic,
    kmeans_baseline,
    misclassification_rate,
    per_cluster_misclassification,
)
from .ensemble import model_outputs, stream_evaluate
from .learners import RegressorSpec, TrainedModel, fit, predict_many
from .pipeline import (
    FeatureSpec,
    NormalizationParams,
    load_series_csv,
    load_wide_csv,
    make_batches,
    prepare_series,
    temporal_split,
)

log = logging.getLogger("perfclust")

BUNDLE_FORMAT = "perfclust-model-bundle"
BUNDLE_VERSION = 1


@dataclass(frozen=True)
class DataConfig:
    path: Optional[str] = None
    format: str = "wide"
    series_id: Optional[str] = None
    features: FeatureSpec = field(default_factory=FeatureSpec)
    normalize: bool = True
    split: Optional[tuple] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if isinstance(self.features, dict):
            object.__setattr__(self, "features", FeatureSpec(**self.features))
        if self.split is not None:
            object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if self.format not in ("wide", "series"):
            raise InvalidInputError(f"data.format must be 'wide' or 'series', got {self.format!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = self.features.to_dict()
        d["split"] = list(self.split) if self.split is not None else None
        return d


@dataclass(frozen=True)
class StreamConfig:
    batch_size: int = 200
    # a list is searched on the validation split; the best value is used on test
    learning_rate: Union[float, tuple] = 0.01
    project_to_simplex: bool = False
    path: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.learning_rate, (list, tuple)):
            object.__setattr__(self, "learning_rate", tuple(float(a) for a in self.learning_rate))
        if self.batch_size < 1:
            raise InvalidInputError("stream.batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.learning_rate, tuple):
            d["learning_rate"] = list(self.learning_rate)
        return d


@dataclass(frozen=True)
class BenchConfig:
    replicates: int = 25
    k_hats: tuple = (3, 5)
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "k_hats", tuple(int(k) for k in self.k_hats))

    def to_dict(self) -> dict:
        return {"replicates": self.replicates, "k_hats": list(self.k_hats), "jobs": self.jobs}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    pbc: PbcConfig = field(default_factory=PbcConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "RunConfig":
        known = {"seed", "data", "pbc", "stream", "synthetic", "bench"}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config section(s) {sorted(unknown)}")
        seed = int(d.get("seed", 0))
        data = DataConfig(**d.get("data", {}))
        stream = StreamConfig(**d.get("stream", {}))
        if base_dir is not None:
            data = replace(data, path=_resolve(base_dir, data.path))
            stream = replace(stream, path=_resolve(base_dir, stream.path))
        synthetic = dict(d.get("synthetic", {}))
        if "coefficient_range" in synthetic:
            synthetic["coefficient_range"] = tuple(synthetic["coefficient_range"])
        return cls(
            seed=seed,
            data=data,
            pbc=replace(PbcConfig.from_dict(d.get("pbc", {})), seed=seed),
            stream=stream,
            synthetic=replace(SyntheticConfig(**synthetic), seed=seed),
            bench=BenchConfig(**d.get("bench", {})),
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            seed=seed,
            pbc=replace(self.pbc, seed=seed),
            synthetic=replace(self.synthetic, seed=seed),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "data": self.data.to_dict(),
            "pbc": self.pbc.to_dict(),
            "stream": self.stream.to_dict(),
            "synthetic": self.synthetic.to_dict(),
            "bench": self.bench.to_dict(),
        }


def _resolve(base_dir: Path, path: Optional[str]) -> Optional[str]:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else (base_dir / p).resolve())


def load_config(path, seed: Optional[int] = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidInputError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config file {path} is not valid JSON: {exc}") from None
    try:
        cfg = RunConfig.from_dict(raw, base_dir=path.parent)
    except TypeError as exc:
        raise InvalidInputError(f"bad config {path}: {exc}") from None
    return cfg.with_seed(seed) if seed is not None else cfg


# ---------------------------------------------------------------- persistence

def model_to_dict(model: TrainedModel) -> dict:
    return {
        "spec": model.spec.to_dict(),
        "dimension": model.dimension,
        "parameters": model.parameters.tolist(),
    }


def model_from_dict(d: dict) -> TrainedModel:
    return TrainedModel(RegressorSpec.from_dict(d["spec"]), np.array(d["parameters"], dtype=float), int(d["dimension"]))


def save_bundle(path, models, dimension: int, baseline: Optional[TrainedModel] = None,
                features: Optional[FeatureSpec] = None,
                normalization: Optional[NormalizationParams] = None) -> None:
    bundle = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "dimension": dimension,
        "models": [model_to_dict(m) for m in models],
        "baseline": model_to_dict(baseline) if baseline is not None else None,
        "features": features.to_dict() if features is not None else None,
        "normalization": normalization.to_dict() if normalization is not None else None,
    }
    Path(path).write_text(json.dumps(bundle, indent=1) + "\n", encoding="utf-8")


def load_bundle(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"model bundle {path} not found")
    raw = json.loads(path.read_text(encoding="utf-8"))
    if raw.get("format") != BUNDLE_FORMAT or raw.get("version") != BUNDLE_VERSION:
        raise InvalidInputError(
            f"{path}: unsupported bundle (format={raw.get('format')!r}, version={raw.get('version')!r})"
        )
    models = [model_from_dict(m) for m in raw["models"]]
    if any(m.dimension != raw["dimension"] for m in models):
        raise InvalidInputError(f"{path}: model dimensions disagree with the bundle")
    return {
        "dimension": raw["dimension"],
        "models": models,
        "baseline": model_from_dict(raw["baseline"]) if raw.get("baseline") else None,
        "features": FeatureSpec(**raw["features"]) if raw.get("features") else None,
        "normalization": NormalizationParams(**raw["normalization"]) if raw.get("normalization") else None,
    }


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def write_jsonl(path, records) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path) -> list:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------- data access

@dataclass
class Splits:
    train: Dataset
    validation: Optional[Dataset]
    test: Optional[Dataset]
    labels: Optional[np.ndarray] = None  # ground truth for the training rows
    normalization: Optional[NormalizationParams] = None


def load_splits(data: DataConfig, normalization: Optional[NormalizationParams] = None) -> Splits:
    if data.path is None:
        raise InvalidInputError("data.path is required")
    if data.format == "series":
        frames = load_series_csv(data.path)
        if data.series_id is None and len(frames) != 1:
            raise InvalidInputError(f"{data.path} holds {len(frames)} series; set data.series_id")
        series = frames[data.series_id] if data.series_id is not None else next(iter(frames.values()))
        if data.split is None:
            raise InvalidInputError("series data needs data.split")
        prep = prepare_series(series, data.features, data.split,
                              normalize=data.normalize, params=normalization)
        return Splits(prep.train, prep.validation, prep.test, None, prep.normalization)
    dataset, labels = load_wide_csv(data.path)
    if data.split is None:
        return Splits(dataset, None, None, labels)
    train, val, test = temporal_split(dataset, data.split)
    return Splits(train, val, test, labels[: len(train)] if labels is not None else None)


# ---------------------------------------------------------------- commands

def cmd_fit(cfg: RunConfig, out) -> dict:
    """Cluster the training data and write ``models.json`` plus the fit report."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    splits = load_splits(cfg.data)
    result = run_pbc(splits.train, cfg.pbc)
    baseline = fit(cfg.pbc.regressor, splits.train)
    baseline_loss = dataset_loss(splits.train, np.zeros(len(splits.train), dtype=np.int64), [baseline], cfg.pbc.loss)
    save_bundle(out / "models.json", result.models, splits.train.dimension, baseline,
                cfg.data.features if cfg.data.format == "series" else None, splits.normalization)
    history = [
        {"iteration": m + 1, "loss": loss, "reassigned": frac, "reseeded": rs}
        for m, (loss, frac, rs) in enumerate(zip(result.loss_history, result.reassignment_history, result.reseeded))
    ]
    write_jsonl(out / "fit_history.jsonl", history)
    report = {
        "command": "fit",
        "version": __version__,
        "config": cfg.to_dict(),
        "n_train": len(splits.train),
        "converged": result.converged,
        "iterations": result.iterations,
        "final_loss": result.final_loss,
        "baseline_loss": baseline_loss,
        "loss_history": result.loss_history,
        "reassignment_history": result.reassignment_history,
        "cluster_sizes": result.cluster_sizes(),
        "assignment": result.assignment.tolist(),
        "models": [model_to_dict(m) for m in result.models],
    }
    if splits.labels is not None:
        report["misclassification"] = misclassification_rate(result.assignment, splits.labels)
    report["duration_s"] = time.perf_counter() - start
    write_json(out / "fit_report.json", report)
    return report


def _mse(pred, y) -> float:
    return float(np.mean((np.asarray(pred) - y) ** 2))


def cmd_stream(cfg: RunConfig, out, bundle_path=None) -> dict:
    """Replay the test data in batches through the weighted ensemble."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    bundle = load_bundle(bundle_path or out / "models.json")
    models = bundle["models"]
    if cfg.stream.path is not None:
        stream_data, _ = load_wide_csv(cfg.stream.path)
        validation = None
    else:
        splits = load_splits(cfg.data, normalization=bundle["normalization"])
        if splits.test is None:
            raise InvalidInputError("stream needs data.split or stream.path")
        stream_data, validation = splits.test, splits.validation
    if stream_data.dimension != bundle["dimension"]:
        raise InvalidInputError(
            f"stream data has {stream_data.dimension} features but the bundle expects {bundle['dimension']}"
        )

    rates = cfg.stream.learning_rate
    selection = None
    if isinstance(rates, tuple):
        if validation is None or len(validation) == 0:
            raise InvalidInputError("a learning-rate list needs a validation split")
        val_batches = make_batches(validation, cfg.stream.batch_size)
        scores = []
        for a in rates:
            with np.errstate(all="ignore"):
                try:
                    mse = stream_evaluate(models, val_batches, a, cfg.stream.project_to_simplex).mse
                except PbcError:
                    mse = float("inf")
            scores.append(mse if np.isfinite(mse) else float("inf"))
        learning_rate = rates[int(np.argmin(scores))]
        selection = {"candidates": list(rates), "validation_mse": scores, "chosen": learning_rate}
    else:
        learning_rate = rates

    batches = make_batches(stream_data, cfg.stream.batch_size)
    result = stream_evaluate(models, batches, learning_rate, cfg.stream.project_to_simplex)
    write_jsonl(out / "trajectory.jsonl", [e.to_dict() for e in result.trajectory])

    static = model_outputs(models, stream_data.X)
    static_mse = [_mse(static[:, k], stream_data.y) for k in range(len(models))]
    report = {
        "command": "stream",
        "version": __version__,
        "config": cfg.to_dict(),
        "learning_rate": learning_rate,
        "learning_rate_selection": selection,
        "n_points": len(stream_data),
        "n_batches": len(batches),
        "ensemble_mse": result.mse,
        "batch_losses": result.batch_losses,
        "final_weights": result.final_state.weights.tolist(),
        "static_model_mse": static_mse,
        "baseline_mse": _mse(predict_many(bundle["baseline"], stream_data.X), stream_data.y)
        if bundle["baseline"] is not None else None,
    }
    report["duration_s"] = time.perf_counter() - start
    write_json(out / "stream_report.json", report)
    return report


def _bench_replicate(args) -> dict:
    cfg, replicate = args
    data = generate_synthetic(replace(cfg.synthetic, seed=cfg.seed + replicate))
    record = {"replicate": replicate, "seed": cfg.seed + replicate, "pbc": {}, "kmeans": {}, "curves": []}
    for k in cfg.bench.k_hats:
        pbc_cfg = replace(cfg.pbc, k_hat=k, seed=cfg.seed + replicate)
        result = run_pbc(data.dataset, pbc_cfg, record_history=True)
        record["pbc"][str(k)] = misclassification_rate(result.assignment, data.ground_truth)
        record["kmeans"][str(k)] = misclassification_rate(
            kmeans_baseline(data.dataset, k, cfg.seed + replicate), data.ground_truth
        )
        for m, labels in enumerate(result.assignment_history, start=1):
            record["curves"].append({
                "replicate": replicate,
                "k_hat": k,
                "iteration": m,
                "per_cluster": per_cluster_misclassification(labels, data.ground_truth, k),
                "overall": misclassification_rate(labels, data.ground_truth),
            })
    return record


def cmd_synth_bench(cfg: RunConfig, out) -> dict:
    """Seeded replicates of synthetic data scored for PBC and K-Means."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    jobs = [(cfg, r) for r in range(cfg.bench.replicates)]
    if cfg.bench.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.bench.jobs) as pool:
            records = list(pool.map(_bench_replicate, jobs))
    else:
        records = [_bench_replicate(j) for j in jobs]
    write_jsonl(out / "replicates.jsonl", [{k: v for k, v in r.items() if k != "curves"} for r in records])
    write_jsonl(out / "cluster_curves.jsonl", [c for r in records for c in r["curves"]])
    summary = {
        "command": "synth-bench",
        "version": __version__,
        "config": cfg.to_dict(),
        "mean_misclassification": {
            method: {str(k): float(np.mean([r[method][str(k)] for r in records])) for k in cfg.bench.k_hats}
            for method in ("pbc", "kmeans")
        },
    }
    summary["duration_s"] = time.perf_counter() - start
    write_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perfclust", description="Performance based clustering")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fit", "cluster training data and save a model bundle"),
        ("stream", "replay test batches through the weighted ensemble"),
        ("synth-bench", "synthetic misclassification benchmark"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        if name == "stream":
            p.add_argument("--bundle", default=None, help="model bundle (default: <out>/models.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        if args.command == "fit":
            r = cmd_fit(cfg, args.out)
            print(f"fit: {r['iterations']} iterations, converged={r['converged']}, "
                  f"loss={r['final_loss']:.6g}, baseline={r['baseline_loss']:.6g}, sizes={r['cluster_sizes']}")
        elif args.command == "stream":
            r = cmd_stream(cfg, args.out, args.bundle)
            base = r["baseline_mse"]
            print(f"stream: {r['n_batches']} batches, ensemble mse={r['ensemble_mse']:.6g}"
                  + (f", baseline mse={base:.6g}" if base is not None else ""))
        else:
            r = cmd_synth_bench(cfg, args.out)
            for method, by_k in r["mean_misclassification"].items():
                for k, v in by_k.items():
                    print(f"{method:7s} k_hat={k}: mean misclassification {100 * v:.2f}%")
    except (PbcError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
