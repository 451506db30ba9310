"""Training, evaluation, repeated-seed protocol, cross-domain grid and reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from stressanon.corpus import Manifest, Split, class_names, label_of
from stressanon.dsp import FeatureKind, FeatureMap, PreprocessConfig, extract_features, load_feature_map, silence_row
from stressanon.errors import ConfigError, DataError, StressAnonError, TrainingError
from stressanon.neural.model import Architecture, ModelConfig, Network, build_network
from stressanon.neural.optim import Adam
from stressanon.neural.tensor import softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 1
    early_stop_patience: int = 10
    max_frames: int = 300

    def __post_init__(self) -> None:
        for name in ("epochs", "batch_size", "early_stop_patience", "max_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class Dataset:
    features: np.ndarray  # (N, max_frames, coeffs)
    labels: np.ndarray
    class_names: tuple[str, ...]
    feature_kind: FeatureKind
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index: Sequence[int]) -> Dataset:
        index = np.asarray(index, dtype=np.int64)
        ids = tuple(self.ids[i] for i in index) if self.ids else ()
        return Dataset(self.features[index], self.labels[index], self.class_names, self.feature_kind, ids)


def fit_frames(values: np.ndarray, max_frames: int, pad_row: np.ndarray) -> np.ndarray:
    """Centre-crop or pad (with ``pad_row``) a frames x coeffs matrix to ``max_frames``."""
    n = values.shape[0]
    if n >= max_frames:
        start = (n - max_frames) // 2
        return values[start:start + max_frames]
    out = np.tile(pad_row, (max_frames, 1))
    out[:n] = values
    return out


def extract_manifest_features(manifest: Manifest, kind: FeatureKind | str,
                              cfg: PreprocessConfig) -> dict[str, FeatureMap]:
    return {u.id: extract_features(manifest.load_audio(u), kind, cfg) for u in manifest.utterances}


def load_manifest_features(manifest: Manifest) -> dict[str, FeatureMap]:
    """Read the feature files referenced by the ``feature_path`` field of each utterance."""
    out = {}
    for u in manifest.utterances:
        rel = u.extra.get("feature_path")
        if rel is None:
            raise DataError(f"utterance {u.id} has no feature_path; run the features step first")
        path = Path(rel)
        if not path.is_absolute() and manifest.base_dir is not None:
            path = manifest.base_dir / path
        out[u.id] = load_feature_map(path)
    return out


def build_dataset(manifest: Manifest, features: Mapping[str, FeatureMap], by: str = "stress",
                  max_frames: int = 300, preprocess: PreprocessConfig | None = None,
                  classes: Sequence[str] | None = None) -> Dataset:
    classes = tuple(classes or class_names(by))
    preprocess = preprocess or PreprocessConfig()
    rows, labels, ids = [], [], []
    kind = None
    for u in manifest.utterances:
        if u.id not in features:
            raise DataError(f"no features for utterance {u.id}")
        fm = features[u.id]
        if kind is None:
            kind = fm.kind
        elif fm.kind is not kind:
            raise ConfigError("manifest mixes LMS and MFCC features")
        lab = label_of(u, by)
        if lab not in classes:
            raise ConfigError(f"utterance {u.id} label {lab!r} is not one of {classes}")
        pad = silence_row(fm.kind, preprocess)
        if pad.size != fm.coeffs:
            pad = np.full(fm.coeffs, fm.values.min())
        rows.append(fit_frames(fm.values, max_frames, pad))
        labels.append(classes.index(lab))
        ids.append(u.id)
    if not rows:
        raise DataError("empty dataset")
    return Dataset(np.stack(rows), np.asarray(labels, dtype=np.int64), classes, kind, tuple(ids))


# -- training -------------------------------------------------------------

@dataclass
class TrainResult:
    network: Network
    history: list[dict[str, float]]
    best_epoch: int
    best_val_accuracy: float


def _accuracy(network: Network, data: Dataset) -> float:
    return float(np.mean(network.predict(data.features) == data.labels))


def train(network: Network, train_set: Dataset, val_set: Dataset, cfg: TrainConfig) -> TrainResult:
    """Mini-batch Adam training that keeps the best-validation-accuracy parameters.

    Input normalisation statistics come from the training features. Shuffling
    is driven by ``cfg.seed`` so identical inputs give identical runs; ties in
    validation accuracy keep the earliest epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("train and validation splits must be non-empty")
    if network.config.n_classes != len(train_set.class_names):
        raise ConfigError(f"{network.config.n_classes}-class network for {len(train_set.class_names)} classes")
    flat = train_set.features.reshape(-1, train_set.features.shape[-1])
    network.set_input_normalization(flat.mean(axis=0), flat.std(axis=0))
    network.train()
    opt = Adam(network.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2)
    rng = np.random.default_rng(cfg.seed)

    history: list[dict[str, float]] = []
    best_state = {k: v.copy() for k, v in network.state().items()}
    best_epoch, best_val, stale = 0, -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        network.train()
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss = softmax_cross_entropy(network(train_set.features[batch]), train_set.labels[batch])
            if not math.isfinite(float(loss.data)):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data) * len(batch))
        train_acc = _accuracy(network, train_set)
        val_acc = _accuracy(network, val_set)
        history.append({"epoch": epoch, "loss": sum(losses) / len(train_set),
                        "train_accuracy": train_acc, "val_accuracy": val_acc})
        log.debug("epoch %d loss %.4f train %.3f val %.3f", epoch, history[-1]["loss"], train_acc, val_acc)
        if val_acc > best_val:
            best_val, best_epoch, stale = val_acc, epoch, 0
            best_state = {k: v.copy() for k, v in network.state().items()}
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    network.load_state(best_state)
    network.eval()
    return TrainResult(network, history, best_epoch, best_val)


# -- evaluation -----------------------------------------------------------

@dataclass
class Metrics:
    confusion: np.ndarray  # rows = true class, columns = predicted
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.confusion))

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def exact_accuracy(self) -> Fraction:
        return Fraction(self.correct, self.total) if self.total else Fraction(0)

    def to_dict(self) -> dict[str, Any]:
        return {"accuracy": self.accuracy, "class_names": list(self.class_names),
                "confusion": self.confusion.tolist()}


def confusion_matrix(true: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def evaluate(network: Network | Callable[[np.ndarray], np.ndarray], data: Dataset) -> Metrics:
    """Argmax predictions on ``data``; ``network`` may also be any batch predictor."""
    k = len(data.class_names)
    if isinstance(network, Network):
        if network.config.n_classes != k:
            raise ConfigError(f"{network.config.n_classes}-class model evaluated on {k}-class data")
        if network.class_names and tuple(network.class_names) != tuple(data.class_names):
            raise ConfigError(f"model classes {network.class_names} differ from data classes {data.class_names}")
        pred = network.predict(data.features)
    else:
        pred = np.asarray(network(data.features))
    return Metrics(confusion_matrix(data.labels, pred, k), tuple(data.class_names))


# -- repeated runs --------------------------------------------------------

@dataclass
class RunSummary:
    seeds: list[int]
    accuracies: list[float]
    failed: dict[int, str] = field(default_factory=dict)
    metrics: list[Metrics] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.accuracies) if self.accuracies else float("nan")

    @property
    def std(self) -> float | None:
        """Population standard deviation; ``None`` when fewer than two runs succeeded."""
        if len(self.accuracies) < 2:
            return None
        return statistics.pstdev(self.accuracies)

    @property
    def std_defined(self) -> bool:
        return self.std is not None

    def formatted(self) -> str:
        return format_accuracy(self.mean, self.std)


def format_accuracy(mean: float, std: float | None) -> str:
    """Percent with one decimal, standard deviation in brackets: ``93.6% [0.003]``."""
    bracket = "n/a" if std is None else f"{std:.3f}"
    return f"{100.0 * mean:.1f}% [{bracket}]"


def repeat_runs(run: Callable[[int], Metrics], seeds: Iterable[int] = (1, 2, 3)) -> RunSummary:
    """Call ``run(seed)`` once per seed and aggregate test accuracies.

    A run raising a package error is recorded in ``failed`` and left out of
    the statistics.
    """
    summary = RunSummary(list(seeds), [])
    if not summary.seeds:
        raise ConfigError("repeat_runs needs at least one seed")
    for seed in summary.seeds:
        try:
            metrics = run(seed)
        except StressAnonError as exc:
            log.warning("run with seed %d failed: %s", seed, exc)
            summary.failed[seed] = str(exc)
            continue
        summary.metrics.append(metrics)
        summary.accuracies.append(metrics.accuracy)
    return summary


@dataclass
class ExperimentSpec:
    architecture: Architecture
    model: ModelConfig
    train: TrainConfig
    train_set: Dataset
    val_set: Dataset
    test_set: Dataset

    def run(self, seed: int) -> tuple[Metrics, TrainResult]:
        cfg = ModelConfig.from_dict({**self.model.to_dict(), "seed": seed,
                                     "n_classes": len(self.train_set.class_names)})
        net = build_network(self.architecture, self.train_set.feature_kind, cfg,
                            self.train_set.features.shape[-1], self.train_set.class_names)
        tcfg = TrainConfig(**{**self.train.__dict__, "seed": seed})
        result = train(net, self.train_set, self.val_set, tcfg)
        return evaluate(result.network, self.test_set), result


# -- cross-domain ---------------------------------------------------------

@dataclass
class CrossDomainRow:
    trained_on: str
    tested_on: str
    metrics: Metrics


def cross_domain(network: Network, test_set: Dataset) -> Metrics:
    """Evaluate a model trained on one corpus on another corpus' test split."""
    if network.feature_kind is not test_set.feature_kind:
        raise ConfigError(f"model uses {network.feature_kind.value}, test data {test_set.feature_kind.value}")
    if network.n_coeffs != test_set.features.shape[-1]:
        raise ConfigError(f"model expects {network.n_coeffs} coefficients, test data has {test_set.features.shape[-1]}")
    return evaluate(network, test_set)


def _tag(name: str, anonymized: bool) -> str:
    return f"{name} (A)" if anonymized else name


def cross_domain_grid(models: Mapping[bool, Network], source_tests: Mapping[bool, Dataset],
                      target_tests: Mapping[bool, Dataset], source: str = "SUSAS",
                      target: str = "DFS-MAS") -> list[CrossDomainRow]:
    """Six evaluations keyed by anonymisation flag, in the order
    raw->anon and anon->raw within the source corpus, then
    raw/anon source models on the raw target, then on the anonymized target."""
    cells = [
        (False, source_tests, True, source),
        (True, source_tests, False, source),
        (False, target_tests, False, target),
        (True, target_tests, False, target),
        (False, target_tests, True, target),
        (True, target_tests, True, target),
    ]
    rows = []
    for train_anon, tests, test_anon, test_name in cells:
        rows.append(CrossDomainRow(_tag(source, train_anon), _tag(test_name, test_anon),
                                   cross_domain(models[train_anon], tests[test_anon])))
    return rows


# -- reporting ------------------------------------------------------------

METRICS_KEYS = ("task", "corpus", "feature_kind", "architecture", "anonymized_train", "anonymized_test",
                "seeds", "accuracies", "mean", "std", "confusion_csv_path", "checkpoint_path")


def write_confusion_csv(metrics: Metrics, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["true\\pred", *metrics.class_names])
        for name, row in zip(metrics.class_names, metrics.confusion.tolist()):
            writer.writerow([name, *row])


def metrics_record(summary: RunSummary, *, task: str, corpus: str, feature_kind: str, architecture: str,
                   anonymized_train: bool = False, anonymized_test: bool = False,
                   confusion_csv_path: str | None = None, checkpoint_path: str | None = None) -> dict[str, Any]:
    return {
        "task": task,
        "corpus": corpus,
        "feature_kind": feature_kind,
        "architecture": architecture,
        "anonymized_train": anonymized_train,
        "anonymized_test": anonymized_test,
        "seeds": list(summary.seeds),
        "accuracies": [round(a, 6) for a in summary.accuracies],
        "mean": round(summary.mean, 6),
        "std": None if summary.std is None else round(summary.std, 6),
        "std_kind": "population",
        "failed_seeds": {str(k): v for k, v in summary.failed.items()},
        "confusion_csv_path": confusion_csv_path,
        "checkpoint_path": checkpoint_path,
    }


def write_metrics_json(record: Mapping[str, Any], path: str | Path) -> None:
    missing = [k for k in METRICS_KEYS if k not in record]
    if missing:
        raise ConfigError(f"metrics record lacks {missing}")
    Path(path).write_text(json.dumps(dict(record), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def render_accuracy_table(records: Sequence[Mapping[str, Any]]) -> str:
    """One line per record: anonymised flag, feature, architecture, formatted accuracy."""
    if not records:
        raise ConfigError("no metrics to report")
    lines = ["anonymized\tfeature\tarchitecture\ttask\tcorpus\taccuracy"]
    for r in records:
        lines.append("\t".join([
            "yes" if r.get("anonymized_train") else "no", str(r["feature_kind"]), str(r["architecture"]),
            str(r["task"]), str(r["corpus"]), format_accuracy(r["mean"], r.get("std")),
        ]))
    return "\n".join(lines)


def render_cross_domain(rows: Sequence[CrossDomainRow]) -> str:
    if not rows:
        raise ConfigError("no cross-domain rows to report")
    lines = ["trained_on\ttested_on\taccuracy"]
    lines += [f"{r.trained_on}\t{r.tested_on}\t{100.0 * r.metrics.accuracy:.1f}%" for r in rows]
    return "\n".join(lines)


def report(records: Sequence[Mapping[str, Any]], out_dir: str | Path) -> dict[str, Path]:
    """Write ``summary.json`` and ``summary.tsv`` for a list of metrics records."""
    if not records:
        raise ConfigError("no metrics to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_json = out_dir / "summary.json"
    summary_tsv = out_dir / "summary.tsv"
    summary_json.write_text(json.dumps(list(records), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    summary_tsv.write_text(render_accuracy_table(records) + "\n", encoding="utf-8")
    return {"json": summary_json, "tsv": summary_tsv}


def splits_of(manifest: Manifest) -> dict[Split, Manifest]:
    return {s: manifest.in_split(s) for s in Split}
