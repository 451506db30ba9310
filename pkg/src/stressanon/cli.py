"""``stressanon`` command line: one subcommand per pipeline stage.

Every stage reads a manifest, writes its outputs under the workspace
directory and emits a derived manifest there. Settings come from an optional
JSON config file; command-line flags override it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

from stressanon.anonymize import GenderFactors, WsolaConfig, anonymize, profile_for
from stressanon.audio import write_wav
from stressanon.augment import AugmentationSpec, AugmentMethod, build_plan, execute_plan
from stressanon.corpus import (
    LABEL_AXES, Domain, Manifest, Split, class_names, label_of, read_manifest, split_manifest,
    synth_corpus, write_manifest,
)
from stressanon.dsp import FeatureKind, PreprocessConfig, WienerConfig, save_feature_map, extract_features
from stressanon.errors import (
    ConfigError, ManifestError, PlanError, PlanViolationError, SplitError, StressAnonError,
)
from stressanon.experiment import (
    ExperimentSpec, TrainConfig, build_dataset, cross_domain_grid, format_accuracy, load_manifest_features,
    metrics_record, render_accuracy_table, render_cross_domain, report, repeat_runs, evaluate,
    write_confusion_csv, write_metrics_json, RunSummary,
)
from stressanon.neural.model import (
    REFERENCE_CONFIG, SMALL_CONFIG, Architecture, ModelConfig, load_checkpoint, parameter_table,
    save_checkpoint,
)

log = logging.getLogger("stressanon")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
USAGE_ERRORS = (ConfigError, ManifestError, PlanError, PlanViolationError, SplitError)


# -- configuration --------------------------------------------------------

def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


SCHEMA: dict[str, Any] = {
    "paths": {"workspace": None},
    "preprocess": {**{k: None for k in _fields(PreprocessConfig) - {"wiener"}},
                   "wiener": {k: None for k in _fields(WienerConfig)}},
    "anonymize": {"male": {"a": None}, "female": {"a": None}, "default": {"a": None},
                  "wsola": {k: None for k in _fields(WsolaConfig)}},
    "augment": {k: None for k in ("plan", "seed", "copies_per_method", "methods", "minority_class",
                                  "vtlp_warp_range", "vtlp_cutoff_fraction", "noise_snr_db")},
    "split": {k: None for k in ("seed", "by", "test_fraction", "val_fraction")},
    "synth": {k: None for k in ("classes", "axis", "seed", "sample_rate_hz", "duration_s", "corpus",
                                "domain", "f0_scale")},
    "model": {"preset": None, **{k: None for k in _fields(ModelConfig) - {"seed", "n_classes"}}},
    "train": {k: None for k in _fields(TrainConfig) - {"seed"}},
    "experiment": {k: None for k in ("seeds", "architecture", "by", "task", "corpus")},
}


def _check_keys(data: Mapping[str, Any], schema: Mapping[str, Any], where: str) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if key not in schema:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(schema[key], dict):
            _check_keys(value, schema[key], path)


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Read and validate a JSON run configuration; ``None`` gives an empty one."""
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    _check_keys(data, SCHEMA, "")
    return data


def _pick(flag: Any, cfg: Mapping[str, Any], section: str, key: str, default: Any = None) -> Any:
    """Flag value if given, else the config entry, else ``default``."""
    if flag is not None:
        return flag
    return cfg.get(section, {}).get(key, default)


def preprocess_config(cfg: Mapping[str, Any]) -> PreprocessConfig:
    return PreprocessConfig(**cfg.get("preprocess", {}))


def gender_factors(cfg: Mapping[str, Any]) -> GenderFactors:
    sec = cfg.get("anonymize", {})
    values = {g: sec[g]["a"] for g in ("male", "female", "default") if g in sec and "a" in sec[g]}
    return GenderFactors(**values)


def model_config(cfg: Mapping[str, Any], preset: str | None = None) -> ModelConfig:
    sec = dict(cfg.get("model", {}))
    preset = preset or sec.pop("preset", "small")
    sec.pop("preset", None)
    presets = {"small": SMALL_CONFIG, "reference": REFERENCE_CONFIG}
    if preset not in presets:
        raise ConfigError(f"unknown model preset {preset!r}; expected one of {sorted(presets)}")
    return ModelConfig.from_dict({**presets[preset].to_dict(), **sec})


def train_config(cfg: Mapping[str, Any], args: argparse.Namespace) -> TrainConfig:
    values = dict(cfg.get("train", {}))
    for name in ("epochs", "batch_size", "learning_rate", "early_stop_patience", "max_frames"):
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return TrainConfig(**values)


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


_CLASS_ALIASES = {"nostress": "no_stress", "no-stress": "no_stress"}


def parse_classes(text: str | Mapping[str, int]) -> dict[str, int]:
    """``stress:200,no_stress:200`` -> {"stress": 200, "no_stress": 200}."""
    if isinstance(text, Mapping):
        return {_CLASS_ALIASES.get(k, k): int(v) for k, v in text.items()}
    out: dict[str, int] = {}
    for part in text.split(","):
        name, sep, count = part.partition(":")
        if not sep or not name.strip():
            raise ConfigError(f"bad class spec {part!r}; expected name:count")
        try:
            out[_CLASS_ALIASES.get(name.strip(), name.strip())] = int(count)
        except ValueError as exc:
            raise ConfigError(f"bad count in {part!r}") from exc
    return out


# -- workspace helpers ----------------------------------------------------

def workspace(args: argparse.Namespace, cfg: Mapping[str, Any]) -> Path:
    ws = Path(_pick(args.workspace, cfg, "paths", "workspace", "workspace"))
    ws.mkdir(parents=True, exist_ok=True)
    return ws


def _stem(path: str | Path) -> str:
    name = Path(path).name
    return name[:-len(".jsonl")] if name.endswith(".jsonl") else Path(path).stem


def _rel(path: Path, start: Path) -> str:
    return Path(os.path.relpath(path.resolve(), start.resolve())).as_posix()


def save_manifest(manifest: Manifest, path: Path) -> Path:
    """Write ``manifest`` with relative paths rebased onto the directory of ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    base = manifest.base_dir
    rebased = []
    for u in manifest.utterances:
        changes: dict[str, Any] = {}
        if base is not None and not Path(u.audio_path).is_absolute():
            changes["audio_path"] = _rel(base / u.audio_path, path.parent)
        fp = u.extra.get("feature_path")
        if fp is not None and base is not None and not Path(fp).is_absolute():
            changes["extra"] = {**u.extra, "feature_path": _rel(base / fp, path.parent)}
        rebased.append(u.replace(**changes) if changes else u)
    write_manifest(Manifest(tuple(rebased), manifest.metadata, path.parent), path)
    return path


def _open_manifest(path: str) -> Manifest:
    try:
        return read_manifest(path)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


def _out_manifest(args: argparse.Namespace, ws: Path, default_name: str) -> Path:
    return Path(args.out) if getattr(args, "out", None) else ws / default_name


# -- subcommands ----------------------------------------------------------

def cmd_synth(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    classes = _pick(args.classes, cfg, "synth", "classes")
    if classes is None:
        raise ConfigError("--classes is required (e.g. stress:200,no_stress:200)")
    corpus = _pick(args.corpus, cfg, "synth", "corpus", "synth")
    manifest = synth_corpus(
        parse_classes(classes), ws,
        axis=_pick(args.axis, cfg, "synth", "axis", "stress"),
        sample_rate_hz=int(_pick(args.sample_rate, cfg, "synth", "sample_rate_hz", 8000)),
        seed=int(_pick(args.seed, cfg, "synth", "seed", 0)),
        corpus=corpus,
        domain=_pick(args.domain, cfg, "synth", "domain", Domain.SYNTHETIC.value),
        f0_scale=float(_pick(args.f0_scale, cfg, "synth", "f0_scale", 1.0)),
        duration_s=float(_pick(args.duration, cfg, "synth", "duration_s", 1.0)),
    )
    out = save_manifest(manifest, _out_manifest(args, ws, f"{corpus}.jsonl"))
    print(out)
    return EXIT_OK


def cmd_split(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    manifest = _open_manifest(args.manifest)
    by = _pick(args.by, cfg, "split", "by", "stress")
    out_manifest = split_manifest(
        manifest, seed=int(_pick(args.seed, cfg, "split", "seed", 0)), by=by,
        test_fraction=float(cfg.get("split", {}).get("test_fraction", 0.2)),
        val_fraction=float(cfg.get("split", {}).get("val_fraction", 0.2)))
    out = save_manifest(out_manifest, _out_manifest(args, ws, f"{_stem(args.manifest)}.split.jsonl"))
    for name in class_names(by):
        row = [sum(1 for u in out_manifest if label_of(u, by) == name and u.split is s) for s in
               (Split.TRAIN, Split.VAL, Split.TEST)]
        if sum(row):
            print(f"{name}\t" + "\t".join(str(c) for c in row))
    print(out)
    return EXIT_OK


def cmd_anonymize(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    manifest = _open_manifest(args.manifest)
    factors = gender_factors(cfg)
    wsola = WsolaConfig(**cfg.get("anonymize", {}).get("wsola", {}))
    corpus = str(manifest.metadata.get("corpus", "corpus"))
    audio_dir = ws / f"{corpus}_anon"
    failures: list[str] = []
    out_utts = []
    for utt in manifest.utterances:
        try:
            clip = manifest.load_audio(utt)
        except (OSError, StressAnonError) as exc:
            failures.append(f"{utt.id}: {exc}")
            continue
        profile = profile_for(utt.gender, factors, wsola)
        rel = Path(f"{corpus}_anon") / f"{utt.id}.wav"
        audio_dir.mkdir(parents=True, exist_ok=True)
        write_wav(anonymize(clip, profile), ws / rel)
        out_utts.append(utt.replace(audio_path=rel.as_posix(), anonymized=True,
                                    extra={**utt.extra, "anonymize_a": profile.stretch_factor_a}))
    for line in failures:
        print(line, file=sys.stderr)
    result = Manifest(tuple(out_utts), {**manifest.metadata, "anonymized": True}, ws)
    out = save_manifest(result, _out_manifest(args, ws, f"{_stem(args.manifest)}.anon.jsonl"))
    print(out)
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_augment(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    sec = cfg.get("augment", {})
    plan_name = _pick(args.plan, cfg, "augment", "plan", "table1")
    if plan_name != "table1":
        raise ConfigError(f"unknown augmentation plan {plan_name!r}")
    manifest = _open_manifest(args.manifest)
    by = "stress"
    counts: dict[str, list[int]] = {}
    for name in class_names(by):
        row = [sum(1 for u in manifest if label_of(u, by) == name and u.split is s)
               for s in (Split.TRAIN, Split.VAL, Split.TEST)]
        counts[name] = row
    methods = [AugmentMethod(m) for m in sec.get("methods", ("vtlp", "white_noise"))]
    plan = build_plan(counts, _pick(args.minority, cfg, "augment", "minority_class"),
                      int(sec.get("copies_per_method", 5)), methods)
    spec_args = {k: sec[k] for k in ("vtlp_cutoff_fraction", "noise_snr_db") if k in sec}
    if "vtlp_warp_range" in sec:
        spec_args["vtlp_warp_range"] = tuple(sec["vtlp_warp_range"])
    specs = {m: AugmentationSpec(method=m, **spec_args) for m in methods}
    result = execute_plan(manifest, plan, specs, seed=int(_pick(args.seed, cfg, "augment", "seed", 0)),
                          out_dir=ws, by=by, preprocess=preprocess_config(cfg))
    print(plan.render())
    out = save_manifest(result, _out_manifest(args, ws, f"{_stem(args.manifest)}.aug.jsonl"))
    print(out)
    return EXIT_OK


def cmd_features(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    kind = FeatureKind(args.kind)
    pcfg = preprocess_config(cfg)
    manifest = _open_manifest(args.manifest)
    feat_dir = Path("features") / _stem(args.manifest) / kind.value
    (ws / feat_dir).mkdir(parents=True, exist_ok=True)
    failures: list[str] = []
    out_utts = []
    for utt in manifest.utterances:
        try:
            fm = extract_features(manifest.load_audio(utt), kind, pcfg)
        except (OSError, StressAnonError) as exc:
            failures.append(f"{utt.id}: {exc}")
            continue
        rel = feat_dir / f"{utt.id}.safm"
        save_feature_map(fm, ws / rel)
        audio = manifest.audio_file(utt)
        out_utts.append(utt.replace(audio_path=_rel(audio, ws) if not Path(utt.audio_path).is_absolute()
                                    else utt.audio_path,
                                    extra={**utt.extra, "feature_path": rel.as_posix(),
                                           "feature_kind": kind.value}))
    for line in failures:
        print(line, file=sys.stderr)
    result = Manifest(tuple(out_utts), {**manifest.metadata, "feature_kind": kind.value,
                                        "preprocess_digest": pcfg.digest().hex()}, ws)
    out = save_manifest(result, _out_manifest(args, ws, f"{_stem(args.manifest)}.{kind.value}.jsonl"))
    print(out)
    return EXIT_RUNTIME if failures else EXIT_OK


def _datasets(manifest: Manifest, by: str, max_frames: int, pcfg: PreprocessConfig,
              classes: Sequence[str] | None = None):
    feats = load_manifest_features(manifest)
    out = {}
    for split in Split:
        part = manifest.in_split(split)
        if len(part):
            out[split] = build_dataset(part, feats, by, max_frames, pcfg, classes)
    return out


def _run_dir(ws: Path, args: argparse.Namespace, arch: Architecture, manifest_path: str) -> Path:
    tag = args.tag or f"{_stem(manifest_path)}.{arch.value}"
    d = ws / "runs" / tag
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_train(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    arch = Architecture(_pick(args.arch, cfg, "experiment", "architecture", "crnn_attention"))
    seeds = _pick(args.seeds, cfg, "experiment", "seeds", [1, 2, 3])
    by = _pick(args.by, cfg, "experiment", "by", "stress")
    tcfg = train_config(cfg, args)
    mcfg = model_config(cfg, args.preset)
    pcfg = preprocess_config(cfg)
    manifest = _open_manifest(args.manifest)
    data = _datasets(manifest, by, tcfg.max_frames, pcfg)
    for split in Split:
        if split not in data:
            raise ConfigError(f"manifest has no {split.value} split; run `split` first")
    spec = ExperimentSpec(arch, mcfg, tcfg, data[Split.TRAIN], data[Split.VAL], data[Split.TEST])
    run_dir = _run_dir(ws, args, arch, args.manifest)

    anonymized = bool(manifest.utterances) and all(u.anonymized for u in manifest.utterances)
    checkpoints: dict[int, Path] = {}
    confusions: dict[int, Path] = {}

    def run(seed: int):
        metrics, result = spec.run(seed)
        ckpt = run_dir / f"model_seed{seed}.ckpt"
        save_checkpoint(result.network, ckpt, {"seed": seed, "by": by, "best_epoch": result.best_epoch,
                                               "max_frames": tcfg.max_frames, "anonymized": anonymized})
        csv_path = run_dir / f"confusion_seed{seed}.csv"
        write_confusion_csv(metrics, csv_path)
        checkpoints[seed], confusions[seed] = ckpt, csv_path
        log.info("seed %d: test accuracy %.4f (best epoch %d)", seed, metrics.accuracy, result.best_epoch)
        return metrics

    summary = repeat_runs(run, seeds)
    best_seed = None
    if summary.accuracies:
        ok = [s for s in summary.seeds if s not in summary.failed]
        best_seed = ok[max(range(len(ok)), key=lambda i: (summary.accuracies[i], -i))]
    record = metrics_record(
        summary, task=_pick(None, cfg, "experiment", "task", by), corpus=_pick(None, cfg, "experiment", "corpus",
                                                                                str(manifest.metadata.get("corpus", ""))),
        feature_kind=spec.train_set.feature_kind.value, architecture=arch.value,
        anonymized_train=anonymized, anonymized_test=anonymized,
        confusion_csv_path=None if best_seed is None else _rel(confusions[best_seed], ws),
        checkpoint_path=None if best_seed is None else _rel(checkpoints[best_seed], ws))
    write_metrics_json(record, run_dir / "metrics.json")
    print(f"{arch.value}\t{spec.train_set.feature_kind.value}\t{format_accuracy(summary.mean, summary.std)}")
    print(run_dir / "metrics.json")
    return EXIT_RUNTIME if summary.failed or not summary.accuracies else EXIT_OK


def _load_model(path: str):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc


def _test_set(manifest_path: str, network, meta: Mapping[str, Any], cfg: Mapping[str, Any], split: str):
    by = meta.get("by", "stress")
    max_frames = int(meta.get("max_frames", 300))
    manifest = _open_manifest(manifest_path)
    axis = manifest.metadata.get("split_axis") or manifest.metadata.get("axis")
    if axis is not None and axis != by:
        raise ConfigError(f"{len(network.class_names)}-class {by} checkpoint cannot be evaluated on a {axis} manifest")
    if tuple(network.class_names) != tuple(class_names(by)):
        raise ConfigError(f"checkpoint classes {network.class_names} do not match the {by} label axis")
    manifest_classes = {label_of(u, by) for u in manifest}
    if None in manifest_classes:
        raise ConfigError(f"manifest {manifest_path} lacks {by} labels for a {len(network.class_names)}-class model")
    part = manifest.in_split(split) if split != "all" else manifest
    if not len(part):
        raise ConfigError(f"manifest {manifest_path} has no {split} utterances")
    feats = load_manifest_features(part)
    return build_dataset(part, feats, by, max_frames, preprocess_config(cfg), network.class_names)


def cmd_eval(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    network, meta = _load_model(args.checkpoint)
    by = meta.get("by", "stress")
    manifest = _open_manifest(args.manifest)
    data = _test_set(args.manifest, network, meta, cfg, args.split)
    metrics = evaluate(network, data)
    out_dir = ws / "eval" / (args.tag or f"{Path(args.checkpoint).stem}.{_stem(args.manifest)}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_confusion_csv(metrics, out_dir / "confusion.csv")
    summary = RunSummary([int(meta.get("seed", 0))], [metrics.accuracy], metrics=[metrics])
    anonymized = all(u.anonymized for u in manifest)
    record = metrics_record(summary, task=by, corpus=str(manifest.metadata.get("corpus", "")),
                            feature_kind=network.feature_kind.value, architecture=network.architecture.value,
                            anonymized_train=bool(meta.get("anonymized", False)),
                            anonymized_test=anonymized,
                            confusion_csv_path=_rel(out_dir / "confusion.csv", ws),
                            checkpoint_path=_rel(Path(args.checkpoint), ws))
    write_metrics_json(record, out_dir / "metrics.json")
    print(f"accuracy\t{100.0 * metrics.accuracy:.1f}%")
    print(out_dir / "metrics.json")
    return EXIT_OK


def cmd_crosseval(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    models, metas = {}, {}
    for flag, path in ((False, args.model), (True, args.model_anon)):
        models[flag], metas[flag] = _load_model(path)
    source_tests = {False: _test_set(args.source_test, models[False], metas[False], cfg, "test"),
                    True: _test_set(args.source_test_anon, models[False], metas[False], cfg, "test")}
    target_tests = {False: _test_set(args.target_test, models[False], metas[False], cfg, "test"),
                    True: _test_set(args.target_test_anon, models[False], metas[False], cfg, "test")}
    rows = cross_domain_grid(models, source_tests, target_tests, args.source_name, args.target_name)
    out_dir = ws / "crosseval" / (args.tag or "grid")
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, row in enumerate(rows, start=1):
        csv_path = out_dir / f"confusion_row{i}.csv"
        write_confusion_csv(row.metrics, csv_path)
        records.append({"row": i, "trained_on": row.trained_on, "tested_on": row.tested_on,
                        "accuracy": round(row.metrics.accuracy, 6), "confusion_csv_path": _rel(csv_path, ws)})
    (out_dir / "grid.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    text = render_cross_domain(rows)
    (out_dir / "grid.tsv").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_params(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    mcfg = model_config(cfg, args.preset or "reference")
    pcfg = preprocess_config(cfg)
    table = parameter_table(mcfg, pcfg.n_mels, pcfg.n_mfcc)
    lines = ["architecture\tfeature\tparameters"]
    for row in table:
        for kind in (FeatureKind.MFCC, FeatureKind.LMS):
            lines.append(f"{row['architecture']}\t{kind.value}\t{row[kind.value]}")
    by_arch = {r["architecture"]: r for r in table}
    deltas = {}
    for kind in (FeatureKind.MFCC, FeatureKind.LMS):
        k = kind.value
        deltas[k] = {
            "crnn_minus_cnn": by_arch["crnn"][k] - by_arch["cnn"][k],
            "crnn_attention_minus_crnn": by_arch["crnn_attention"][k] - by_arch["crnn"][k],
        }
    lms_minus_mfcc = {r["architecture"]: r["lms"] - r["mfcc"] for r in table}
    for k, d in deltas.items():
        lines.append(f"delta\t{k}\tcrnn-cnn={d['crnn_minus_cnn']}\tattention={d['crnn_attention_minus_crnn']}")
    text = "\n".join(lines)
    (ws / "params.json").write_text(json.dumps({"rows": table, "deltas": deltas, "lms_minus_mfcc": lms_minus_mfcc},
                                               indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _collect_metrics(paths: Sequence[str]) -> list[Path]:
    found: list[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            found.extend(sorted(p.rglob("metrics.json")))
        elif p.exists():
            found.append(p)
        else:
            raise ConfigError(f"no such metrics file or directory: {p}")
    return found


def cmd_report(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    ws = workspace(args, cfg)
    files = _collect_metrics(args.metrics)
    records = [json.loads(f.read_text(encoding="utf-8")) for f in files]
    if not records:
        raise ConfigError("no metrics.json files found; nothing to report")
    out = report(records, ws / "report" / (args.tag or "summary"))
    print(render_accuracy_table(records))
    print(out["json"])
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def _keys_help(*sections: str) -> str:
    lines = ["config keys read:"]
    for sec in sections:
        lines.append(f"  {sec}: " + ", ".join(_flatten(SCHEMA[sec])))
    lines.append("  paths: workspace")
    return "\n".join(lines)


def _flatten(schema: Mapping[str, Any], prefix: str = "") -> list[str]:
    out = []
    for key, sub in schema.items():
        if isinstance(sub, dict):
            out.extend(_flatten(sub, f"{prefix}{key}."))
        else:
            out.append(prefix + key)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stressanon", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str, sections: Sequence[str]) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=_keys_help(*sections),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON run configuration; flags override it")
        p.add_argument("--workspace", help="output directory (default: ./workspace)")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a labelled synthetic corpus", ["synth"])
    p.add_argument("--classes", help="class counts, e.g. stress:200,no_stress:200")
    p.add_argument("--axis", choices=LABEL_AXES)
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-rate", type=int)
    p.add_argument("--duration", type=float, help="clip length in seconds")
    p.add_argument("--corpus", help="corpus name, also the id prefix")
    p.add_argument("--domain", choices=[d.value for d in Domain])
    p.add_argument("--f0-scale", type=float, help="multiplier on speaker fundamental frequencies")
    p.add_argument("--out", help="manifest path (default: <workspace>/<corpus>.jsonl)")

    p = add("split", cmd_split, "stratified train/val/test assignment", ["split"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--by", choices=LABEL_AXES)
    p.add_argument("--out")

    p = add("anonymize", cmd_anonymize, "WSOLA + resampling voice anonymization", ["anonymize"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")

    p = add("augment", cmd_augment, "class-balancing augmentation of a split manifest", ["augment", "preprocess"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", choices=["table1"], help="augmentation plan (default: table1)")
    p.add_argument("--minority", help="minority class (default: the smaller one)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("features", cmd_features, "extract LMS or MFCC feature files", ["preprocess"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True, choices=[k.value for k in FeatureKind])
    p.add_argument("--out")

    p = add("train", cmd_train, "train and test once per seed", ["experiment", "model", "train", "preprocess"])
    p.add_argument("--manifest", required=True, help="split manifest with feature files")
    p.add_argument("--arch", choices=[a.value for a in Architecture])
    p.add_argument("--seeds", type=_parse_int_list, help="comma-separated seeds (default 1,2,3)")
    p.add_argument("--by", choices=LABEL_AXES)
    p.add_argument("--preset", choices=["small", "reference"], help="model size preset (default: small)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--early-stop-patience", dest="early_stop_patience", type=int)
    p.add_argument("--max-frames", dest="max_frames", type=int)
    p.add_argument("--tag", help="run directory name under <workspace>/runs")

    p = add("eval", cmd_eval, "evaluate a checkpoint on a manifest split", ["preprocess"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=[s.value for s in Split] + ["all"])
    p.add_argument("--tag")

    p = add("crosseval", cmd_crosseval, "six-row cross-domain grid", ["preprocess"])
    p.add_argument("--model", required=True, help="checkpoint trained on raw source audio")
    p.add_argument("--model-anon", required=True, help="checkpoint trained on anonymized source audio")
    p.add_argument("--source-test", required=True)
    p.add_argument("--source-test-anon", required=True)
    p.add_argument("--target-test", required=True)
    p.add_argument("--target-test-anon", required=True)
    p.add_argument("--source-name", default="SUSAS")
    p.add_argument("--target-name", default="DFS-MAS")
    p.add_argument("--tag")

    p = add("params", cmd_params, "trainable-parameter table for all models", ["model", "preprocess"])
    p.add_argument("--preset", choices=["small", "reference"], help="model size preset (default: reference)")

    p = add("report", cmd_report, "collect metrics.json files into a summary table", [])
    p.add_argument("metrics", nargs="*", help="metrics.json files or directories to search")
    p.add_argument("--tag")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StressAnonError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, TypeError) as exc:
        # malformed config values surface here from the config dataclasses
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
