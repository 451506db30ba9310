from __future__ import annotations

import csv
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from stressanon.corpus import Split, split_manifest, synth_corpus
from stressanon.dsp import FeatureKind
from stressanon.errors import ConfigError, DataError, TrainingError
from stressanon.experiment import (
    METRICS_KEYS, Dataset, ExperimentSpec, Metrics, RunSummary, TrainConfig, build_dataset, confusion_matrix,
    cross_domain, cross_domain_grid, evaluate, extract_manifest_features, fit_frames, format_accuracy,
    metrics_record, render_cross_domain, repeat_runs, report, train, write_confusion_csv, write_metrics_json,
)
from stressanon.neural import SMALL_CONFIG, Architecture, build_network
from oracles import population_std

STYLES = tuple(f"c{i}" for i in range(9))


def _toy(n=18, k=9, seed=0, kind=FeatureKind.MFCC):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % k
    return Dataset(rng.normal(size=(n, 6, 20)), labels, tuple(f"c{i}" for i in range(k)), kind)


# -- metrics -----------------------------------------------------------------

def test_perfect_predictor():
    data = _toy()
    m = evaluate(lambda x: data.labels, data)
    assert m.accuracy == 1.0 and m.exact_accuracy == Fraction(1)
    assert np.array_equal(m.confusion, np.diag(np.full(9, 2)))


def test_constant_predictor_on_balanced_binary():
    data = _toy(n=10, k=2)
    m = evaluate(lambda x: np.zeros(len(x), dtype=int), data)
    assert m.accuracy == 0.5
    np.testing.assert_array_equal(m.confusion.sum(axis=1), np.bincount(data.labels))


def test_confusion_rows_sum_to_class_counts():
    rng = np.random.default_rng(1)
    t, p = rng.integers(0, 4, 200), rng.integers(0, 4, 200)
    cm = confusion_matrix(t, p, 4)
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(t, minlength=4))
    assert cm.trace() == np.sum(t == p)


def test_evaluate_class_mismatch():
    net = build_network("cnn", "mfcc", SMALL_CONFIG, 20)
    with pytest.raises(ConfigError):
        evaluate(net, _toy(k=9))


def test_empty_metrics():
    m = Metrics(np.zeros((2, 2), dtype=int), ("a", "b"))
    assert m.accuracy == 0.0 and m.total == 0


# -- repeated runs -------------------------------------------------------------

def _const(acc: float) -> Metrics:
    correct = round(acc * 1000)
    return Metrics(np.array([[correct, 0], [1000 - correct, 0]]), ("a", "b"))


def test_repeat_runs_statistics():
    accs = {1: 0.90, 2: 0.92, 3: 0.94}
    s = repeat_runs(lambda seed: _const(accs[seed]))
    assert s.mean == pytest.approx(0.92)
    assert s.std == pytest.approx(population_std([0.90, 0.92, 0.94]))
    assert s.std == pytest.approx(0.016330, abs=1e-6)
    assert s.formatted() == "92.0% [0.016]"


def test_repeat_runs_identical_and_single():
    assert repeat_runs(lambda seed: _const(0.8)).std == 0.0
    single = repeat_runs(lambda seed: _const(0.8), seeds=[5])
    assert single.std is None and not single.std_defined
    assert single.formatted() == "80.0% [n/a]"
    with pytest.raises(ConfigError):
        repeat_runs(lambda seed: _const(0.8), seeds=[])


def test_repeat_runs_records_failures():
    def run(seed):
        if seed == 2:
            raise TrainingError("non-finite loss at epoch 3")
        return _const(0.9)
    s = repeat_runs(run)
    assert s.accuracies == [0.9, 0.9] and set(s.failed) == {2}
    assert "epoch 3" in s.failed[2]


def test_format_accuracy():
    assert format_accuracy(0.936, 0.003) == "93.6% [0.003]"
    assert format_accuracy(0.5, None) == "50.0% [n/a]"


# -- datasets ----------------------------------------------------------------

def test_fit_frames():
    v = np.arange(12.0).reshape(6, 2)
    np.testing.assert_array_equal(fit_frames(v, 2, np.zeros(2)), v[2:4])
    padded = fit_frames(v, 8, np.full(2, -1.0))
    np.testing.assert_array_equal(padded[:6], v)
    assert np.all(padded[6:] == -1.0)


def test_build_dataset_shapes(stress_corpus):
    d = stress_corpus["data"][Split.TRAIN]
    assert d.features.shape[1:] == (100, 20)
    assert d.class_names == ("stress", "no_stress") and d.feature_kind is FeatureKind.MFCC
    assert len(d) == len(stress_corpus["manifest"].in_split(Split.TRAIN))


def test_build_dataset_errors(stress_corpus):
    m = stress_corpus["manifest"]
    with pytest.raises(DataError):
        build_dataset(m, {})
    with pytest.raises(ConfigError):
        build_dataset(m, stress_corpus["features"], by="isa")


# -- training ------------------------------------------------------------------

def _tiny(stress_corpus, n=48):
    data = stress_corpus["data"]
    return data[Split.TRAIN].subset(range(n)), data[Split.VAL].subset(range(16))


def test_train_is_deterministic(stress_corpus):
    tr, va = _tiny(stress_corpus)
    cfg = TrainConfig(epochs=2, seed=4, max_frames=100)

    def once():
        net = build_network("crnn", "mfcc", SMALL_CONFIG, 20, tr.class_names)
        return train(net, tr, va, cfg)
    a, b = once(), once()
    assert a.history == b.history
    for k, v in a.network.state().items():
        assert v.tobytes() == b.network.state()[k].tobytes()


def test_loss_decreases(trained_attention):
    h = trained_attention.history
    assert len(h) >= 5 and h[4]["loss"] < h[0]["loss"]
    assert set(h[0]) == {"epoch", "loss", "train_accuracy", "val_accuracy"}
    assert trained_attention.best_val_accuracy == max(e["val_accuracy"] for e in h)


def test_train_empty_split(stress_corpus):
    tr, va = _tiny(stress_corpus)
    net = build_network("cnn", "mfcc", SMALL_CONFIG, 20, tr.class_names)
    with pytest.raises(DataError):
        train(net, tr.subset([]), va, TrainConfig(epochs=1))


def test_train_nan_parameters(stress_corpus):
    tr, va = _tiny(stress_corpus)
    net = build_network("cnn", "mfcc", SMALL_CONFIG, 20, tr.class_names)
    net.parameters()[0].data[...] = np.nan
    with pytest.raises(TrainingError, match="epoch 1"):
        train(net, tr, va, TrainConfig(epochs=1))


def test_train_config_invariants():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)


def test_evaluate_is_side_effect_free(trained_attention, stress_corpus):
    net = trained_attention.network
    before = {k: v.copy() for k, v in net.state().items()}
    test = stress_corpus["data"][Split.TEST]
    a = evaluate(net, test)
    b = evaluate(net, test)
    assert np.array_equal(a.confusion, b.confusion)
    for k, v in net.state().items():
        assert np.array_equal(v, before[k])


def test_seed_isolation(stress_corpus):
    tr, va = _tiny(stress_corpus)
    spec = ExperimentSpec(Architecture.CNN, SMALL_CONFIG, TrainConfig(epochs=1, max_frames=100), tr, va, va)
    solo = spec.run(2)[0]
    spec.run(1)
    after = spec.run(2)[0]
    assert np.array_equal(solo.confusion, after.confusion)


def test_attention_not_worse_than_cnn(stress_corpus, trained_attention):
    data = stress_corpus["data"]
    cnn = build_network("cnn", "mfcc", SMALL_CONFIG, 20, data[Split.TRAIN].class_names)
    cnn = train(cnn, data[Split.TRAIN], data[Split.VAL], TrainConfig(epochs=12, seed=1, max_frames=100)).network
    att = evaluate(trained_attention.network, data[Split.TEST]).accuracy
    assert att >= evaluate(cnn, data[Split.TEST]).accuracy - 0.05


# -- cross-domain --------------------------------------------------------------

def test_cross_domain_same_corpus_equals_evaluate(trained_attention, stress_corpus):
    test = stress_corpus["data"][Split.TEST]
    assert np.array_equal(cross_domain(trained_attention.network, test).confusion,
                          evaluate(trained_attention.network, test).confusion)


def test_cross_domain_feature_mismatch(trained_attention):
    lms = Dataset(np.zeros((2, 10, 128)), np.array([0, 1]), ("stress", "no_stress"), FeatureKind.LMS)
    with pytest.raises(ConfigError):
        cross_domain(trained_attention.network, lms)
    short = Dataset(np.zeros((2, 10, 13)), np.array([0, 1]), ("stress", "no_stress"), FeatureKind.MFCC)
    with pytest.raises(ConfigError):
        cross_domain(trained_attention.network, short)


def test_cross_domain_shifted_pitch(trained_attention, stress_corpus, tmp_path):
    m = synth_corpus({"stress": 30, "no_stress": 30}, tmp_path, seed=11, corpus="other", domain="atc_like",
                     f0_scale=1.2)
    m = split_manifest(m, seed=0)
    feats = extract_manifest_features(m, FeatureKind.MFCC, stress_corpus["cfg"])
    data = build_dataset(m, feats, max_frames=100)
    assert cross_domain(trained_attention.network, data).accuracy > 0.5


def test_cross_domain_grid_order(trained_attention, stress_corpus):
    net = trained_attention.network
    test = stress_corpus["data"][Split.TEST]
    rows = cross_domain_grid({False: net, True: net}, {False: test, True: test}, {False: test, True: test},
                             source="A", target="B")
    assert [(r.trained_on, r.tested_on) for r in rows] == [
        ("A", "A (A)"), ("A (A)", "A"), ("A", "B"), ("A (A)", "B"), ("A", "B (A)"), ("A (A)", "B (A)"),
    ]
    assert len(render_cross_domain(rows).splitlines()) == 7


# -- reporting -----------------------------------------------------------------

def test_confusion_csv(tmp_path):
    m = Metrics(np.array([[3, 1], [0, 4]]), ("stress", "no_stress"))
    write_confusion_csv(m, tmp_path / "c.csv")
    rows = list(csv.reader((tmp_path / "c.csv").open()))
    assert len(rows) == 3 and rows[0][1:] == ["stress", "no_stress"] and rows[1] == ["stress", "3", "1"]


def test_metrics_json_and_report(tmp_path):
    s = RunSummary([1, 2, 3], [0.9, 0.92, 0.94])
    rec = metrics_record(s, task="binary", corpus="synth", feature_kind="mfcc", architecture="cnn")
    write_metrics_json(rec, tmp_path / "metrics.json")
    back = json.loads((tmp_path / "metrics.json").read_text())
    assert set(METRICS_KEYS) <= set(back)
    assert back["mean"] == 0.92 and math.isclose(back["std"], 0.01633, abs_tol=1e-5)
    paths = report([back], tmp_path / "out")
    assert "92.0% [0.016]" in paths["tsv"].read_text()
    with pytest.raises(ConfigError):
        report([], tmp_path / "out")
    with pytest.raises(ConfigError):
        write_metrics_json({"task": "x"}, tmp_path / "bad.json")
