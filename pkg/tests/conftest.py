from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    "AC1": "parameter accounting deltas",
    "AC2": "split arithmetic",
    "AC3": "augmentation arithmetic",
    "AC4": "corpus shape validator",
    "AC5": "anonymizer physics",
    "AC6": "feature chain",
    "AC7": "gradient suite",
    "AC8": "learning sanity",
    "AC9": "protocol fidelity",
}
_outcomes: dict[str, list[bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(marker.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for key, title in CRITERIA.items():
        results = _outcomes.get(key)
        if results is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"{key} {title}: {status}")


# -- shared synthetic data --------------------------------------------------

@pytest.fixture(scope="session")
def stress_corpus(tmp_path_factory):
    """400-clip balanced synthetic stress corpus, split and featurised (MFCC)."""
    from stressanon.corpus import Split, split_manifest, synth_corpus
    from stressanon.dsp import FeatureKind, PreprocessConfig
    from stressanon.experiment import build_dataset, extract_manifest_features

    root = tmp_path_factory.mktemp("stress400")
    manifest = split_manifest(synth_corpus({"stress": 200, "no_stress": 200}, root, seed=7), seed=0)
    cfg = PreprocessConfig()
    feats = extract_manifest_features(manifest, FeatureKind.MFCC, cfg)
    data = {s: build_dataset(manifest.in_split(s), feats, max_frames=100, preprocess=cfg) for s in Split}
    return {"manifest": manifest, "features": feats, "data": data, "root": root, "cfg": cfg}


@pytest.fixture(scope="session")
def trained_attention(stress_corpus):
    """Small CRNN+Attention model trained once on the shared synthetic corpus."""
    from stressanon.corpus import Split
    from stressanon.experiment import TrainConfig, train
    from stressanon.neural import SMALL_CONFIG, build_network

    data = stress_corpus["data"]
    net = build_network("crnn_attention", "mfcc", SMALL_CONFIG, 20, data[Split.TRAIN].class_names)
    return train(net, data[Split.TRAIN], data[Split.VAL], TrainConfig(epochs=12, seed=1, max_frames=100))
