from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stressanon.corpus import (
    IsaLevel, Manifest, SpeakingStyle, Split, StressLabel, Utterance, group_isa, group_style, label_of,
    read_manifest, split_counts, split_manifest, synth_corpus, validate_susas_shape, write_manifest,
)
from stressanon.errors import ManifestError, SplitError


def test_nine_styles_and_five_isa_levels():
    assert len(SpeakingStyle) == 9
    assert [lvl.value for lvl in IsaLevel] == ["boring", "relaxed", "comfortable", "high", "excessive"]
    assert [lvl.rank for lvl in IsaLevel] == sorted(lvl.rank for lvl in IsaLevel)


@pytest.mark.parametrize("style,expected", [
    (SpeakingStyle.ANGER, StressLabel.STRESS),
    (SpeakingStyle.FAST, StressLabel.STRESS),
    (SpeakingStyle.LOMBARD, StressLabel.STRESS),
    (SpeakingStyle.LOUD, StressLabel.STRESS),
    (SpeakingStyle.CLEAR, StressLabel.NO_STRESS),
    (SpeakingStyle.NEUTRAL, StressLabel.NO_STRESS),
    (SpeakingStyle.SLOW, StressLabel.NO_STRESS),
    (SpeakingStyle.SOFT, StressLabel.NO_STRESS),
    (SpeakingStyle.QUESTION, None),
])
def test_group_style(style, expected):
    assert group_style(style) is expected


def test_style_partition_is_4_4_1():
    groups = [group_style(s) for s in SpeakingStyle]
    assert groups.count(StressLabel.STRESS) == 4
    assert groups.count(StressLabel.NO_STRESS) == 4
    assert groups.count(None) == 1


@pytest.mark.parametrize("level,expected", [
    ("high", StressLabel.STRESS), ("comfortable", StressLabel.NO_STRESS),
    ("excessive", StressLabel.STRESS), ("boring", StressLabel.NO_STRESS), ("relaxed", StressLabel.NO_STRESS),
])
def test_group_isa(level, expected):
    assert group_isa(level) is expected


def test_utterance_labels():
    u = Utterance("a", "a.wav", style="anger")
    assert u.stress_label is StressLabel.STRESS and label_of(u, "style") == "anger"
    assert Utterance("b", "b.wav", isa="high").stress_label is StressLabel.STRESS
    with pytest.raises(ManifestError):
        Utterance("c", "c.wav", style="anger", isa="high")
    with pytest.raises(ManifestError):
        Manifest((u, u))


@pytest.mark.parametrize("n,expected", [(60, (39, 9, 12)), (678, (435, 108, 135)), (5041, (3227, 806, 1008))])
def test_split_counts(n, expected):
    assert split_counts(n) == expected


def test_split_too_small():
    with pytest.raises(SplitError):
        split_counts(2)


def _labelled(n_stress: int, n_calm: int) -> Manifest:
    utts = [Utterance(f"s{i:04d}", f"s{i}.wav", style="loud") for i in range(n_stress)]
    utts += [Utterance(f"c{i:04d}", f"c{i}.wav", style="soft") for i in range(n_calm)]
    utts += [Utterance(f"q{i:04d}", f"q{i}.wav", style="question") for i in range(5)]
    return Manifest(tuple(utts))


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 300), st.integers(3, 300), st.integers(0, 2**31))
def test_split_is_stratified_disjoint_and_reproducible(n_stress, n_calm, seed):
    m = _labelled(n_stress, n_calm)
    out = split_manifest(m, seed=seed)
    assert len(out) == n_stress + n_calm  # question dropped
    for label, n in (("stress", n_stress), ("no_stress", n_calm)):
        counts = tuple(sum(1 for u in out if label_of(u, "stress") == label and u.split is s)
                       for s in (Split.TRAIN, Split.VAL, Split.TEST))
        assert counts == split_counts(n)
    assert len({u.id for u in out}) == len(out)
    assert [(u.id, u.split) for u in split_manifest(m, seed=seed)] == [(u.id, u.split) for u in out]


def test_split_table1_shapes():
    out = split_manifest(_labelled(60, 678), seed=1)
    c = out.counts("stress")
    assert [c[("stress", s)] for s in ("train", "val", "test")] == [39, 9, 12]
    assert [c[("no_stress", s)] for s in ("train", "val", "test")] == [435, 108, 135]


def test_split_rejects_tiny_class():
    with pytest.raises(SplitError):
        split_manifest(_labelled(2, 10))


def _susas(neutral=631, per_style=630) -> Manifest:
    utts = []
    for style in SpeakingStyle:
        n = neutral if style is SpeakingStyle.NEUTRAL else per_style
        utts += [Utterance(f"{style.value}-{i}", "x.wav", style=style) for i in range(n)]
    return Manifest(tuple(utts))


def test_susas_shape_conforming():
    rep = validate_susas_shape(_susas())
    assert rep.ok and rep.total == 5671 and rep.binary_total == 5041
    assert not rep.violations


def test_susas_shape_neutral_630_flagged():
    rep = validate_susas_shape(_susas(neutral=630))
    assert not rep.ok
    assert any(v.startswith("neutral") for v in rep.violations)


def test_susas_shape_empty():
    rep = validate_susas_shape(Manifest(()))
    assert not rep.ok and rep.total == 0 and rep.binary_total == 0
    assert len(rep.violations) == 9 + 2


def test_manifest_round_trip_and_extras(tmp_path):
    utts = (
        Utterance("a", "x/a.wav", "spk1", "male", "susas_like", style="anger", split="train"),
        Utterance("b", "x/b.wav", "spk2", "female", "atc_like", isa="relaxed", anonymized=True,
                  augment_method="vtlp", source_id="a", copy_index=2, extra={"future": [1, 2]}),
    )
    m = Manifest(utts, {"corpus": "demo", "sample_rate": 8000, "seed": 3})
    write_manifest(m, tmp_path / "m.jsonl")
    back = read_manifest(tmp_path / "m.jsonl")
    assert back == m
    assert back.utterances[1].extra["future"] == [1, 2]
    assert json.loads((tmp_path / "m.jsonl").read_text().splitlines()[1])["future"] == [1, 2]


def test_manifest_missing_id_reports_line(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps({"id": "a", "audio_path": "a.wav"}) + "\n" + json.dumps({"audio_path": "b.wav"}) + "\n")
    with pytest.raises(ManifestError) as err:
        read_manifest(p)
    assert err.value.line == 2 and "line 2" in str(err.value)


def test_manifest_bad_json_reports_line(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("{not json\n")
    with pytest.raises(ManifestError) as err:
        read_manifest(p)
    assert err.value.line == 1


def _digest(root, manifest):
    h = hashlib.sha256()
    for u in manifest:
        h.update((root / u.audio_path).read_bytes())
    return h.hexdigest()


def test_synth_counts_and_determinism(tmp_path):
    a = synth_corpus({"stress": 50, "no_stress": 50}, tmp_path / "a", seed=3, duration_s=0.3)
    b = synth_corpus({"stress": 50, "no_stress": 50}, tmp_path / "b", seed=3, duration_s=0.3)
    assert len(a) == 100
    assert sum(1 for u in a if u.stress_label is StressLabel.STRESS) == 50
    assert _digest(tmp_path / "a", a) == _digest(tmp_path / "b", b)
    clip = a.load_audio(a.utterances[0])
    assert clip.sample_rate_hz == 8000 and np.max(np.abs(clip.samples)) <= 1.0


def test_synth_style_axis(tmp_path):
    m = synth_corpus({"anger": 2, "question": 3}, tmp_path, axis="style", duration_s=0.2)
    assert sorted(label_of(u, "style") for u in m) == ["anger"] * 2 + ["question"] * 3
    with pytest.raises(ValueError):
        synth_corpus({"bogus": 1}, tmp_path, axis="style")


def _energy_rate(x: np.ndarray, sr: int) -> tuple[float, float]:
    rms_db = 20 * np.log10(np.sqrt(np.mean(x ** 2)) + 1e-12)
    k = int(0.02 * sr)
    env = np.convolve(np.abs(x), np.ones(k) / k, mode="same")
    env = env - env.mean()
    ac = np.correlate(env, env, mode="full")[env.size - 1:]
    lo, hi = int(0.05 * sr), int(0.6 * sr)
    lag = lo + int(np.argmax(ac[lo:hi]))
    return rms_db, sr / lag


def test_synthetic_classes_are_separable_by_energy_and_rate(stress_corpus):
    m = stress_corpus["manifest"]
    feats, labels = [], []
    for u in m:
        clip = m.load_audio(u)
        feats.append(_energy_rate(clip.samples, clip.sample_rate_hz))
        labels.append(1.0 if u.stress_label is StressLabel.STRESS else -1.0)
    X = np.column_stack([np.array(feats), np.ones(len(feats))])
    y = np.array(labels)
    fit, held = np.arange(len(y)) % 2 == 0, np.arange(len(y)) % 2 == 1
    w, *_ = np.linalg.lstsq(X[fit], y[fit], rcond=None)
    acc = np.mean(np.sign(X[held] @ w) == y[held])
    assert acc >= 0.8
