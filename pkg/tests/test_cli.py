from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

from stressanon import cli
from stressanon.corpus import read_manifest


def _run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def _tree_digest(root: Path) -> dict[str, str]:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli") / "ws"
    assert _run("synth", "--workspace", ws, "--classes", "stress:30,no_stress:30", "--duration", "0.5",
                "--seed", "3") == 0
    assert _run("split", "--workspace", ws, "--manifest", ws / "synth.jsonl") == 0
    assert _run("features", "--workspace", ws, "--manifest", ws / "synth.split.jsonl", "--kind", "mfcc") == 0
    assert _run("train", "--workspace", ws, "--manifest", ws / "synth.split.mfcc.jsonl", "--arch", "cnn",
                "--epochs", "2", "--max-frames", "40", "--tag", "t") == 0
    return ws


def test_synth_count_and_rerun_identical(tmp_path):
    for name in ("a", "b"):
        assert _run("synth", "--workspace", tmp_path / name, "--classes", "stress:4,no_stress:6",
                    "--duration", "0.2") == 0
    assert len(read_manifest(tmp_path / "a" / "synth.jsonl")) == 10
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_synth_requires_classes(tmp_path, capsys):
    assert _run("synth", "--workspace", tmp_path) == 2
    assert "--classes" in capsys.readouterr().err


def test_split_and_augment_table1(tmp_path, capsys):
    ws = tmp_path / "ws"
    assert _run("synth", "--workspace", ws, "--classes", "stress:60,no_stress:678", "--duration", "0.1") == 0
    assert _run("split", "--workspace", ws, "--manifest", ws / "synth.jsonl") == 0
    out = capsys.readouterr().out
    assert "stress\t39\t9\t12" in out and "no_stress\t435\t108\t135" in out
    assert _run("augment", "--workspace", ws, "--manifest", ws / "synth.split.jsonl", "--seed", "1") == 0
    aug = read_manifest(ws / "synth.split.aug.jsonl")
    counts = aug.counts("stress")
    assert [counts[("stress", s)] for s in ("train", "val", "test")] == [429, 99, 132]
    assert [counts[("no_stress", s)] for s in ("train", "val", "test")] == [435, 108, 135]


def test_features_mfcc_has_20_coefficients(pipeline):
    from stressanon.experiment import load_manifest_features
    feats = load_manifest_features(read_manifest(pipeline / "synth.split.mfcc.jsonl"))
    assert len(feats) == 60 and {f.coeffs for f in feats.values()} == {20}


def test_params_prints_six_rows_and_deltas(tmp_path, capsys):
    assert _run("params", "--workspace", tmp_path) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len([ln for ln in lines[1:] if not ln.startswith("delta")]) == 6
    assert "crnn-cnn=1576960\tattention=1050624" in lines[-1]
    data = json.loads((tmp_path / "params.json").read_text())
    assert len(set(data["lms_minus_mfcc"].values())) == 1


def test_train_metrics_json(pipeline):
    m = json.loads((pipeline / "runs" / "t" / "metrics.json").read_text())
    assert m["seeds"] == [1, 2, 3] and len(m["accuracies"]) == 3
    assert (pipeline / m["checkpoint_path"]).exists() and (pipeline / m["confusion_csv_path"]).exists()
    for s in (1, 2, 3):
        assert (pipeline / "runs" / "t" / f"model_seed{s}.ckpt").exists()


def test_eval_round_trips_and_reports(pipeline, capsys):
    ckpt = pipeline / "runs" / "t" / "model_seed1.ckpt"
    assert _run("eval", "--workspace", pipeline, "--checkpoint", ckpt,
                "--manifest", pipeline / "synth.split.mfcc.jsonl", "--tag", "e") == 0
    rec = json.loads((pipeline / "eval" / "e" / "metrics.json").read_text())
    train_rec = json.loads((pipeline / "runs" / "t" / "metrics.json").read_text())
    assert rec["accuracies"][0] == train_rec["accuracies"][0]
    assert _run("report", "--workspace", pipeline, pipeline / "runs", "--tag", "r") == 0
    assert (pipeline / "report" / "r" / "summary.tsv").exists()
    capsys.readouterr()


def test_eval_binary_checkpoint_on_style_manifest(pipeline, tmp_path, capsys):
    ws = tmp_path / "ws"
    assert _run("synth", "--workspace", ws, "--axis", "style", "--duration", "0.3",
                "--classes", ",".join(f"{s}:5" for s in ("anger", "fast", "lombard", "loud", "clear", "neutral",
                                                          "slow", "soft", "question"))) == 0
    assert _run("split", "--workspace", ws, "--manifest", ws / "synth.jsonl", "--by", "style") == 0
    assert _run("features", "--workspace", ws, "--manifest", ws / "synth.split.jsonl", "--kind", "mfcc") == 0
    capsys.readouterr()
    code = _run("eval", "--workspace", ws, "--checkpoint", pipeline / "runs" / "t" / "model_seed1.ckpt",
                "--manifest", ws / "synth.split.mfcc.jsonl")
    assert code == 2
    assert "style" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", ["synth", "split", "anonymize", "augment", "features", "train", "eval",
                                 "crosseval", "params", "report"])
def test_help_lists_config_keys(cmd, capsys):
    with pytest.raises(SystemExit) as exit_info:
        cli.main([cmd, "--help"])
    assert exit_info.value.code == 0
    assert "config keys read" in capsys.readouterr().out


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"clases": "stress:2"}}))
    assert _run("synth", "--workspace", tmp_path, "--config", cfg) == 2
    assert "synth.clases" in capsys.readouterr().err


def test_flags_beat_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"classes": "stress:2,no_stress:2", "corpus": "fromcfg",
                                         "duration_s": 0.2}}))
    assert _run("synth", "--workspace", tmp_path / "ws", "--config", cfg, "--corpus", "fromflag") == 0
    assert (tmp_path / "ws" / "fromflag.jsonl").exists()
    assert not (tmp_path / "ws" / "fromcfg.jsonl").exists()


def test_anonymize_missing_audio(tmp_path, capsys):
    ws = tmp_path / "ws"
    assert _run("synth", "--workspace", ws, "--classes", "stress:2,no_stress:2", "--duration", "0.3") == 0
    m = read_manifest(ws / "synth.jsonl")
    victim = m.utterances[1]
    m.audio_file(victim).unlink()
    capsys.readouterr()
    assert _run("anonymize", "--workspace", ws, "--manifest", ws / "synth.jsonl") == 1
    err = capsys.readouterr().err
    assert victim.id in err
    out = read_manifest(ws / "synth.anon.jsonl")
    assert len(out) == 3 and all(u.anonymized for u in out)


def test_inputs_untouched_and_outputs_in_workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    src = tmp_path / "src"
    assert _run("synth", "--workspace", src, "--classes", "stress:3,no_stress:3", "--duration", "0.3") == 0
    before = _tree_digest(src)
    ws = tmp_path / "ws"
    assert _run("split", "--workspace", ws, "--manifest", src / "synth.jsonl") == 0
    assert _run("anonymize", "--workspace", ws, "--manifest", ws / "synth.split.jsonl") == 0
    assert _tree_digest(src) == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["src", "ws"]
    anon = read_manifest(ws / "synth.split.anon.jsonl")
    assert all(anon.audio_file(u).resolve().is_relative_to(ws.resolve()) for u in anon)
