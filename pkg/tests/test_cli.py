import json

import pytest
import yaml

from fixture_data import build_iemocap
from synthasu.cli import main
from synthasu.corpus import Manifest


@pytest.fixture
def toy_dir(tmp_path):
    assert main(["toy-data", "--out", str(tmp_path / "toy"), "--sessions", "3", "--per-label", "3",
                 "--synthetic-per-label", "6"]) == 0
    return tmp_path / "toy"


def write_config(path, toy_dir, out, regimes):
    path.write_text(yaml.safe_dump({
        "task": {"kind": "emotion"},
        "corpus": {"real_manifest": str(toy_dir / "real/manifest.jsonl"),
                   "synthetic_manifest": str(toy_dir / "synthetic/manifest.jsonl")},
        "encoder": {"n_layers": 2, "hidden_dim": 8},
        "lora": {"rank": 2},
        "head": {"conv_channels": 8, "fc_hidden": 8},
        "train": {"batch_size": 8, "max_epochs": 1, "learning_rate": 0.005},
        "experiment": {"regimes": regimes, "ratios": [0.5], "seeds": [0], "output_dir": str(out)},
    }))
    return path


def test_generate_and_synthesize(tmp_path, capsys):
    (tmp_path / "task.yaml").write_text("task:\n  kind: emotion\n  per_label_count: 3\n")
    assert main(["generate-text", "--task", str(tmp_path / "task.yaml"), "--out", str(tmp_path / "texts.jsonl")]) == 0
    lines = (tmp_path / "texts.jsonl").read_text().splitlines()
    assert len(lines) == 12
    assert set(json.loads(lines[0])) == {"text", "label", "prompt", "backend_id", "index"}
    assert main(["synthesize", "--texts", str(tmp_path / "texts.jsonl"), "--speakers", "stub:5",
                 "--out-dir", str(tmp_path / "syn")]) == 0
    m = Manifest.load(tmp_path / "syn/manifest.jsonl")
    assert len(m) == 12 and all(m.audio_path(r).exists() for r in m)


def test_ingest_subsample_folds(tmp_path, capsys):
    src = build_iemocap(tmp_path / "iemocap")
    assert main(["ingest", "--dataset", "iemocap", "--source", str(src), "--out", str(tmp_path / "m.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "speakers: 10 (expected 10)" in out and "utterances: 50 (expected 5531)  (differs)" in out
    assert main(["subsample", "--manifest", str(tmp_path / "m.jsonl"), "--ratio", "0.2", "--seed", "1",
                 "--out", str(tmp_path / "s.jsonl")]) == 0
    # 10/20/10/10 per label (excited merged into happy)
    assert len(Manifest.load(tmp_path / "s.jsonl")) == 2 + 4 + 2 + 2
    capsys.readouterr()
    assert main(["folds", "--manifest", str(tmp_path / "m.jsonl"), "--dataset", "iemocap"]) == 0
    folds = json.loads(capsys.readouterr().out)
    assert len(folds) == 5 and folds[0]["test"] == ["Session1"] and folds[0]["val"] == ["Session2"]


def test_train_command(tmp_path, toy_dir, capsys):
    cfg = write_config(tmp_path / "run.yaml", toy_dir, tmp_path / "runs", ["real_baseline"])
    assert main(["train", "--config", str(cfg), "--regime", "synthetic_zero_shot", "--out", str(tmp_path / "syn")]) == 0
    assert (tmp_path / "syn/checkpoint.pt").exists()
    assert len((tmp_path / "syn/epochs.jsonl").read_text().splitlines()) == 2
    with pytest.raises(SystemExit):
        main(["train", "--config", str(cfg), "--regime", "synthetic_init_low_resource", "--out", str(tmp_path / "x")])
    assert main(["train", "--config", str(cfg), "--regime", "synthetic_init_low_resource", "--ratio", "0.5",
                 "--init", str(tmp_path / "syn/checkpoint.pt"), "--out", str(tmp_path / "lr")]) == 0
    summary = json.loads((tmp_path / "lr/summary.json").read_text())
    assert set(summary) == {"best_val_metric", "epoch", "test"}


def test_run_and_report(tmp_path, toy_dir, capsys):
    cfg = write_config(tmp_path / "run.yaml", toy_dir, tmp_path / "runs", ["real_baseline", "low_resource"])
    assert main(["run", "--config", str(cfg)]) == 0
    assert "6 cells complete" in capsys.readouterr().out
    assert main(["run", "--config", str(cfg), "--resume"]) == 0
    assert main(["report", "--results", str(tmp_path / "runs"), "--out", str(tmp_path / "rep")]) == 0
    for name in ("cells.csv", "regimes.csv", "curve_low_resource.csv"):
        assert (tmp_path / "rep" / name).read_bytes() == (tmp_path / "runs/report" / name).read_bytes()
