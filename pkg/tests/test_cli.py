import json

import numpy as np
import pytest

from noisesim.cli import run_command
from noisesim.corpus import read_corpus

CONFIG = {
    "seed": 3,
    "synth": {"n_scenarios": 20, "n_vehicles": [6, 10], "seed": 3},
    "noise": {"jitter_sigma_xy": 0.1, "dropout_rate": 0.05, "fragmentation_rate": 0.05, "seed": 1},
    "tokenizer": {"size": 128, "epsilon": 0.5},
    "train": {"epochs": 2, "max_samples": 2000},
    "metrics": {"k_rollouts": 2},
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "c.json"
    cfg.write_text(json.dumps(CONFIG))

    def run(*argv):
        code = run_command([argv[0], "--config", str(cfg), *argv[1:]])
        assert code == 0, argv
        return root

    run("synth", "--out", str(root / "clean"))
    run("corrupt", str(root / "clean"), "--out", str(root / "noisy"))
    run("vocab", str(root / "noisy"), "--out", str(root / "vocab"))
    run("train", str(root / "noisy"), "--vocab", str(root / "vocab"), "--out", str(root / "ce"), "--loss", "ce",
        "--seed", "1")
    return root, run


def test_corrupt_leaves_test_split_clean(pipeline):
    root, _ = pipeline
    clean = {s.scenario_id: s for s, _ in read_corpus(root / "clean")}
    for s, _ in read_corpus(root / "noisy"):
        if s.split == "test":
            assert s == clean[s.scenario_id]
        else:
            assert s.provenance == "corrupted"


def test_focal_gamma_zero_checkpoint_matches_ce(pipeline):
    root, run = pipeline
    run("train", str(root / "noisy"), "--vocab", str(root / "vocab"), "--out", str(root / "f0"), "--loss", "focal",
        "--gamma", "0", "--seed", "1")
    assert (root / "f0" / "policy.ckpt").read_bytes() == (root / "ce" / "policy.ckpt").read_bytes()
    lines = (root / "ce" / "train_log.jsonl").read_text().splitlines()
    assert {"epoch", "train_loss", "val_loss", "wall_time"} <= set(json.loads(lines[1]))


def test_eval_and_report(pipeline, capsys):
    root, run = pipeline
    run("eval", str(root / "clean"), "--policy", "const", "--out", str(root / "ev_const"))
    run("eval", str(root / "clean"), "--policy", "learned", "--checkpoint", str(root / "ce"), "--vocab",
        str(root / "vocab"), "--out", str(root / "ev_ce"), "--label", "CE")
    out = capsys.readouterr().out
    assert "| Method | Realism | Kinematic | Interactive | Map-Based | minADE |" in out
    rep = json.loads((root / "ev_ce" / "metrics.json").read_text())
    assert rep["policy"] == "CE" and rep["aggregate"]["n_scenarios"] >= 1
    run("report", str(root / "clean"), "--out", str(root / "rep"), "--metrics",
        str(root / "ev_const" / "metrics.json"), str(root / "ev_ce" / "metrics.json"))
    summary = json.loads((root / "rep" / "summary.json").read_text())
    assert summary["n_scenarios"] == 20
    for name in ("agent_count.svg", "speed.svg", "trajectories.svg", "results.md"):
        assert (root / "rep" / name).stat().st_size > 0


def test_rollout_output_independent_of_jobs(pipeline):
    root, run = pipeline
    for jobs in ("1", "2"):
        run("rollout", str(root / "clean"), "--policy", "learned", "--checkpoint", str(root / "ce"),
            "--vocab", str(root / "vocab"), "--out", str(root / f"ro{jobs}"), "--jobs", jobs)
    index = json.loads((root / "ro1" / "rollouts.json").read_text())
    assert index == json.loads((root / "ro2" / "rollouts.json").read_text())
    for entry in index["scenarios"]:
        a = np.load(root / "ro1" / entry["file"])
        assert a.shape[0] == 2 and np.array_equal(a, np.load(root / "ro2" / entry["file"]))


def test_clean_stage(pipeline):
    root, run = pipeline
    run("clean", str(root / "noisy"), "--out", str(root / "cleaned"))
    provs = {s.provenance for s, _ in read_corpus(root / "cleaned") if s.split != "test"}
    assert provs == {"cleaned"}


def test_usage_errors(tmp_path, capsys):
    assert run_command(["frobnicate"]) == 2
    assert run_command(["synth"]) == 2  # --out is required
    assert run_command(["eval", str(tmp_path), "--policy", "learned", "--out", str(tmp_path / "o")]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_corpus_is_a_failure(tmp_path):
    assert run_command(["vocab", str(tmp_path / "nope"), "--out", str(tmp_path / "v")]) == 1
