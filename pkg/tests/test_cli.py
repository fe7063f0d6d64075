"""End-to-end CLI contracts: exit codes, determinism, artifact files, and the
stable accuracy line format."""

import json
import re

import numpy as np
import pytest

from safsar.cli import run

ACC_LINE = re.compile(
    r"acc=\d\.\d{6} ci95=\d\.\d{6} ways=\d+ shots=\d+ episodes=\d+ seed=\d+"
)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated dataset plus one short training run, shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    code = run([
        "gen-synthetic", "--out", str(data), "--classes", "8",
        "--items-per-class", "4", "--frames", "4", "--height", "8", "--width", "8",
        "--train-classes", "5", "--val-classes", "0", "--test-classes", "3",
        "--seed", "3",
    ])
    assert code == 0
    train_out = root / "run"
    code = run([
        "train", "--data", str(data), "--out", str(train_out),
        "--ways", "3", "--shots", "1", "--episodes", "5", "--seed", "1",
        "--frames", "4", "--dim", "16", "--video-depth", "1", "--text-depth", "1",
        "--heads", "2", "--ffn-ratio", "2", "--fusion-layers", "1",
        "--precision", "double", "--no-val-selection",
    ])
    assert code == 0
    return {"root": root, "data": data, "run": train_out}


def test_gen_synthetic_writes_dataset_and_manifest(workspace):
    data = workspace["data"]
    assert (data / "clips.npz").exists()
    assert (data / "meta.json").exists()
    manifest = json.loads((data / "run_manifest.json").read_text())
    assert manifest["command"] == "gen-synthetic"
    assert manifest["seed"] == 3
    assert "code_version" in manifest


def test_train_writes_params_trace_and_manifest(workspace):
    out = workspace["run"]
    for name in ("params.npz", "pipeline.json", "vocab.txt", "loss_trace.jsonl",
                 "run_manifest.json"):
        assert (out / name).exists(), name
    trace = [json.loads(line) for line in (out / "loss_trace.jsonl").read_text().splitlines()]
    assert len(trace) == 5
    assert all(np.isfinite(rec["loss"]) for rec in trace)


def test_eval_prints_stable_accuracy_line(workspace, capsys, tmp_path):
    args = [
        "eval", "--data", str(workspace["data"]), "--params", str(workspace["run"]),
        "--out", str(tmp_path / "e1"), "--ways", "3", "--shots", "1",
        "--episodes", "20", "--seed", "3", "--frames", "4",
    ]
    assert run(args) == 0
    first = capsys.readouterr().out.strip().splitlines()[-1]
    assert ACC_LINE.fullmatch(first), first
    args[6] = str(tmp_path / "e2")
    assert run(args) == 0
    second = capsys.readouterr().out.strip().splitlines()[-1]
    assert first == second


def test_eval_worker_pool_does_not_change_accuracy(workspace, capsys, tmp_path):
    base = [
        "eval", "--data", str(workspace["data"]), "--params", str(workspace["run"]),
        "--ways", "3", "--shots", "1", "--episodes", "16", "--seed", "5",
        "--frames", "4",
    ]
    assert run(base + ["--out", str(tmp_path / "w1"), "--workers", "1"]) == 0
    one = capsys.readouterr().out.strip().splitlines()[-1]
    assert run(base + ["--out", str(tmp_path / "w4"), "--workers", "4"]) == 0
    four = capsys.readouterr().out.strip().splitlines()[-1]
    assert one == four
    r1 = [json.loads(l) for l in (tmp_path / "w1" / "eval_report.jsonl").read_text().splitlines()]
    r4 = [json.loads(l) for l in (tmp_path / "w4" / "eval_report.jsonl").read_text().splitlines()]
    assert r1 == r4


def test_gradcheck_passes_and_prints_error(capsys, tmp_path):
    code = run([
        "gradcheck", "--dim", "16", "--seed", "7", "--ways", "2", "--shots", "1",
        "--tokens", "3", "--fusion-layers", "1", "--samples", "2",
        "--out", str(tmp_path / "g"),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "max_rel_error=" in out


def test_gradcheck_fails_on_impossible_tolerance(capsys, tmp_path):
    code = run([
        "gradcheck", "--dim", "16", "--seed", "7", "--ways", "2", "--shots", "1",
        "--tokens", "3", "--fusion-layers", "1", "--samples", "2",
        "--tol", "1e-18", "--out", str(tmp_path / "g"),
    ])
    assert code == 1


def test_validate_cache_exit_codes(tmp_path, capsys):
    from safsar.cache import write_cache

    good = tmp_path / "good"
    write_cache(
        {0: np.ones(4, np.float32), 1: np.full(4, 2.0, np.float32)},
        None, {0: ("x", "train"), 1: ("y", "test")}, {0: 0, 1: 1}, good,
    )
    assert run(["validate-cache", str(good), "--out", str(tmp_path / "v1")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ok"] is True

    bad = tmp_path / "bad"
    write_cache(
        {0: np.array([np.nan, 1, 1, 1], np.float32)},
        None, {0: ("x", "train")}, {0: 0}, bad,
    )
    assert run(["validate-cache", str(bad), "--out", str(tmp_path / "v2")]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["ok"] is False


def test_dump_embeddings_jsonl(workspace, tmp_path):
    out = tmp_path / "emb"
    code = run([
        "dump-embeddings", "--data", str(workspace["data"]),
        "--params", str(workspace["run"]), "--out", str(out),
        "--split", "test", "--ways", "3", "--shots", "1", "--episodes", "4",
        "--seed", "2", "--frames", "4",
    ])
    assert code == 0
    lines = (out / "embeddings.jsonl").read_text().splitlines()
    assert len(lines) == 4
    rec = json.loads(lines[0])
    for key in ("prototypes", "fused", "adapted", "query_adapted", "query_raw",
                "classes", "query_class"):
        assert key in rec
    assert set(rec["prototypes"]) == {str(c) for c in rec["classes"]}


def test_param_count_total_matches_module_sum(capsys, tmp_path, workspace):
    assert run([
        "param-count", "--params", str(workspace["run"]), "--out", str(tmp_path / "p"),
    ]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    counts = {line.split()[0]: int(line.split()[1]) for line in lines}
    total = counts.pop("total")
    assert sum(counts.values()) == total
    assert {"video", "text", "fusion", "tlm", "head"} <= set(counts)


def test_unknown_subcommand_exits_2(capsys):
    assert run(["frobnicate"]) == 2


def test_unknown_flag_exits_2(capsys):
    assert run(["gradcheck", "--no-such-flag"]) == 2


def test_domain_failure_exits_1(capsys, tmp_path):
    # dataset too small for the requested episode layout
    data = tmp_path / "tiny"
    assert run([
        "gen-synthetic", "--out", str(data), "--classes", "4",
        "--items-per-class", "2", "--frames", "4", "--height", "8", "--width", "8",
        "--train-classes", "2", "--val-classes", "0", "--test-classes", "2",
    ]) == 0
    code = run([
        "train", "--data", str(data), "--out", str(tmp_path / "r"),
        "--ways", "4", "--shots", "2", "--episodes", "1",
        "--dim", "16", "--video-depth", "1", "--text-depth", "1",
        "--heads", "2", "--ffn-ratio", "2",
    ])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_train_then_eval_ablation_flags(workspace, tmp_path, capsys):
    out = tmp_path / "ablated"
    code = run([
        "train", "--data", str(workspace["data"]), "--out", str(out),
        "--ways", "3", "--shots", "1", "--episodes", "3", "--seed", "1",
        "--frames", "4", "--dim", "16", "--video-depth", "1", "--text-depth", "1",
        "--heads", "2", "--ffn-ratio", "2", "--fusion-layers", "1",
        "--ablate-fusion", "--ablate-tlm", "--no-val-selection",
    ])
    assert code == 0
    meta = json.loads((out / "pipeline.json").read_text())
    assert meta["config"]["use_fusion"] is False
    assert meta["config"]["use_tlm"] is False
    assert run([
        "eval", "--data", str(workspace["data"]), "--params", str(out),
        "--out", str(tmp_path / "ae"), "--ways", "3", "--shots", "1",
        "--episodes", "10", "--seed", "2", "--frames", "4",
    ]) == 0
    assert ACC_LINE.fullmatch(capsys.readouterr().out.strip().splitlines()[-1])
