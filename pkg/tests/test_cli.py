import json
from fractions import Fraction

import numpy as np
import pytest

from pose2text.cli import main
from pose2text.pose import load_pose, save_pose
from pose2text.trainer import load_checkpoint_file
from helpers import constant_pose

SYNTH_CFG = """
[synthetic]
pairs = 12
frames_min = 20
frames_max = 28
keypoints = 4
coords = 3
fps = 25
seed = 7
templates =
    der hund läuft
    die katze schläft
    ein vogel singt
"""

RUN_CFG = """
[paths]
train_poses = {data}
train_text = {data}/text.txt
dev_poses = {data}
dev_text = {data}/text.txt
vocab = {vocab}
run_dir = {run}

[model]
layers = 1
heads = 2
ffn_dim = 32
embed_dim = 16

[training]
max_epochs = 2
batch_size = 4
eval_every = 1
patience = 5
seed = 3
label_smoothing = 0.0
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run ingest -> train-vocab -> train once and share the artifacts."""
    root = tmp_path_factory.mktemp("pipeline")
    (root / "synth.cfg").write_text(SYNTH_CFG, encoding="utf-8")
    data = root / "data"
    assert main(["ingest", "--synthetic", str(root / "synth.cfg"), "--output", str(data)]) == 0
    vocab = root / "vocab.txt"
    assert main(["train-vocab", "--size", "80", "--input", str(data / "text.txt"), "--output", str(vocab)]) == 0
    run = root / "run"
    cfg = root / "run.cfg"
    cfg.write_text(RUN_CFG.format(data=data, vocab=vocab, run=run), encoding="utf-8")
    assert main(["train", "--config", str(cfg)]) == 0
    return {"root": root, "data": data, "vocab": vocab, "run": run, "cfg": cfg}


def test_ingest_writes_aligned_corpus(pipeline):
    files = sorted(pipeline["data"].glob("*.pose"))
    text = (pipeline["data"] / "text.txt").read_text(encoding="utf-8").splitlines()
    assert len(files) == 12 and len(text) == 12
    pose = load_pose(files[0].read_bytes())
    assert pose.fps == 25


def test_ingest_idempotent(pipeline, tmp_path):
    again = tmp_path / "again"
    assert main(["ingest", "--synthetic", str(pipeline["root"] / "synth.cfg"), "--output", str(again)]) == 0
    for f in sorted(again.glob("*.pose")):
        assert f.read_bytes() == (pipeline["data"] / f.name).read_bytes()


def test_train_artifacts(pipeline):
    run = pipeline["run"]
    ckpts = sorted(run.glob("checkpoint_epoch*.ckpt"))
    assert len(ckpts) == 2  # eval_every=1, 2 epochs
    assert (run / "best.ckpt").exists()
    log_lines = (run / "train_log.jsonl").read_text(encoding="utf-8").splitlines()
    entries = [json.loads(line) for line in log_lines]
    assert any("loss" in e for e in entries)
    assert any("dev_bleu" in e for e in entries)
    assert all("wall_time" in e for e in entries if "loss" in e)


def test_average_command(pipeline, tmp_path):
    run = pipeline["run"]
    ckpts = [str(p) for p in sorted(run.glob("checkpoint_epoch*.ckpt"))]
    out = tmp_path / "avg.ckpt"
    assert main(["average", *ckpts, "--output", str(out)]) == 0
    averaged = load_checkpoint_file(out)
    parts = [load_checkpoint_file(p) for p in ckpts]
    name = "src_proj.w"
    stack = np.sort(np.stack([c.params.tensors[name].astype(np.float64) for c in parts]), axis=0)
    acc = np.zeros(stack.shape[1:])
    for row in stack:
        acc += row
    np.testing.assert_array_equal(averaged.params.tensors[name], (acc / len(parts)).astype(np.float32))
    assert averaged.dev_bleu is None


def test_translate_and_evaluate(pipeline, tmp_path, capsys):
    run, data, vocab = pipeline["run"], pipeline["data"], pipeline["vocab"]
    hyp = tmp_path / "hyp.txt"
    args = [
        "translate", str(data), "--checkpoint", str(run / "best.ckpt"),
        "--vocab", str(vocab), "--beam", "2", "--max-len", "16",
        "--output", str(hyp),
    ]
    assert main(args) == 0
    lines = hyp.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 12

    # idempotent: identical artifact on re-run
    hyp2 = tmp_path / "hyp2.txt"
    assert main(args[:-1] + [str(hyp2)]) == 0
    assert hyp.read_bytes() == hyp2.read_bytes()

    assert main(["evaluate", "--hyp", str(hyp), "--ref", str(data / "text.txt")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert 0.0 <= report["bleu"]["score"] <= 100.0
    assert 0.0 <= report["chrf_pp"] <= 100.0


def test_evaluate_perfect(tmp_path, capsys):
    ref = tmp_path / "ref.txt"
    ref.write_text("der hund läuft\ndie katze schläft\n", encoding="utf-8")
    assert main(["evaluate", "--hyp", str(ref), "--ref", str(ref), "--metric", "bleu"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["bleu"]["score"] == 100.0


def test_validate_command(tmp_path, capsys):
    good = tmp_path / "good.pose"
    good.write_bytes(save_pose(constant_pose()))
    assert main(["validate", str(good)]) == 0
    diags = json.loads(capsys.readouterr().out)
    assert diags[str(good)] == []

    bad = tmp_path / "bad.pose"
    bad.write_bytes(save_pose(constant_pose(value=1.5)))
    assert main(["validate", str(bad)]) == 1
    diags = json.loads(capsys.readouterr().out)
    assert diags[str(bad)][0]["code"] == "coord-out-of-range"


def test_resample_command(tmp_path):
    src = tmp_path / "in.pose"
    src.write_bytes(save_pose(constant_pose(t=11, fps=50)))
    out = tmp_path / "out.pose"
    assert main(["resample", "--fps", "25", str(src), str(out)]) == 0
    pose = load_pose(out.read_bytes())
    assert pose.fps == Fraction(25)
    assert pose.num_frames == 6


def test_augment_preview_command(tmp_path):
    src = tmp_path / "in.pose"
    src.write_bytes(save_pose(constant_pose()))
    out = tmp_path / "aug"
    assert main(["augment-preview", str(src), "--output", str(out), "--count", "3", "--seed", "5"]) == 0
    assert len(list(out.glob("augmented_*.pose"))) == 3
    params = json.loads((out / "params.json").read_text(encoding="utf-8"))
    assert len(params) == 3 and all("rotation_angle" in p for p in params)


def test_stats_command(tmp_path, capsys):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("a b c a", encoding="utf-8")
    assert main(["stats", "--input", str(corpus), "--duration-hours", "1.5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["unique_words"] == 3
    assert report["ratio"] == pytest.approx(1.5 / 0.003)


def test_config_errors_reported_exhaustively(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(
        "[paths]\ntrain_poses = /nonexistent-a\ntrain_text = /nonexistent-b\n",
        encoding="utf-8",
    )
    assert main(["train", "--config", str(cfg)]) == 2
    err_lines = capsys.readouterr().err.strip().splitlines()
    problems = [json.loads(line)["error"]["message"] for line in err_lines]
    assert len(problems) >= 4  # both bad paths plus every missing option
    assert any("/nonexistent-a" in p for p in problems)
    assert any("missing [model]" in p for p in problems)


def test_jsonl_ingest(tmp_path):
    dump = tmp_path / "frames.jsonl"
    dump.write_text(
        '{"keypoints": [[0.1, 0.2, 0.3]], "confidence": [1.0]}\n'
        '{"keypoints": [[0.2, 0.3, 0.4]], "confidence": [0.5]}\n',
        encoding="utf-8",
    )
    out = tmp_path / "out"
    assert main(["ingest", "--jsonl", str(dump), "--fps", "30", "--output", str(out)]) == 0
    pose = load_pose((out / "frames.pose").read_bytes())
    assert pose.num_frames == 2 and pose.fps == 30


def test_jsonl_ingest_with_component_spans(tmp_path):
    rows = ", ".join("[0.1, 0.2, 0.3]" for _ in range(5))
    dump = tmp_path / "frames.jsonl"
    dump.write_text('{"keypoints": [%s]}\n' % rows, encoding="utf-8")
    out = tmp_path / "out"
    args = [
        "ingest", "--jsonl", str(dump), "--fps", "25", "--output", str(out),
        "--components", "body=0:2,left-hand=2:4,right-hand=4:5",
    ]
    assert main(args) == 0
    pose = load_pose((out / "frames.pose").read_bytes())
    assert [c.name for c in pose.components] == ["body", "left-hand", "right-hand"]


def test_seed_env_override(tmp_path, monkeypatch, capsys):
    (tmp_path / "synth.cfg").write_text(SYNTH_CFG, encoding="utf-8")
    monkeypatch.setenv("P2TX_SEED", "99")
    a = tmp_path / "a"
    assert main(["ingest", "--synthetic", str(tmp_path / "synth.cfg"), "--output", str(a)]) == 0
    monkeypatch.delenv("P2TX_SEED")
    b = tmp_path / "b"
    assert main(["ingest", "--synthetic", str(tmp_path / "synth.cfg"), "--output", str(b)]) == 0
    assert (a / "text.txt").read_text(encoding="utf-8") != (b / "text.txt").read_text(encoding="utf-8")


def test_unknown_input_is_machine_readable_error(tmp_path, capsys):
    missing = tmp_path / "missing.pose"
    assert main(["validate", str(missing)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert "error" in err
