"""Command-line entry point: one binary, one subcommand per pipeline stage.

Run configuration for ``train`` is an INI-style file (sections = config
blocks) with ``--set section.key=value`` flag overrides; flags win. The
environment variable ``P2TX_SEED`` overrides any configured seed. All
validation failures are reported exhaustively, not first-only.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import augment as augment_mod
from . import metrics as metrics_mod
from .decoding import DecodeConfig, translate
from .model import ModelConfig
from .pose import flatten, load_pose, read_pose_jsonl, save_pose, validate
from .resample import ResampleSpec, resample
from .synthetic import DEFAULT_TEMPLATES, SynthSpec, generate
from .tokenizer import load_vocab, save_vocab, train_vocab
from .trainer import (
    Checkpoint,
    TrainingConfig,
    average_checkpoints,
    load_checkpoint_file,
    save_checkpoint_file,
    select_best,
    train,
)


class ConfigError(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _fail(kind: str, message, code: int = 1) -> int:
    payload = {"error": {"type": kind, "message": message}}
    print(json.dumps(payload), file=sys.stderr)
    return code


def _env_seed() -> int | None:
    raw = os.environ.get("P2TX_SEED")
    return int(raw) if raw else None


def _pose_files(paths: list[str]) -> list[Path]:
    out: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            out.extend(sorted(path.glob("*.pose")))
        else:
            out.append(path)
    return out


def _load_parallel(pose_dir: str, text_file: str):
    files = sorted(Path(pose_dir).glob("*.pose"))
    texts = Path(text_file).read_text(encoding="utf-8").splitlines()
    if len(files) != len(texts):
        raise ConfigError(
            [f"{pose_dir} has {len(files)} pose files but {text_file} has {len(texts)} lines"]
        )
    poses = [load_pose(f.read_bytes()) for f in files]
    return list(zip(poses, texts))


def _flatten_all(samples, target_fps: Fraction | None):
    prepared = []
    for pose, text in samples:
        if target_fps is not None and pose.fps != target_fps:
            pose = resample(pose, ResampleSpec(target_fps))
        prepared.append((pose, text))
    return prepared


# ---------------------------------------------------------------- run config


def _parse_run_config(path: str, overrides: list[str]):
    parser = configparser.ConfigParser()
    read = parser.read(path)
    problems: list[str] = []
    if not read:
        raise ConfigError([f"cannot read config file {path}"])
    for item in overrides:
        key, sep, value = item.partition("=")
        section, _, option = key.partition(".")
        if not sep or not option:
            problems.append(f"--set expects section.key=value, got {item!r}")
            continue
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value)

    def get(section, option, convert, default=None, required=False):
        if not parser.has_option(section, option):
            if required:
                problems.append(f"missing [{section}] {option}")
            return default
        raw = parser.get(section, option)
        try:
            return convert(raw)
        except (ValueError, TypeError) as e:
            problems.append(f"[{section}] {option} = {raw!r}: {e}")
            return default

    def existing_path(kind):
        def convert(raw):
            p = Path(raw)
            if not p.exists():
                raise ValueError(f"{kind} does not exist: {raw}")
            return p

        return convert

    paths = {
        "train_poses": get("paths", "train_poses", existing_path("directory"), required=True),
        "train_text": get("paths", "train_text", existing_path("file"), required=True),
        "dev_poses": get("paths", "dev_poses", existing_path("directory"), required=True),
        "dev_text": get("paths", "dev_text", existing_path("file"), required=True),
        "vocab": get("paths", "vocab", existing_path("file"), required=True),
        "run_dir": get("paths", "run_dir", Path, required=True),
    }
    for opt in ("test_poses", "test_text"):
        if parser.has_option("paths", opt):
            paths[opt] = get("paths", opt, existing_path("path"))

    model_kwargs = {
        "layers": get("model", "layers", int, required=True),
        "heads": get("model", "heads", int, required=True),
        "ffn_dim": get("model", "ffn_dim", int, required=True),
        "embed_dim": get("model", "embed_dim", int, required=True),
        "max_positions": get("model", "max_positions", int, 4096),
        "dropout": get("model", "dropout", float, 0.3),
    }

    augmentation = None
    if get("augment", "enabled", lambda r: r.lower() == "true", False):
        center_raw = get("augment", "center", str, "0.5,0.5")
        try:
            cx, cy = (float(v) for v in center_raw.split(","))
        except ValueError:
            problems.append(f"[augment] center = {center_raw!r}: expected x,y")
            cx, cy = 0.5, 0.5
        augmentation = {
            "sigma": get("augment", "sigma", float, 0.2),
            "center": (cx, cy),
            "enable_rotation": get("augment", "rotation", lambda r: r.lower() == "true", True),
            "enable_shear": get("augment", "shear", lambda r: r.lower() == "true", True),
            "enable_scale": get("augment", "scale", lambda r: r.lower() == "true", True),
        }

    training_kwargs = {
        "max_epochs": get("training", "max_epochs", int, required=True),
        "batch_size": get("training", "batch_size", int, 8),
        "learning_rate": get("training", "learning_rate", float, 2e-3),
        "warmup_updates": get("training", "warmup_updates", int, 100),
        "label_smoothing": get("training", "label_smoothing", float, 0.1),
        "clip_norm": get("training", "clip_norm", float, 1.0),
        "eval_every": get("training", "eval_every", int, 1),
        "patience": get("training", "patience", int, 5),
        "seed": get("training", "seed", int, 0),
        "max_src_frames": get("training", "max_src_frames", int, 4096),
        "dev_max_len": get("training", "dev_max_len", int, 64),
        "fill_value": get("training", "fill", float, 0.0),
    }
    pretrained = get("training", "pretrained", existing_path("checkpoint"))

    decode_kwargs = {
        "beam_size": get("decode", "beam_size", int, 5),
        "max_len": get("decode", "max_len", int, 256),
        "alpha": get("decode", "alpha", float, 1.0),
    }
    target_fps = get("data", "target_fps", Fraction, None)

    if problems:
        raise ConfigError(problems)
    env = _env_seed()
    if env is not None:
        training_kwargs["seed"] = env
    return {
        "paths": paths,
        "model": model_kwargs,
        "training": training_kwargs,
        "pretrained": pretrained,
        "augmentation": augmentation,
        "decode": decode_kwargs,
        "target_fps": target_fps,
    }


def _parse_components(spec: str):
    """Parse ``body=0:9,left-hand=9:30,right-hand=30:51`` span lists.

    The canonical ingest order for upstream estimator dumps is body,
    left-hand, right-hand; spans are kept in the order given.
    """
    from .pose import Component

    components = []
    for part in spec.split(","):
        name, sep, span = part.partition("=")
        start, sep2, end = span.partition(":")
        if not sep or not sep2:
            raise ConfigError([f"bad component span {part!r}, expected name=start:end"])
        components.append(Component(name.strip(), int(start), int(end)))
    return tuple(components)


# ---------------------------------------------------------------- subcommands


def _cmd_ingest(args) -> int:
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        parser = configparser.ConfigParser()
        if not parser.read(args.synthetic):
            return _fail("config", f"cannot read {args.synthetic}", 2)
        sec = parser["synthetic"] if parser.has_section("synthetic") else parser["DEFAULT"]
        templates = tuple(
            line.strip() for line in sec.get("templates", "").splitlines() if line.strip()
        ) or DEFAULT_TEMPLATES
        seed = _env_seed()
        spec = SynthSpec(
            num_pairs=sec.getint("pairs", 32),
            frames_min=sec.getint("frames_min", 24),
            frames_max=sec.getint("frames_max", 48),
            keypoints=sec.getint("keypoints", 5),
            coords=sec.getint("coords", 3),
            fps=Fraction(sec.get("fps", "25")),
            templates=templates,
            seed=seed if seed is not None else sec.getint("seed", 0),
            jitter=sec.getfloat("jitter", 0.004),
        )
        poses, sentences = generate(spec)
        for i, pose in enumerate(poses):
            (out_dir / f"sample_{i:05d}.pose").write_bytes(save_pose(pose))
        (out_dir / "text.txt").write_text("\n".join(sentences) + "\n", encoding="utf-8")
        print(json.dumps({"pairs": len(poses), "output": str(out_dir)}))
        return 0
    if not args.jsonl:
        return _fail("usage", "ingest needs --synthetic or --jsonl", 2)
    fps = Fraction(args.fps)
    components = _parse_components(args.components) if args.components else None
    for src in args.jsonl:
        lines = Path(src).read_text(encoding="utf-8").splitlines()
        pose = read_pose_jsonl(lines, fps, components)
        target = out_dir / (Path(src).stem + ".pose")
        target.write_bytes(save_pose(pose))
    print(json.dumps({"files": len(args.jsonl), "output": str(out_dir)}))
    return 0


def _cmd_validate(args) -> int:
    reports = {}
    clean = True
    for path in _pose_files(args.poses):
        pose = load_pose(path.read_bytes())
        diags = validate(pose)
        clean = clean and not diags
        reports[str(path)] = [
            {
                "code": d.code,
                "severity": d.severity,
                "frame": d.frame,
                "keypoint": d.keypoint,
                "message": d.message,
            }
            for d in diags
        ]
    print(json.dumps(reports, indent=2))
    return 0 if clean else 1


def _cmd_resample(args) -> int:
    spec = ResampleSpec(Fraction(args.fps))
    pose = load_pose(Path(args.input).read_bytes())
    Path(args.output).write_bytes(save_pose(resample(pose, spec)))
    return 0


def _cmd_augment_preview(args) -> int:
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = _env_seed()
    policy = augment_mod.AugmentationPolicy(
        sigma=args.sigma,
        center=(args.center[0], args.center[1]),
        seed=seed if seed is not None else args.seed,
        enable_rotation=not args.no_rotation,
        enable_shear=not args.no_shear,
        enable_scale=not args.no_scale,
    )
    pose = load_pose(Path(args.input).read_bytes())
    rng = np.random.Generator(np.random.PCG64(policy.seed))
    drawn = []
    for i in range(args.count):
        params = augment_mod.sample_params(policy, rng)
        transformed = augment_mod.apply(pose, params, policy.center)
        (out_dir / f"augmented_{i:03d}.pose").write_bytes(save_pose(transformed))
        drawn.append(
            {
                "rotation_angle": params.rotation_angle,
                "shear_factor": params.shear_factor,
                "scale_delta": params.scale_delta,
            }
        )
    (out_dir / "params.json").write_text(json.dumps(drawn, indent=2), encoding="utf-8")
    return 0


def _cmd_train_vocab(args) -> int:
    corpora = [Path(p).read_text(encoding="utf-8") for p in args.input]
    vocab = train_vocab(corpora, args.size)
    Path(args.output).write_text(save_vocab(vocab), encoding="utf-8")
    print(json.dumps({"size": vocab.size, "merges": len(vocab.merges)}))
    return 0


def _cmd_train(args) -> int:
    cfg = _parse_run_config(args.config, args.set or [])
    paths = cfg["paths"]
    vocab = load_vocab(Path(paths["vocab"]).read_text(encoding="utf-8"))
    train_samples = _flatten_all(
        _load_parallel(paths["train_poses"], paths["train_text"]), cfg["target_fps"]
    )
    dev_samples = _flatten_all(
        _load_parallel(paths["dev_poses"], paths["dev_text"]), cfg["target_fps"]
    )
    if not train_samples:
        raise ConfigError(["training set is empty"])
    probe = flatten(train_samples[0][0], [c.name for c in train_samples[0][0].components])
    model_config = ModelConfig(
        input_dim=probe.dim, vocab_size=vocab.size, **cfg["model"]
    )
    augmentation = None
    if cfg["augmentation"] is not None:
        augmentation = augment_mod.AugmentationPolicy(
            seed=cfg["training"]["seed"], **cfg["augmentation"]
        )
    training = TrainingConfig(
        augmentation=augmentation,
        pretrained=str(cfg["pretrained"]) if cfg["pretrained"] else None,
        **cfg["training"],
    )
    checkpoints, log = train(train_samples, dev_samples, model_config, training, vocab)
    run_dir = Path(paths["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    for ckpt in checkpoints:
        save_checkpoint_file(ckpt, run_dir / f"checkpoint_epoch{ckpt.epoch:04d}.ckpt")
    if checkpoints:
        save_checkpoint_file(checkpoints[0], run_dir / "best.ckpt")
    with open(run_dir / "train_log.jsonl", "w", encoding="utf-8") as f:
        for entry in log:
            f.write(json.dumps(entry) + "\n")
    best = checkpoints[0].dev_bleu if checkpoints else None
    print(json.dumps({"checkpoints": len(checkpoints), "best_dev_bleu": best}))
    return 0


def _cmd_average(args) -> int:
    checkpoints = [load_checkpoint_file(p) for p in args.checkpoints]
    if args.best:
        checkpoints = select_best(checkpoints, args.best)
    averaged = average_checkpoints(checkpoints)
    save_checkpoint_file(averaged, args.output)
    print(json.dumps({"averaged": len(checkpoints), "output": args.output}))
    return 0


def _cmd_translate(args) -> int:
    ckpt: Checkpoint = load_checkpoint_file(args.checkpoint)
    vocab = load_vocab(Path(args.vocab).read_text(encoding="utf-8"))
    cfg = DecodeConfig(
        beam_size=args.beam, max_len=args.max_len, alpha=args.alpha,
        repetition_penalty=args.repetition_penalty,
    )
    lines = []
    for path in _pose_files(args.poses):
        pose = load_pose(path.read_bytes())
        if args.target_fps and pose.fps != Fraction(args.target_fps):
            pose = resample(pose, ResampleSpec(Fraction(args.target_fps)))
        feats = flatten(pose, [c.name for c in pose.components])
        hyp = translate(ckpt.params, vocab, feats, cfg)
        lines.append(hyp.text)
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_evaluate(args) -> int:
    hyps = Path(args.hyp).read_text(encoding="utf-8").splitlines()
    refs = Path(args.ref).read_text(encoding="utf-8").splitlines()
    report = {}
    if args.metric in ("bleu", "both"):
        bleu = metrics_mod.bleu4(hyps, refs, smooth=args.smooth)
        report["bleu"] = {
            "score": bleu.bleu,
            "precisions": list(bleu.precisions),
            "brevity_penalty": bleu.brevity_penalty,
            "hyp_len": bleu.hyp_len,
            "ref_len": bleu.ref_len,
            "smooth": bleu.smooth,
        }
    if args.metric in ("chrf", "both"):
        report["chrf_pp"] = metrics_mod.chrf_pp(hyps, refs)
    print(json.dumps(report, indent=2))
    return 0


def _cmd_stats(args) -> int:
    stats = metrics_mod.corpus_stats(
        Path(args.input).read_text(encoding="utf-8"), args.duration_hours
    )
    print(
        json.dumps(
            {
                "duration_hours": stats.duration_hours,
                "unique_words": stats.unique_words,
                "ratio": stats.ratio,
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p2tx", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="synthesize a corpus or convert JSONL pose dumps")
    p.add_argument("--synthetic", help="synthetic corpus spec (INI)")
    p.add_argument("--jsonl", nargs="*", help="JSON-lines pose dump files")
    p.add_argument("--fps", default="25", help="frame rate for JSONL ingests")
    p.add_argument(
        "--components",
        help="component spans for JSONL ingests, e.g. body=0:9,left-hand=9:30",
    )
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("validate", help="report pose invariant violations")
    p.add_argument("poses", nargs="+")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("resample", help="resample a pose file to a target fps")
    p.add_argument("--fps", required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_resample)

    p = sub.add_parser("augment-preview", help="write augmented copies of a pose file")
    p.add_argument("input")
    p.add_argument("--output", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--center", type=float, nargs=2, default=(0.5, 0.5))
    p.add_argument("--no-rotation", action="store_true")
    p.add_argument("--no-shear", action="store_true")
    p.add_argument("--no-scale", action="store_true")
    p.set_defaults(func=_cmd_augment_preview)

    p = sub.add_parser("train-vocab", help="train a subword vocabulary")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_train_vocab)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("average", help="average checkpoint weights")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--best", type=int, help="pick the n best by dev BLEU first")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_average)

    p = sub.add_parser("translate", help="decode pose files to text")
    p.add_argument("poses", nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--repetition-penalty", type=float, default=0.0)
    p.add_argument("--target-fps")
    p.add_argument("--output")
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metric", choices=["bleu", "chrf", "both"], default="both")
    p.add_argument("--smooth", choices=["exp", "none"], default="exp")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("stats", help="corpus duration/vocabulary report")
    p.add_argument("--input", required=True)
    p.add_argument("--duration-hours", type=float, required=True)
    p.set_defaults(func=_cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        for problem in e.problems:
            print(json.dumps({"error": {"type": "config", "message": problem}}), file=sys.stderr)
        return 2
    except Exception as e:  # surface a machine-readable error, nonzero exit
        return _fail(type(e).__name__, str(e))


if __name__ == "__main__":
    sys.exit(main())
