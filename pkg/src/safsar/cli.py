"""Command-line surface: dataset generation, training, evaluation, gradient
checking, cache validation, embedding dumps, and parameter counts.

Every subcommand honors --seed and writes exactly one run manifest into its
--out directory (default ``runs/<command>``). Exit codes: 0 success, 1 domain
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .artifacts import (
    dump_embeddings,
    write_eval_report,
    write_loss_trace,
    write_run_manifest,
)
from .cache import MANIFEST_FILE as CACHE_MANIFEST_FILE
from .cache import dataset_from_cache, validate_cache
from .diagnostics import run_pipeline_gradcheck
from .episodic import (
    AugmentConfig,
    Dataset,
    TrainConfig,
    episode_rng,
    evaluate,
    load_dataset,
    sample_episode,
    save_dataset,
    train,
)
from .errors import SafsarError
from .model import ModelConfig
from .pipeline import PipelineDims, load_pipeline, save_pipeline
from .synth import synth_generate

DEFAULT_FUSION_LAYERS = 2  # depth with the best reported scores
DEFAULT_FRAMES = 8
DEFAULT_EVAL_EPISODES = 1000  # desk-scale stand-in for the full 10,000


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fusion-layers", type=int, default=DEFAULT_FUSION_LAYERS,
                   help="fusion transformer depth l")
    p.add_argument("--lambda", dest="lambda_weight", type=float, default=1.0,
                   help="weight of the global classification loss")
    p.add_argument("--temperature", type=float, default=1.0,
                   help="softmax temperature over cosine logits")
    p.add_argument("--ablate-fusion", action="store_true",
                   help="disable the text-video fusion module")
    p.add_argument("--ablate-tlm", action="store_true",
                   help="disable the cross-video adaptation layer")


def _add_dims_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, default=64, help="feature width d")
    p.add_argument("--video-depth", type=int, default=4)
    p.add_argument("--text-depth", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn-ratio", type=int, default=4)
    p.add_argument("--tubelet", type=str, default="2,4,4",
                   help="tubelet extents t,h,w")


def _dims_from_args(args) -> PipelineDims:
    tubelet = tuple(int(x) for x in args.tubelet.split(","))
    if len(tubelet) != 3:
        raise SafsarError(f"--tubelet wants three extents, got {args.tubelet!r}")
    return PipelineDims(
        feature_dim=args.dim,
        video_depth=args.video_depth,
        text_depth=args.text_depth,
        heads=args.heads,
        ffn_ratio=args.ffn_ratio,
        tubelet=tubelet,
    )


def _model_from_args(args) -> ModelConfig:
    return ModelConfig(
        lambda_weight=args.lambda_weight,
        fusion_layers=args.fusion_layers,
        use_fusion=not args.ablate_fusion,
        use_tlm=not args.ablate_tlm,
        temperature=args.temperature,
    )


def load_any_dataset(path: str | Path) -> Dataset:
    """Load either a synthetic clip dataset or a feature cache, by sniffing."""
    p = Path(path)
    if (p / "meta.json").exists():
        return load_dataset(p)
    if (p / CACHE_MANIFEST_FILE).exists():
        return dataset_from_cache(p)
    raise SafsarError(f"{p} holds neither a clip dataset (meta.json) nor a "
                      f"feature cache ({CACHE_MANIFEST_FILE})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safsar")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="generate a synthetic motion dataset")
    g.add_argument("--out", default="runs/gen-synthetic")
    g.add_argument("--classes", type=int, default=17)
    g.add_argument("--items-per-class", type=int, default=20)
    g.add_argument("--frames", type=int, default=DEFAULT_FRAMES)
    g.add_argument("--height", type=int, default=16)
    g.add_argument("--width", type=int, default=16)
    g.add_argument("--train-classes", type=int, default=None)
    g.add_argument("--val-classes", type=int, default=None)
    g.add_argument("--test-classes", type=int, default=None)
    g.add_argument("--noise", type=float, default=0.15)
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="episodic training on a dataset or feature cache")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default="runs/train")
    t.add_argument("--ways", type=int, default=5)
    t.add_argument("--shots", type=int, default=1)
    t.add_argument("--episodes", type=int, default=2000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--frames", type=int, default=DEFAULT_FRAMES)
    t.add_argument("--freeze-depth", type=int, default=0,
                   help="freeze this many leading video layers besides the patch embedding")
    t.add_argument("--precision", choices=("single", "double"), default="single")
    t.add_argument("--flip-prob", type=float, default=0.0)
    t.add_argument("--crop-size", type=int, default=None,
                   help="square training crop; default keeps full frames")
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--no-val-selection", action="store_true")
    _add_model_flags(t)
    _add_dims_flags(t)

    e = sub.add_parser("eval", help="episodic evaluation of trained parameters")
    e.add_argument("--data", required=True)
    e.add_argument("--params", required=True, help="directory written by `safsar train`")
    e.add_argument("--out", default="runs/eval")
    e.add_argument("--split", default="test")
    e.add_argument("--ways", type=int, default=5)
    e.add_argument("--shots", type=int, default=1)
    e.add_argument("--episodes", type=int, default=DEFAULT_EVAL_EPISODES)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--frames", type=int, default=DEFAULT_FRAMES)
    e.add_argument("--workers", type=int, default=1)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    c.add_argument("--out", default="runs/gradcheck")
    c.add_argument("--dim", type=int, default=16)
    c.add_argument("--ways", type=int, default=3)
    c.add_argument("--shots", type=int, default=2)
    c.add_argument("--tokens", type=int, default=5)
    c.add_argument("--fusion-layers", type=int, default=DEFAULT_FUSION_LAYERS)
    c.add_argument("--eps", type=float, default=1e-5)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--samples", type=int, default=4,
                   help="coordinates probed per parameter tensor")
    c.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("validate-cache", help="validate a feature cache directory")
    v.add_argument("path")
    v.add_argument("--out", default="runs/validate-cache")
    v.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("dump-embeddings", help="dump per-episode feature vectors as JSONL")
    d.add_argument("--data", required=True)
    d.add_argument("--params", required=True)
    d.add_argument("--out", default="runs/dump-embeddings")
    d.add_argument("--split", default="test")
    d.add_argument("--ways", type=int, default=5)
    d.add_argument("--shots", type=int, default=1)
    d.add_argument("--episodes", type=int, default=20)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--frames", type=int, default=DEFAULT_FRAMES)

    n = sub.add_parser("param-count", help="parameter counts per module")
    n.add_argument("--out", default="runs/param-count")
    n.add_argument("--params", default=None, help="count a trained pipeline directory")
    n.add_argument("--classes", type=int, default=17)
    n.add_argument("--vocab-size", type=int, default=64)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--feature-mode", action="store_true")
    _add_model_flags(n)
    _add_dims_flags(n)
    return parser


def _cmd_gen_synthetic(args) -> int:
    started = time.time()
    counts = None
    if args.train_classes is not None or args.test_classes is not None:
        counts = (
            args.train_classes or 0,
            args.val_classes or 0,
            args.test_classes or 0,
        )
    dataset = synth_generate(
        args.classes,
        args.items_per_class,
        clip_shape=(args.frames, args.height, args.width),
        seed=args.seed,
        split_counts=counts,
        noise=args.noise,
    )
    save_dataset(dataset, args.out)
    config = {
        "classes": args.classes,
        "items_per_class": args.items_per_class,
        "clip_shape": [args.frames, args.height, args.width],
        "split_counts": list(counts) if counts else None,
        "noise": args.noise,
    }
    write_run_manifest(args.out, "gen-synthetic", config, args.seed,
                       {"dataset": args.out}, started)
    sizes = {name: len(ids) for name, ids in dataset.splits.items()}
    print(f"wrote {len(dataset.items)} clips over {args.classes} classes to {args.out} "
          f"(splits: {sizes})")
    return 0


def _cmd_train(args) -> int:
    started = time.time()
    dataset = load_any_dataset(args.data)
    aug = AugmentConfig(
        enabled=not args.no_augment,
        crop_hw=(args.crop_size, args.crop_size) if args.crop_size else None,
        flip_prob=args.flip_prob,
    )
    config = TrainConfig(
        ways=args.ways,
        shots=args.shots,
        episodes=args.episodes,
        lr=args.lr,
        seed=args.seed,
        frames=args.frames,
        freeze_depth=args.freeze_depth,
        precision=args.precision,
        model=_model_from_args(args),
        dims=_dims_from_args(args),
        augment=aug,
        select_on_val=not args.no_val_selection,
    )
    result = train(dataset, config)
    out = Path(args.out)
    paths = save_pipeline(result.pipeline, out)
    trace_path = write_loss_trace(out / "loss_trace.jsonl", result.trace)
    paths["loss_trace"] = str(trace_path)
    write_run_manifest(out, "train", config.to_dict(), args.seed, paths, started)
    last = result.trace[-1].loss if result.trace else float("nan")
    picked = (
        f", selected episode {result.selected_episode} "
        f"(val acc {result.selected_val_accuracy:.4f})"
        if result.selected_episode is not None
        else ""
    )
    print(f"trained {args.episodes} episodes; final loss {last:.4f}{picked}")
    print(f"artifacts in {out}")
    return 0


def _cmd_eval(args) -> int:
    started = time.time()
    dataset = load_any_dataset(args.data)
    pipe = load_pipeline(args.params)
    report = evaluate(
        dataset, args.split, pipe, args.ways, args.shots, args.episodes,
        seed=args.seed, frames=args.frames, workers=args.workers,
    )
    out = Path(args.out)
    report_path = write_eval_report(out / "eval_report.jsonl", report)
    write_run_manifest(
        out, "eval",
        {"split": args.split, "ways": args.ways, "shots": args.shots,
         "episodes": args.episodes, "frames": args.frames,
         "workers": args.workers, "params": str(args.params),
         "model": pipe.config.to_dict()},
        args.seed, {"report": str(report_path)}, started,
    )
    print(report.accuracy_line())
    return 0


def _cmd_gradcheck(args) -> int:
    started = time.time()
    report = run_pipeline_gradcheck(
        dim=args.dim, ways=args.ways, shots=args.shots, text_len=args.tokens,
        fusion_layers=args.fusion_layers, seed=args.seed, epsilon=args.eps,
        max_coords_per_param=args.samples,
    )
    config = {
        "dim": args.dim, "ways": args.ways, "shots": args.shots,
        "tokens": args.tokens, "fusion_layers": args.fusion_layers,
        "eps": args.eps, "tol": args.tol, "samples": args.samples,
    }
    write_run_manifest(
        args.out, "gradcheck", config, args.seed,
        {"max_rel_error": f"{report.max_rel_error:.6e}"}, started,
    )
    print(
        f"max_rel_error={report.max_rel_error:.6e} param={report.worst_param} "
        f"index={report.worst_index} coords={report.coords_checked}"
    )
    if not report.ok(args.tol):
        print(f"FAIL: exceeds tolerance {args.tol:g}", file=sys.stderr)
        return 1
    return 0


def _cmd_validate_cache(args) -> int:
    started = time.time()
    report = validate_cache(args.path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "cache_report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    write_run_manifest(out, "validate-cache", {"path": str(args.path)}, args.seed,
                       {"report": str(report_path)}, started)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0 if report.ok else 1


def _cmd_dump_embeddings(args) -> int:
    started = time.time()
    dataset = load_any_dataset(args.data)
    pipe = load_pipeline(args.params)
    episodes = [
        sample_episode(dataset, args.split, args.ways, args.shots,
                       episode_rng(args.seed, e), index=e)
        for e in range(args.episodes)
    ]
    out = Path(args.out)
    path = dump_embeddings(out / "embeddings.jsonl", dataset, pipe, episodes,
                           frames=args.frames)
    write_run_manifest(
        out, "dump-embeddings",
        {"split": args.split, "ways": args.ways, "shots": args.shots,
         "episodes": args.episodes, "frames": args.frames},
        args.seed, {"embeddings": str(path)}, started,
    )
    print(f"wrote {args.episodes} episode records to {path}")
    return 0


def _cmd_param_count(args) -> int:
    started = time.time()
    if args.params:
        pipe = load_pipeline(args.params)
    else:
        from .encoders import Vocabulary

        vocab = Vocabulary(
            ["<unk>", "<pad>"] + [f"w{i}" for i in range(max(args.vocab_size - 2, 0))]
        )
        from .pipeline import build_pipeline

        pipe = build_pipeline(
            _dims_from_args(args), num_classes=args.classes, vocab=vocab,
            config=_model_from_args(args), seed=args.seed,
            feature_mode=args.feature_mode,
        )
    counts = pipe.param_counts()
    for group in sorted(k for k in counts if k != "total"):
        print(f"{group} {counts[group]}")
    print(f"total {counts['total']}")
    write_run_manifest(args.out, "param-count",
                       {"from_params": bool(args.params)}, args.seed,
                       {k: str(v) for k, v in counts.items()}, started)
    return 0


_COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "validate-cache": _cmd_validate_cache,
    "dump-embeddings": _cmd_dump_embeddings,
    "param-count": _cmd_param_count,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return _COMMANDS[args.command](args)
    except SafsarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
