"""Dataset model, episode sampling, the episodic training loop, and evaluation.

Per-episode randomness is derived as a pure function of (seed, episode index)
so traces, bitmaps, and accuracies are reproducible regardless of execution
order or worker-pool size.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .encoders import VideoTensor, Vocabulary, augment, sample_frames, video_encode
from .errors import CapacityError, ConfigError, ContractError, DivergedError
from .model import (
    EpisodeForward,
    ModelConfig,
    forward_episode,
    loss_episode,
    loss_global,
    total_loss,
)
from .numerics import GradTape, Tensor, backward
from .optim import Adam
from .pipeline import Pipeline, PipelineDims, build_pipeline

SPLIT_NAMES = ("train", "val", "test")


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-style derivation: a generator that depends only on (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


# ---------------------------------------------------------------------------
# dataset model
# ---------------------------------------------------------------------------


@dataclass
class DatasetItem:
    item_id: int
    class_id: int
    description: str
    video: VideoTensor | None = None
    feature: np.ndarray | None = None


@dataclass
class Dataset:
    """Items plus a disjoint train/val/test class split.

    Items carry either raw clips ("video" mode) or precomputed feature
    vectors ("feature" mode); class ids are dense in [0, num_classes).
    """

    items: list[DatasetItem]
    class_descriptions: dict[int, str]
    splits: dict[str, frozenset[int]]
    num_classes: int
    text_features: dict[int, np.ndarray] | None = None
    _by_class: dict[int, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.validate()
        by_class: dict[int, list[int]] = {}
        for i, item in enumerate(self.items):
            by_class.setdefault(item.class_id, []).append(i)
        self._by_class = by_class

    def validate(self) -> None:
        seen: set[int] = set()
        for name, classes in self.splits.items():
            overlap = seen & set(classes)
            if overlap:
                raise ContractError(f"classes {sorted(overlap)} appear in two splits")
            seen |= set(classes)
        for item in self.items:
            if not 0 <= item.class_id < self.num_classes:
                raise ContractError(
                    f"item {item.item_id} has class {item.class_id} outside "
                    f"[0, {self.num_classes})"
                )

    @property
    def mode(self) -> str:
        return "video" if self.items and self.items[0].video is not None else "feature"

    def split_classes(self, split: str) -> list[int]:
        if split not in self.splits:
            raise ContractError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return sorted(self.splits[split])

    def class_items(self, class_id: int) -> list[int]:
        return self._by_class.get(class_id, [])

    def check_capacity(self, split: str, ways: int, shots: int) -> list[int]:
        """Classes of the split usable for N-way K-shot; raises on shortfall."""
        classes = self.split_classes(split)
        usable = [c for c in classes if len(self.class_items(c)) >= shots + 1]
        if len(usable) < ways:
            raise CapacityError(
                f"split {split!r} has {len(usable)} classes with >= {shots + 1} items, "
                f"need {ways}"
            )
        return usable


@dataclass
class Episode:
    """One N-way K-shot task: support item indices with labels, plus one query."""

    support: tuple[tuple[int, int], ...]  # (item index, class id)
    query: int
    query_class: int
    class_ids: tuple[int, ...]
    index: int

    def local_label(self, class_id: int) -> int:
        """Relabel a global class id to its position among the episode classes."""
        return self.class_ids.index(class_id)


def sample_episode(
    dataset: Dataset,
    split: str,
    ways: int,
    shots: int,
    rng: np.random.Generator,
    index: int = 0,
) -> Episode:
    """Sample classes, supports, and query uniformly without replacement."""
    if ways < 1 or shots < 1:
        raise ContractError(f"need ways >= 1 and shots >= 1, got {ways}, {shots}")
    usable = dataset.check_capacity(split, ways, shots)
    chosen = sorted(int(c) for c in rng.choice(usable, size=ways, replace=False))
    support: list[tuple[int, int]] = []
    remaining: dict[int, list[int]] = {}
    for c in chosen:
        pool = dataset.class_items(c)
        picked = rng.choice(len(pool), size=shots, replace=False)
        picked_set = set(int(i) for i in picked)
        support.extend((pool[i], c) for i in sorted(picked_set))
        remaining[c] = [pool[i] for i in range(len(pool)) if i not in picked_set]
    query_class = int(chosen[int(rng.integers(0, ways))])
    query_pool = remaining[query_class]
    query = int(query_pool[int(rng.integers(0, len(query_pool)))])
    return Episode(
        support=tuple(support),
        query=query,
        query_class=query_class,
        class_ids=tuple(chosen),
        index=index,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class AugmentConfig:
    """Training-time augmentation knobs; flip defaults off because mirrored
    clips invert direction-defined synthetic classes."""

    enabled: bool = True
    crop_hw: tuple[int, int] | None = None
    flip_prob: float = 0.0
    jitter: tuple[float, float] = (0.8, 1.2)

    def to_dict(self) -> dict:
        return {
            "enabled": self.enabled,
            "crop_hw": list(self.crop_hw) if self.crop_hw else None,
            "flip_prob": self.flip_prob,
            "jitter": list(self.jitter),
        }


@dataclass
class TrainConfig:
    ways: int = 5
    shots: int = 1
    episodes: int = 1000
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    frames: int = 8
    freeze_depth: int = 0
    precision: str = "single"
    model: ModelConfig = field(default_factory=ModelConfig)
    dims: PipelineDims = field(default_factory=PipelineDims)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    val_every: int = 200
    val_episodes: int = 50
    select_on_val: bool = True

    def __post_init__(self):
        if self.ways < 2:
            raise ConfigError(f"need at least 2 ways, got {self.ways}")
        if self.shots < 1:
            raise ConfigError(f"need at least 1 shot, got {self.shots}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")

    def to_dict(self) -> dict:
        return {
            "ways": self.ways,
            "shots": self.shots,
            "episodes": self.episodes,
            "lr": self.lr,
            "betas": list(self.betas),
            "adam_eps": self.adam_eps,
            "seed": self.seed,
            "frames": self.frames,
            "freeze_depth": self.freeze_depth,
            "precision": self.precision,
            "model": self.model.to_dict(),
            "dims": self.dims.to_dict(),
            "augment": self.augment.to_dict(),
            "val_every": self.val_every,
            "val_episodes": self.val_episodes,
            "select_on_val": self.select_on_val,
        }


@dataclass
class TraceEntry:
    episode: int
    loss: float
    episode_loss: float
    global_loss: float

    def to_dict(self) -> dict:
        return {
            "episode": self.episode,
            "loss": self.loss,
            "episode_loss": self.episode_loss,
            "global_loss": self.global_loss,
        }


@dataclass
class TrainResult:
    pipeline: Pipeline
    trace: list[TraceEntry]
    selected_episode: int | None = None
    selected_val_accuracy: float | None = None

    @property
    def losses(self) -> list[float]:
        return [t.loss for t in self.trace]


def _episode_features(
    dataset: Dataset,
    episode: Episode,
    pipe: Pipeline,
    frames: int,
    rng: np.random.Generator | None,
    aug: AugmentConfig | None,
) -> tuple[list[tuple[int, Tensor]], Tensor]:
    """Raw features for every support item and the query, in support order."""

    def encode(item: DatasetItem) -> Tensor:
        if dataset.mode == "feature":
            return Tensor(np.asarray(item.feature))
        clip = sample_frames(item.video, frames)
        if aug is not None and aug.enabled and rng is not None:
            clip = augment(clip, rng, crop_hw=aug.crop_hw,
                           flip_prob=aug.flip_prob, jitter=aug.jitter)
        return video_encode(clip, pipe.video)

    support = [(c, encode(dataset.items[i])) for i, c in episode.support]
    query = encode(dataset.items[episode.query])
    return support, query


def _episode_text_features(
    dataset: Dataset,
    episode: Episode,
    pipe: Pipeline,
    config: ModelConfig,
) -> dict[int, Tensor] | None:
    if not config.use_fusion:
        return None
    out: dict[int, Tensor] = {}
    for c in episode.class_ids:
        if dataset.text_features is not None and c in dataset.text_features:
            out[c] = Tensor(np.asarray(dataset.text_features[c]))
        else:
            out[c] = pipe.text_features_for(c, dataset.class_descriptions[c])
    return out


def run_episode(
    dataset: Dataset,
    episode: Episode,
    pipe: Pipeline,
    frames: int = 8,
    rng: np.random.Generator | None = None,
    aug: AugmentConfig | None = None,
) -> EpisodeForward:
    """Forward one episode through the pipeline (no loss, no gradients)."""
    support, query = _episode_features(dataset, episode, pipe, frames, rng, aug)
    text = _episode_text_features(dataset, episode, pipe, pipe.config)
    return forward_episode(support, query, text, pipe.fusion, pipe.tlm, pipe.config)


def train(dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Episodic training with Adam; deterministic given the config seed."""
    if dataset.mode == "feature":
        feat_dim = len(dataset.items[0].feature)
        if feat_dim != config.dims.feature_dim:
            raise ConfigError(
                f"cached features have dim {feat_dim}, config says "
                f"{config.dims.feature_dim}"
            )
    vocab = Vocabulary.from_corpus(
        [dataset.class_descriptions[c] for c in sorted(dataset.class_descriptions)]
    )
    pipe = build_pipeline(
        config.dims,
        num_classes=dataset.num_classes,
        vocab=vocab,
        config=config.model,
        seed=config.seed,
        precision=config.precision,
        feature_mode=dataset.mode == "feature",
        freeze_depth=config.freeze_depth,
    )
    opt = Adam(pipe.store, lr=config.lr, betas=config.betas, eps=config.adam_eps)
    lam = config.model.lambda_weight
    trace: list[TraceEntry] = []
    best: tuple[float, int, dict[str, np.ndarray]] | None = None
    can_validate = config.select_on_val and _split_usable(
        dataset, "val", config.ways, config.shots
    )

    for e in range(config.episodes):
        rng = episode_rng(config.seed, e)
        episode = sample_episode(dataset, "train", config.ways, config.shots, rng, index=e)
        with GradTape() as tape:
            support, query = _episode_features(
                dataset, episode, pipe, config.frames, rng,
                config.augment if dataset.mode == "video" else None,
            )
            text = _episode_text_features(dataset, episode, pipe, config.model)
            fwd = forward_episode(support, query, text, pipe.fusion, pipe.tlm, config.model)
            l1 = loss_episode(fwd.probs, episode.query_class)
            l2 = loss_global(
                [(f, c) for c, f in support], (query, episode.query_class), pipe.head
            )
            loss = total_loss(l1, l2, lam)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise DivergedError(e, loss_value)
        grads = backward(tape, loss)
        opt.step(grads)
        trace.append(TraceEntry(e, loss_value, l1.item(), l2.item()))

        if can_validate and (e + 1) % config.val_every == 0:
            report = evaluate(
                dataset, "val", pipe, config.ways, config.shots,
                config.val_episodes, seed=config.seed + 1_000_003,
                frames=config.frames,
            )
            if best is None or report.accuracy > best[0]:
                best = (report.accuracy, e, pipe.store.state_arrays())

    if best is not None:
        pipe.store.load_arrays(best[2])
        return TrainResult(pipe, trace, selected_episode=best[1],
                           selected_val_accuracy=best[0])
    return TrainResult(pipe, trace)


def _split_usable(dataset: Dataset, split: str, ways: int, shots: int) -> bool:
    try:
        dataset.check_capacity(split, ways, shots)
        return True
    except (CapacityError, ContractError):
        return False


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    accuracy: float
    ci95: float
    episodes: int
    ways: int
    shots: int
    seed: int
    bitmap: list[bool]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "ci95": self.ci95,
            "episodes": self.episodes,
            "ways": self.ways,
            "shots": self.shots,
            "seed": self.seed,
            "config": self.config,
        }

    def accuracy_line(self) -> str:
        return (
            f"acc={self.accuracy:.6f} ci95={self.ci95:.6f} ways={self.ways} "
            f"shots={self.shots} episodes={self.episodes} seed={self.seed}"
        )


def evaluate_with_predictor(
    dataset: Dataset,
    split: str,
    predict: Callable[[Episode, np.random.Generator], int],
    ways: int,
    shots: int,
    episodes: int,
    seed: int,
    workers: int = 1,
    config_echo: dict | None = None,
) -> EvalReport:
    """Accuracy of an arbitrary per-episode predictor over derived-rng episodes."""
    if episodes < 1:
        raise ContractError(f"need at least 1 episode, got {episodes}")
    dataset.validate()
    dataset.check_capacity(split, ways, shots)

    def one(e: int) -> bool:
        rng = episode_rng(seed, e)
        episode = sample_episode(dataset, split, ways, shots, rng, index=e)
        return predict(episode, rng) == episode.query_class

    if workers <= 1:
        bitmap = [one(e) for e in range(episodes)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            bitmap = list(pool.map(one, range(episodes)))
    accuracy = float(np.mean(bitmap))
    ci95 = 1.96 * float(np.sqrt(accuracy * (1.0 - accuracy) / episodes))
    return EvalReport(
        accuracy=accuracy, ci95=ci95, episodes=episodes, ways=ways,
        shots=shots, seed=seed, bitmap=[bool(b) for b in bitmap],
        config=config_echo or {},
    )


def evaluate(
    dataset: Dataset,
    split: str,
    pipe: Pipeline,
    ways: int,
    shots: int,
    episodes: int,
    seed: int,
    frames: int = 8,
    workers: int = 1,
) -> EvalReport:
    """Model accuracy over derived-rng episodes; no augmentation at inference."""

    def predict(episode: Episode, rng: np.random.Generator) -> int:
        fwd = run_episode(dataset, episode, pipe, frames=frames)
        return fwd.probs.predicted_class()

    echo = {
        "model": pipe.config.to_dict(),
        "dims": pipe.dims.to_dict(),
        "frames": frames,
        "split": split,
    }
    return evaluate_with_predictor(
        dataset, split, predict, ways, shots, episodes, seed,
        workers=workers, config_echo=echo,
    )


# ---------------------------------------------------------------------------
# dataset persistence (video-mode datasets; caches handle feature mode)
# ---------------------------------------------------------------------------

DATASET_META = "meta.json"
DATASET_CLIPS = "clips.npz"


def save_dataset(dataset: Dataset, out_dir: str | Path) -> None:
    if dataset.mode != "video":
        raise ContractError("only video-mode datasets are saved here; use the cache for features")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clips = {f"clip_{item.item_id:06d}": item.video.frames for item in dataset.items}
    np.savez_compressed(out / DATASET_CLIPS, **clips)
    meta = {
        "num_classes": dataset.num_classes,
        "classes": [
            {
                "class_id": c,
                "description": dataset.class_descriptions[c],
                "split": next(
                    (name for name, ids in dataset.splits.items() if c in ids), None
                ),
            }
            for c in sorted(dataset.class_descriptions)
        ],
        "items": [
            {"item_id": item.item_id, "class_id": item.class_id}
            for item in dataset.items
        ],
    }
    (out / DATASET_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(in_dir: str | Path) -> Dataset:
    src = Path(in_dir)
    meta = json.loads((src / DATASET_META).read_text())
    descriptions = {c["class_id"]: c["description"] for c in meta["classes"]}
    splits: dict[str, set[int]] = {name: set() for name in SPLIT_NAMES}
    for c in meta["classes"]:
        if c["split"] is not None:
            splits.setdefault(c["split"], set()).add(c["class_id"])
    items: list[DatasetItem] = []
    with np.load(src / DATASET_CLIPS) as clips:
        for rec in meta["items"]:
            frames = clips[f"clip_{rec['item_id']:06d}"]
            items.append(
                DatasetItem(
                    item_id=rec["item_id"],
                    class_id=rec["class_id"],
                    description=descriptions[rec["class_id"]],
                    video=VideoTensor(frames),
                )
            )
    return Dataset(
        items=items,
        class_descriptions=descriptions,
        splits={k: frozenset(v) for k, v in splits.items()},
        num_classes=meta["num_classes"],
    )
