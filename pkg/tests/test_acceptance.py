"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The heavyweight criteria share one synthetic dataset and one set of trained
models through module-scoped fixtures. Tolerances are pinned here and nowhere
else.
"""

import math
import struct
import time

import numpy as np
import pytest

from safsar.cache import BLOB_FILE, MANIFEST_FILE, read_cache, write_cache
from safsar.diagnostics import run_pipeline_gradcheck
from safsar.episodic import (
    TrainConfig,
    evaluate,
    evaluate_with_predictor,
    train,
)
from safsar.errors import CacheError
from safsar.model import (
    AdaptedFeatures,
    GlobalHead,
    ModelConfig,
    class_prototypes,
    classify,
    cosine,
    forward_episode,
    loss_episode,
    loss_global,
    mm_fuse,
    total_loss,
)
from safsar.numerics import ParamStore, Tensor
from safsar.pipeline import PipelineDims
from safsar.synth import nearest_centroid_accuracy, synth_generate
from safsar.transformer import encoder_stack, init_encoder_layer, init_encoder_stack

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-10
PROPERTY_CASES = 1000
LEARNABILITY_BAR = 0.20 + 0.30
LEARNABILITY_EVAL_EPISODES = 500
LEARNABILITY_TRAIN_EPISODES = 2000
LEARNABILITY_BUDGET_S = 15 * 60
GRAD_SUITE_BUDGET_S = 2 * 60
ABLATION_EVAL_EPISODES = 1000
ABLATION_SEEDS = (0, 1, 2)

ACCEPT_DIMS = PipelineDims(feature_dim=32, video_depth=2, text_depth=2, heads=4,
                           ffn_ratio=4, tubelet=(2, 4, 4))
# temperature 0.25 sharpens the bounded cosine logits for toy-scale training;
# a non-default value, logged here and in every run manifest
ACCEPT_TEMPERATURE = 0.25


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def rng_for(seed):
    return np.random.default_rng(np.random.SeedSequence([seed]))


@pytest.fixture(scope="module")
def accept_dataset():
    return synth_generate(17, 20, clip_shape=(8, 16, 16), seed=1,
                          split_counts=(12, 0, 5))


@pytest.fixture(scope="module")
def model_zoo(accept_dataset):
    """Trained pipelines keyed by (seed, full-or-baseline); trained lazily."""
    cache: dict[tuple[int, bool], tuple] = {}

    def get(seed: int, full: bool):
        key = (seed, full)
        if key not in cache:
            config = TrainConfig(
                ways=5, shots=1, episodes=LEARNABILITY_TRAIN_EPISODES,
                seed=seed, frames=8,
                model=ModelConfig(use_fusion=full, use_tlm=full, fusion_layers=2,
                                  temperature=ACCEPT_TEMPERATURE),
                dims=ACCEPT_DIMS, select_on_val=False,
            )
            started = time.time()
            result = train(accept_dataset, config)
            cache[key] = (result, time.time() - started)
        return cache[key]

    return get


# ---------------------------------------------------------------------------
# criterion: gradient suite
# ---------------------------------------------------------------------------


def test_criterion_gradient_suite():
    started = time.time()
    worst = 0.0
    for seed in range(10):
        rep = run_pipeline_gradcheck(
            dim=16, ways=3, shots=2, text_len=5, fusion_layers=2, seed=seed,
            epsilon=1e-5, max_coords_per_param=4,
        )
        worst = max(worst, rep.max_rel_error)
    elapsed = time.time() - started
    ok = worst <= GRAD_TOL and elapsed < GRAD_SUITE_BUDGET_S
    report("gradient-suite",
           ok, f"max rel error {worst:.3e} over 10 seeds in {elapsed:.0f}s "
               f"(tol {GRAD_TOL:g}, budget {GRAD_SUITE_BUDGET_S}s)")
    assert worst <= GRAD_TOL
    assert elapsed < GRAD_SUITE_BUDGET_S


# ---------------------------------------------------------------------------
# criterion: equation oracles (1,000 random instances each)
# ---------------------------------------------------------------------------


def _softmax_np(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def test_criterion_equation_oracles():
    rng = rng_for(777)
    worst = {"prototypes": 0.0, "cosine": 0.0, "classify": 0.0,
             "loss_episode": 0.0, "loss_global": 0.0, "total_loss": 0.0}
    for _ in range(PROPERTY_CASES):
        d = int(rng.integers(3, 9))
        n = int(rng.integers(2, 6))
        k = int(rng.integers(1, 4))

        support = [(c, Tensor(rng.standard_normal(d)))
                   for c in range(n) for _ in range(k)]
        protos = class_prototypes(support, ways=n, shots=k)
        for c in range(n):
            group = np.stack([f.data for cc, f in support if cc == c])
            worst["prototypes"] = max(
                worst["prototypes"],
                np.abs(protos[c].data - group.mean(axis=0)).max(),
            )

        f1, f2 = rng.standard_normal(d), rng.standard_normal(d)
        got = cosine(Tensor(f1), Tensor(f2)).item()
        want = float(f1 @ f2 / (np.linalg.norm(f1) * np.linalg.norm(f2)))
        worst["cosine"] = max(worst["cosine"], abs(got - want))

        supports = {c: Tensor(rng.standard_normal(d)) for c in range(n)}
        query = Tensor(rng.standard_normal(d))
        probs = classify(AdaptedFeatures(supports=supports, query=query))
        sims = np.array([
            supports[c].data @ query.data
            / (np.linalg.norm(supports[c].data) * np.linalg.norm(query.data))
            for c in range(n)
        ])
        want_p = _softmax_np(sims)
        worst["classify"] = max(worst["classify"],
                                np.abs(probs.probs.data - want_p).max())

        true_class = int(rng.integers(0, n))
        got_l1 = loss_episode(probs, true_class).item()
        worst["loss_episode"] = max(worst["loss_episode"],
                                    abs(got_l1 + math.log(want_p[true_class])))

        c_total = int(rng.integers(n, n + 5))
        head = GlobalHead(w=Tensor(rng.standard_normal((c_total, d))))
        sup_feats = [(Tensor(rng.standard_normal(d)), int(rng.integers(0, c_total)))
                     for _ in range(n * k)]
        q_feat = (Tensor(rng.standard_normal(d)), int(rng.integers(0, c_total)))

        def ce(f, y):
            return -math.log(_softmax_np(head.w.data @ f.data)[y])

        want_l2 = sum(ce(f, y) for f, y in sup_feats) / (n * k) + ce(*q_feat)
        got_l2 = loss_global(sup_feats, q_feat, head).item()
        worst["loss_global"] = max(worst["loss_global"], abs(got_l2 - want_l2))

        lam = float(rng.uniform(0, 3))
        l1t, l2t = Tensor(np.asarray(got_l1)), Tensor(np.asarray(got_l2))
        worst["total_loss"] = max(
            worst["total_loss"],
            abs(total_loss(l1t, l2t, lam).item() - (got_l1 + lam * got_l2)),
        )

    bad = {k: v for k, v in worst.items() if v > ORACLE_TOL}
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
    report("equation-oracles", not bad,
           f"{PROPERTY_CASES} instances each; worst abs error {detail} (tol {ORACLE_TOL:g})")
    assert not bad, bad


# ---------------------------------------------------------------------------
# criterion: structural invariants (1,000 cases each, zero failures)
# ---------------------------------------------------------------------------


def test_criterion_structural_invariants():
    rng = rng_for(888)
    failures = []

    from safsar.numerics import softmax as t_softmax

    for i in range(PROPERTY_CASES):
        v = rng.uniform(-50, 50, size=int(rng.integers(1, 9)))
        p = t_softmax(Tensor(v)).data
        if abs(p.sum() - 1.0) > 1e-12 or not (np.all(p > 0) and np.all(p < 1 + 1e-15)):
            failures.append(f"softmax case {i}")
            break

    for i in range(PROPERTY_CASES):
        f1, f2 = rng.standard_normal(5), rng.standard_normal(5)
        alpha = float(rng.uniform(0.05, 20.0))
        a = cosine(Tensor(alpha * f1), Tensor(f2)).item()
        b = cosine(Tensor(f1), Tensor(f2)).item()
        if abs(a - b) > 1e-12 or not -1.0 - 1e-12 <= b <= 1.0 + 1e-12:
            failures.append(f"cosine case {i}")
            break

    base_feats = [rng.standard_normal(6) for _ in range(5)]
    base_proto = class_prototypes([(0, Tensor(f)) for f in base_feats])[0].data
    for i in range(PROPERTY_CASES):
        perm = rng.permutation(5)
        shuffled = class_prototypes([(0, Tensor(base_feats[j])) for j in perm])[0].data
        if np.abs(shuffled - base_proto).max() > 1e-12:
            failures.append(f"prototype-permutation case {i}")
            break

    store = ParamStore()
    stack = init_encoder_stack(store, "enc", 8, 1, rng_for(11), heads=2)
    for i in range(PROPERTY_CASES):
        x = rng.standard_normal((4, 8))
        perm = rng.permutation(4)
        direct = encoder_stack(Tensor(x[perm]), stack).data
        permuted = encoder_stack(Tensor(x), stack).data[perm]
        if np.abs(direct - permuted).max() > 1e-8:
            failures.append(f"stack-equivariance case {i}")
            break

    from safsar.transformer import EncoderStackParams

    empty = EncoderStackParams(layers=[])
    for i in range(PROPERTY_CASES):
        proto = Tensor(rng.standard_normal(8))
        text = Tensor(rng.standard_normal((int(rng.integers(1, 6)), 8)))
        out = mm_fuse(proto, text, empty)
        if not (np.array_equal(out.fused.data, proto.data)
                and np.array_equal(out.text_out.data, text.data)):
            failures.append(f"fusion-identity case {i}")
            break

    store2 = ParamStore()
    fusion = init_encoder_stack(store2, "fusion", 8, 1, rng_for(12), heads=2)
    tlm = init_encoder_layer(store2, "tlm", 8, rng_for(13), heads=2)
    config = ModelConfig(fusion_layers=1)
    for i in range(PROPERTY_CASES // 10):  # heavier: 100 full forward pairs
        support = [(c, Tensor(rng.standard_normal(8))) for c in range(3) for _ in range(2)]
        query = Tensor(rng.standard_normal(8))
        text = {c: Tensor(rng.standard_normal((3, 8))) for c in range(3)}
        base = forward_episode(support, query, text, fusion, tlm, config)
        perm = rng.permutation(len(support))
        fwd = forward_episode([support[j] for j in perm], query, text, fusion, tlm, config)
        if (fwd.probs.class_ids != base.probs.class_ids
                or np.abs(fwd.probs.probs.data - base.probs.probs.data).max() > 1e-10
                or fwd.probs.predicted_class() != base.probs.predicted_class()):
            failures.append(f"argmax-reordering case {i}")
            break

    report("structural-invariants", not failures,
           f"{PROPERTY_CASES} cases per property, zero failures required"
           + (f"; first failure {failures[0]}" if failures else ""))
    assert not failures, failures


# ---------------------------------------------------------------------------
# criterion: freezing contract (10 Adam steps, first-6-of-12 mode)
# ---------------------------------------------------------------------------


def test_criterion_freezing_contract():
    dataset = synth_generate(6, 3, clip_shape=(4, 8, 8), seed=5,
                             split_counts=(4, 0, 2))
    dims = PipelineDims(feature_dim=16, video_depth=12, text_depth=2, heads=4,
                        ffn_ratio=2, tubelet=(2, 4, 4))
    config = TrainConfig(ways=3, shots=1, episodes=10, seed=3, frames=4,
                         freeze_depth=6, precision="double",
                         model=ModelConfig(fusion_layers=1),
                         dims=dims, select_on_val=False)
    # the zero-episode run reproduces the bit-exact initial parameter state
    zero_config = TrainConfig(ways=3, shots=1, episodes=0, seed=3, frames=4,
                              freeze_depth=6, precision="double",
                              model=ModelConfig(fusion_layers=1),
                              dims=dims, select_on_val=False)
    initial = train(dataset, zero_config).pipeline.store
    trained = train(dataset, config).pipeline.store

    frozen_ok, changed_ok = [], []
    for name, tensor in initial.items():
        same = np.array_equal(trained[name].data, tensor.data)
        if not trained[name].requires_grad:
            frozen_ok.append((name, same))
        else:
            changed_ok.append((name, not same))
    frozen_names = [n for n, _ in frozen_ok]
    assert any(n.startswith("video.patch_embed") for n in frozen_names)
    assert any(n.startswith("video.layers.5.") for n in frozen_names)
    assert not any(n.startswith("video.layers.6.") for n in frozen_names)
    assert any(n.startswith("text.") for n in frozen_names)

    bad_frozen = [n for n, same in frozen_ok if not same]
    bad_trained = [n for n, moved in changed_ok if not moved]
    ok = not bad_frozen and not bad_trained
    report("freezing-contract", ok,
           f"{len(frozen_ok)} frozen tensors bitwise unchanged, "
           f"{len(changed_ok)} trainable tensors all moved after 10 Adam steps"
           + (f"; stuck={bad_trained[:3]} leaked={bad_frozen[:3]}" if not ok else ""))
    assert not bad_frozen, bad_frozen
    assert not bad_trained, bad_trained


# ---------------------------------------------------------------------------
# criterion: synthetic learnability
# ---------------------------------------------------------------------------


def test_criterion_synthetic_learnability(accept_dataset, model_zoo):
    oracle = nearest_centroid_accuracy(accept_dataset)
    assert oracle >= 0.95, f"statistic oracle only separates {oracle:.3f}"

    started = time.time()
    result, train_time = model_zoo(0, True)
    rep = evaluate(accept_dataset, "test", result.pipeline, ways=5, shots=1,
                   episodes=LEARNABILITY_EVAL_EPISODES, seed=100)
    elapsed = train_time + (time.time() - started)
    ok = rep.accuracy >= LEARNABILITY_BAR and elapsed <= LEARNABILITY_BUDGET_S
    report("synthetic-learnability", ok,
           f"oracle {oracle:.3f} >= 0.95; 5-way 1-shot test acc {rep.accuracy:.3f} "
           f"(chance 0.20, bar {LEARNABILITY_BAR:.2f}) after "
           f"{LEARNABILITY_TRAIN_EPISODES} episodes in {elapsed:.0f}s "
           f"(budget {LEARNABILITY_BUDGET_S}s)")
    assert rep.accuracy >= LEARNABILITY_BAR
    assert elapsed <= LEARNABILITY_BUDGET_S


# ---------------------------------------------------------------------------
# criterion: ablation directionality
# ---------------------------------------------------------------------------


def test_criterion_ablation_directionality(accept_dataset, model_zoo):
    full_accs, base_accs = [], []
    for seed in ABLATION_SEEDS:
        full_result, _ = model_zoo(seed, True)
        base_result, _ = model_zoo(seed, False)
        full_accs.append(
            evaluate(accept_dataset, "test", full_result.pipeline, 5, 1,
                     ABLATION_EVAL_EPISODES, seed=seed + 100).accuracy
        )
        base_accs.append(
            evaluate(accept_dataset, "test", base_result.pipeline, 5, 1,
                     ABLATION_EVAL_EPISODES, seed=seed + 100).accuracy
        )
    full_mean, base_mean = float(np.mean(full_accs)), float(np.mean(base_accs))
    ok = full_mean >= base_mean
    report("ablation-directionality", ok,
           f"full {full_mean:.4f} vs no-fusion/no-tlm {base_mean:.4f} over seeds "
           f"{ABLATION_SEEDS} at {ABLATION_EVAL_EPISODES} episodes "
           f"(full per-seed {['%.3f' % a for a in full_accs]}, "
           f"baseline {['%.3f' % a for a in base_accs]})")
    assert full_mean >= base_mean


# ---------------------------------------------------------------------------
# criterion: determinism
# ---------------------------------------------------------------------------


def test_criterion_determinism(tmp_path):
    dataset = synth_generate(8, 4, clip_shape=(4, 8, 8), seed=7,
                             split_counts=(5, 0, 3))
    dims = PipelineDims(feature_dim=16, video_depth=1, text_depth=1, heads=2,
                        ffn_ratio=2, tubelet=(2, 4, 4))
    config = dict(ways=3, shots=1, episodes=8, seed=11, frames=4,
                  model=ModelConfig(fusion_layers=1), dims=dims,
                  select_on_val=False, precision="single")
    a = train(dataset, TrainConfig(**config))
    b = train(dataset, TrainConfig(**config))
    traces_equal = [t.loss for t in a.trace] == [t.loss for t in b.trace]

    rep1 = evaluate(dataset, "test", a.pipeline, 3, 1, 60, seed=2, workers=1)
    rep2 = evaluate(dataset, "test", a.pipeline, 3, 1, 60, seed=2, workers=1)
    rep4 = evaluate(dataset, "test", a.pipeline, 3, 1, 60, seed=2, workers=4)
    bitmaps_equal = rep1.bitmap == rep2.bitmap
    workers_equal = rep1.bitmap == rep4.bitmap and rep1.accuracy == rep4.accuracy

    feats = {i: np.float32(i) * np.ones(4, np.float32) for i in range(4)}
    cls = {0: ("a", "train"), 1: ("b", "test")}
    write_cache(feats, None, cls, {i: i % 2 for i in range(4)}, tmp_path / "c1")
    write_cache(feats, None, cls, {i: i % 2 for i in range(4)}, tmp_path / "c2")
    cache_equal = (
        (tmp_path / "c1" / BLOB_FILE).read_bytes() == (tmp_path / "c2" / BLOB_FILE).read_bytes()
        and (tmp_path / "c1" / MANIFEST_FILE).read_bytes()
        == (tmp_path / "c2" / MANIFEST_FILE).read_bytes()
    )

    ok = traces_equal and bitmaps_equal and workers_equal and cache_equal
    report("determinism", ok,
           f"loss traces identical={traces_equal}, bitmaps identical={bitmaps_equal}, "
           f"worker-pool invariant={workers_equal}, cache bytes identical={cache_equal}")
    assert ok


# ---------------------------------------------------------------------------
# criterion: cache round-trip and fuzzing
# ---------------------------------------------------------------------------


def test_criterion_cache_roundtrip(tmp_path):
    rng = rng_for(31)
    feats = {i: rng.standard_normal(8).astype(np.float32) for i in range(10)}
    text = {c: rng.standard_normal((4, 8)).astype(np.float32) for c in range(3)}
    cls = {c: (f"class {c}", "train" if c else "test") for c in range(3)}
    write_cache(feats, text, cls, {i: i % 3 for i in range(10)}, tmp_path / "c")
    data = read_cache(tmp_path / "c")
    roundtrip = all(np.array_equal(data.features[i], feats[i]) for i in feats) and all(
        np.array_equal(data.text_features[c], text[c]) for c in text
    )

    blob = tmp_path / "c" / BLOB_FILE
    pristine = blob.read_bytes()
    untyped = 0
    for trial in range(100):
        raw = bytearray(pristine)
        mode = trial % 4
        if mode == 0:
            for _ in range(int(rng.integers(1, 6))):
                raw[int(rng.integers(0, 20))] = int(rng.integers(0, 256))
        elif mode == 1:
            raw = raw[: int(rng.integers(0, len(raw)))]
        elif mode == 2:
            raw[12:20] = struct.pack("<Q", int(rng.integers(1, 2**50)))
        else:
            raw[4:12] = struct.pack("<II", int(rng.integers(0, 1000)),
                                    int(rng.integers(0, 2**31)))
        blob.write_bytes(bytes(raw))
        try:
            read_cache(tmp_path / "c")
        except CacheError:
            pass
        except Exception:  # noqa: BLE001
            untyped += 1
    blob.write_bytes(pristine)
    ok = roundtrip and untyped == 0
    report("cache-roundtrip", ok,
           f"bitwise round trip={roundtrip}; 100 fuzzed headers, "
           f"{untyped} untyped failures (must be 0)")
    assert ok


# ---------------------------------------------------------------------------
# criterion: statistical sanity
# ---------------------------------------------------------------------------


def test_criterion_statistical_sanity():
    rng = rng_for(17)
    centers = rng.standard_normal((10, 4))
    from safsar.episodic import Dataset, DatasetItem

    items = [
        DatasetItem(item_id=i, class_id=i % 10, description=f"c{i % 10}",
                    feature=centers[i % 10] + 0.01 * rng.standard_normal(4))
        for i in range(30)
    ]
    dataset = Dataset(
        items=items,
        class_descriptions={c: f"c{c}" for c in range(10)},
        splits={"train": frozenset(range(10)), "val": frozenset(),
                "test": frozenset()},
        num_classes=10,
    )

    def uniform(episode, rng_e):
        return int(rng_e.choice(episode.class_ids))

    rep = evaluate_with_predictor(dataset, "train", uniform, ways=5, shots=1,
                                  episodes=10_000, seed=23)
    ok = 0.185 <= rep.accuracy <= 0.215
    report("statistical-sanity", ok,
           f"uniform predictor at N=5, E=10000: acc {rep.accuracy:.4f} "
           f"(must lie in [0.185, 0.215])")
    assert ok
