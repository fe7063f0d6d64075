"""Frame sampling, augmentation, tokenization, and the two toy encoders."""

import numpy as np
import numpy.testing as npt
import pytest

from safsar.encoders import (
    PAD_ID,
    UNK_ID,
    TokenSequence,
    VideoTensor,
    Vocabulary,
    augment,
    build_text_encoder,
    build_video_encoder,
    frame_indices,
    sample_frames,
    sinusoid_table,
    spacetime_position_codes,
    split_words,
    text_encode,
    tokenize,
    tubelet_tokens,
    video_encode,
)
from safsar.errors import ConfigError, ContractError, DomainError
from safsar.numerics import GradTape, ParamStore, Tensor, backward, dot, grad_check
from safsar.synth import synth_generate


def rng_for(seed):
    return np.random.default_rng(np.random.SeedSequence([seed]))


def random_clip(seed, t=8, h=16, w=16, c=1):
    return VideoTensor(rng_for(seed).random((t, h, w, c)))


# ---------------------------------------------------------------------------
# clips and frame sampling
# ---------------------------------------------------------------------------


def test_video_tensor_rejects_out_of_range_intensities():
    with pytest.raises(DomainError):
        VideoTensor(np.full((2, 4, 4, 1), 1.5))
    with pytest.raises(DomainError):
        VideoTensor(np.zeros((2, 4, 4)))


def test_sample_frames_identity():
    assert frame_indices(8, 8) == list(range(8))


def test_sample_frames_downsample():
    assert frame_indices(16, 8) == [0, 2, 4, 6, 8, 10, 12, 14]


def test_sample_frames_upsample_repeats():
    assert frame_indices(4, 8) == [0, 0, 1, 1, 2, 2, 3, 3]


def test_sample_frames_zero_count_is_domain_error():
    with pytest.raises(DomainError):
        sample_frames(random_clip(0), 0)


@pytest.mark.parametrize("total,count", [(5, 3), (3, 7), (12, 12), (100, 8)])
def test_sample_frames_indices_are_monotone_and_in_range(total, count):
    idx = frame_indices(total, count)
    assert all(0 <= i < total for i in idx)
    assert all(a <= b for a, b in zip(idx, idx[1:]))


def test_sample_frames_preserves_spatial_extents():
    clip = random_clip(1, t=10, h=6, w=7, c=2)
    out = sample_frames(clip, 4)
    assert out.frames.shape == (4, 6, 7, 2)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def test_flip_twice_restores_pixels():
    clip = random_clip(2)
    once = augment(clip, rng_for(0), flip_prob=1.0, jitter=(1.0, 1.0))
    twice = augment(once, rng_for(0), flip_prob=1.0, jitter=(1.0, 1.0))
    npt.assert_array_equal(twice.frames, clip.frames)


def test_full_size_crop_is_identity():
    clip = random_clip(3)
    out = augment(clip, rng_for(1), crop_hw=(16, 16), flip_prob=0.0, jitter=(1.0, 1.0))
    npt.assert_array_equal(out.frames, clip.frames)


def test_augment_deterministic_given_seed():
    clip = random_clip(4)
    a = augment(clip, rng_for(9), crop_hw=(12, 12))
    b = augment(clip, rng_for(9), crop_hw=(12, 12))
    npt.assert_array_equal(a.frames, b.frames)


def test_augment_never_leaves_unit_interval():
    rng = rng_for(5)
    for seed in range(25):
        clip = random_clip(100 + seed)
        out = augment(clip, rng, crop_hw=(12, 10), flip_prob=0.5, jitter=(0.8, 1.2))
        assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0
        assert out.frames.shape == (8, 12, 10, 1)


def test_augment_rejects_oversized_crop():
    with pytest.raises(ConfigError):
        augment(random_clip(6), rng_for(0), crop_hw=(17, 16))


# ---------------------------------------------------------------------------
# tokenization and vocabulary
# ---------------------------------------------------------------------------


def test_tokenize_splits_punctuation():
    vocab = Vocabulary.from_corpus(["Brush hair."])
    seq = tokenize("Brush hair.", vocab)
    assert [vocab.token_of(i) for i in seq.ids] == ["brush", "hair", "."]
    assert len(seq) == 3


def test_tokenize_unknown_word_maps_to_unk():
    vocab = Vocabulary.from_corpus(["known words only"])
    seq = tokenize("zzzqqq", vocab)
    assert seq.ids == [UNK_ID]


def test_tokenize_empty_is_domain_error():
    vocab = Vocabulary.from_corpus(["a"])
    with pytest.raises(DomainError):
        tokenize("   ", vocab)


def test_split_words_lowercases():
    assert split_words("Moving North-East!") == ["moving", "north", "-", "east", "!"]


def test_vocabulary_roundtrip_through_file(tmp_path):
    vocab = Vocabulary.from_corpus(["a blob moving north", "a blob moving south ."])
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.size == vocab.size
    assert loaded.id_of("blob") == vocab.id_of("blob")
    lines = path.read_text().splitlines()
    assert lines[UNK_ID] == "<unk>" and lines[PAD_ID] == "<pad>"


def test_corpus_descriptions_have_zero_unk_tokens():
    dataset = synth_generate(8, 2, seed=0)
    corpus = [dataset.class_descriptions[c] for c in sorted(dataset.class_descriptions)]
    vocab = Vocabulary.from_corpus(corpus)
    for description in corpus:
        seq = tokenize(description, vocab)
        assert UNK_ID not in seq.ids
        assert [vocab.token_of(i) for i in seq.ids] == split_words(description)


# ---------------------------------------------------------------------------
# position codes
# ---------------------------------------------------------------------------


def test_sinusoid_table_values():
    table = sinusoid_table(3, 4)
    assert table.shape == (3, 4)
    npt.assert_allclose(table[0], [0.0, 1.0, 0.0, 1.0], atol=1e-15)
    npt.assert_allclose(table[1, 0], np.sin(1.0), atol=1e-15)


def test_spacetime_codes_distinguish_positions():
    codes = spacetime_position_codes(4, 2, 2, 16)
    assert codes.shape == (16, 16)
    assert len({tuple(np.round(row, 9)) for row in codes}) == 16


# ---------------------------------------------------------------------------
# video encoder
# ---------------------------------------------------------------------------


def test_tubelet_tokens_layout():
    frames = np.arange(2 * 4 * 4 * 1, dtype=np.float64).reshape(2, 4, 4, 1) / 100.0
    toks = tubelet_tokens(VideoTensor(frames), (2, 2, 2))
    assert toks.shape == (4, 8)
    # first tubelet is the top-left 2x2 block of both frames
    npt.assert_allclose(
        toks[0] * 100.0, [0.0, 1.0, 4.0, 5.0, 16.0, 17.0, 20.0, 21.0], atol=1e-12
    )


def test_video_encode_deterministic_and_shaped():
    store = ParamStore()
    enc = build_video_encoder(store, 16, 2, rng_for(0))
    clip = random_clip(7)
    f1 = video_encode(clip, enc)
    f2 = video_encode(clip, enc)
    assert f1.shape == (16,)
    npt.assert_array_equal(f1.data, f2.data)


def test_video_encode_divisibility_error():
    store = ParamStore()
    enc = build_video_encoder(store, 16, 1, rng_for(0), tubelet=(3, 4, 4))
    with pytest.raises(ConfigError):
        video_encode(random_clip(8), enc)


def test_video_encode_is_time_order_sensitive():
    dataset = synth_generate(8, 2, seed=3)
    clip = dataset.items[2].video
    store = ParamStore()
    enc = build_video_encoder(store, 16, 2, rng_for(1))
    forward = video_encode(clip, enc).data
    backward_clip = VideoTensor(clip.frames[::-1].copy())
    reverse = video_encode(backward_clip, enc).data
    assert np.linalg.norm(forward - reverse) > 1e-6


def test_video_encoder_gradcheck_and_frozen_patch_embedding():
    store = ParamStore()
    enc = build_video_encoder(store, 16, 1, rng_for(2))
    store.freeze("video.patch_embed")
    clip = random_clip(9, t=4, h=8, w=8)

    def f(s):
        feat = video_encode(clip, enc)
        return dot(feat, feat)

    report = grad_check(f, store, epsilon=1e-6, max_coords_per_param=4)
    assert report.max_rel_error <= 1e-4
    assert not any(name.startswith("video.patch_embed") for name in report.per_param)

    with GradTape() as tape:
        loss = f(store)
    grads = backward(tape, loss)
    assert enc.patch_w not in grads and enc.patch_b not in grads


# ---------------------------------------------------------------------------
# text encoder
# ---------------------------------------------------------------------------


def test_text_encode_shape_and_purity():
    store = ParamStore()
    enc = build_text_encoder(store, vocab_size=12, dim=16, depth=1, rng=rng_for(3))
    seq = TokenSequence([2, 5, 5, 11])
    a = text_encode(seq, enc)
    b = text_encode(seq, enc)
    assert a.shape == (4, 16)
    npt.assert_array_equal(a.data, b.data)
    single = text_encode(TokenSequence([3]), enc)
    assert single.shape == (1, 16)


def test_text_encode_rejects_out_of_range_ids():
    store = ParamStore()
    enc = build_text_encoder(store, vocab_size=4, dim=16, depth=1, rng=rng_for(4))
    with pytest.raises(ContractError):
        text_encode(TokenSequence([4]), enc)


def test_text_encoder_is_created_fully_frozen():
    store = ParamStore()
    build_text_encoder(store, vocab_size=8, dim=16, depth=2, rng=rng_for(5))
    assert all(not t.requires_grad for _, t in store.items())


def test_text_encoder_receives_no_gradients():
    store = ParamStore()
    enc = build_text_encoder(store, vocab_size=8, dim=16, depth=1, rng=rng_for(6))
    probe = store.add("probe", Tensor(np.zeros(16), requires_grad=True))
    from safsar.numerics import add as t_add, mean_rows

    with GradTape() as tape:
        out = text_encode(TokenSequence([1, 2]), enc)
        loss = dot(mean_rows(out), probe)
        loss = dot(t_add(mean_rows(out), probe), t_add(mean_rows(out), probe))
    grads = backward(tape, loss)
    assert all(t not in grads for _, t in store.frozen())
