import numpy as np
import pytest

from promptgar.data import SyntheticTaskSpec, generate_dataset
from promptgar.model import ModelConfig, PromptGAR, collate
from promptgar.nn import F, backward
from promptgar.video import ClipTensor, VideoEncoder, encode_video, frame_times, patchify

D = 16


@pytest.fixture
def enc():
    return VideoEncoder(D, 4, 2, (2, 4, 4), 1, np.random.default_rng(0))


def clip(t, h=8, w=8, seed=0):
    rng = np.random.default_rng(seed)
    return ClipTensor(rng.random((t, h, w, 1)), frame_times(t))


def test_patch_count():
    patches, coords = patchify(clip(4).frames, frame_times(4), (2, 4, 4))
    assert patches.shape == (1, 8, 32)
    assert coords.shape == (1, 8, 3)
    assert coords.min() >= 0 and coords.max() <= 1


def test_constant_clip_gives_identical_patches():
    c = ClipTensor(np.full((4, 8, 8, 1), 0.3), frame_times(4))
    patches, _ = patchify(c.frames, c.times, (2, 4, 4))
    assert (patches == patches[:, :1]).all()


def test_temporal_padding_repeats_last_frame():
    c = clip(6)
    patches, coords = patchify(c.frames, c.times, (4, 4, 4))
    assert patches.shape[1] == 2 * 2 * 2
    # second temporal slot holds frames 4, 5, 5, 5
    x = patches[0, 4].reshape(4, 4, 4, 1)
    assert np.array_equal(x[1], c.frames[5, :4, :4])
    assert np.array_equal(x[3], c.frames[5, :4, :4])
    assert coords[0, 4, 2] == pytest.approx((c.times[4] + 3 * c.times[5]) / 4)


def test_patch_center_coordinates():
    _, coords = patchify(clip(2).frames, frame_times(2), (2, 4, 4))
    assert sorted({tuple(c[:2]) for c in coords[0]}) == [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
    assert np.allclose(coords[0, :, 2], 0.5)


def test_zero_size_and_indivisible():
    with pytest.raises(ValueError):
        ClipTensor(np.zeros((0, 8, 8, 1)), np.zeros(0))
    with pytest.raises(ValueError):
        patchify(np.zeros((1, 2, 7, 8, 1)), np.zeros((1, 2)), (2, 4, 4))


def test_output_shapes(enc):
    vt = encode_video(enc, clip(4))
    assert vt.class_token.shape == (1, D)
    assert vt.features.shape == (1, 8, D)
    assert vt.pos.shape == (1, 8, D)


@pytest.mark.parametrize("t", [1, 3, 8, 16, 32])
def test_variable_length(enc, t):
    vt = encode_video(enc, clip(t))
    assert vt.features.shape == (1, ((t + 1) // 2) * 4, D)


def test_constant_clip_patch_permutation_keeps_class_token(enc):
    c = ClipTensor(np.full((4, 8, 8, 1), 0.7), frame_times(4))
    patches, coords = patchify(c.frames, c.times, enc.patch)
    a = enc.encode_tokens(patches, coords).class_token.data
    perm = np.random.default_rng(1).permutation(patches.shape[1])
    b = enc.encode_tokens(patches[:, perm], coords[:, perm]).class_token.data
    assert np.abs(a - b).max() < 1e-9


def test_class_token_path_gets_gradients():
    spec = SyntheticTaskSpec(min_instances=3, max_instances=3)
    clips, recs = generate_dataset(spec, range(4), n_frames=4)
    model = PromptGAR(ModelConfig(dim=16, n_pooled=2, heads=2, decoder_layers=1, encoder_blocks=1), seed=0)
    batch = collate(clips, recs)
    backward(F.cross_entropy(model(batch).logits, batch.labels))
    for name in ("video.cls", "video.embed.weight", "video.blocks.0.attn.q.weight", "head.linear.weight"):
        g = model.parameters()[name].grad
        assert g is not None and np.abs(g).max() > 0, name
