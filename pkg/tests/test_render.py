import numpy as np
import pytest

from bovwrecon.errors import InvalidInputError
from bovwrecon.metrics import xcorr
from bovwrecon.pipeline import Codebook, SamplingSpec, WordGrid, corpus_features, image_to_grid, train_codebook
from bovwrecon.render import render_layout
from bovwrecon.synth import synthetic_image


def _cb(patches):
    patches = np.asarray(patches, dtype=float)
    k = patches.shape[0]
    return Codebook(np.eye(k, 128), patches, np.ones(k, dtype=np.int64))


def test_single_cell_is_the_patch():
    patches = np.random.default_rng(0).uniform(size=(3, 32, 32))
    out = render_layout(WordGrid(np.array([[2]])), _cb(patches))
    assert np.array_equal(out, patches[2])


def test_constant_patch_gives_constant_image():
    out = render_layout(WordGrid(np.zeros((4, 5), int)), _cb(np.full((1, 32, 32), 0.3)))
    assert out.shape == (4 * 8 - 8 + 32, 5 * 8 - 8 + 32)
    np.testing.assert_allclose(out, 0.3, atol=1e-15)


def test_two_cells_against_direct_loop():
    rng = np.random.default_rng(1)
    patches = rng.uniform(size=(2, 32, 32))
    out = render_layout(WordGrid(np.array([[0, 1]])), _cb(patches))
    assert out.shape == (32, 40)
    want = np.empty((32, 40))
    for y in range(32):
        for x in range(40):
            vals = []
            if x < 32:
                vals.append(patches[0][y, x])
            if x >= 8:
                vals.append(patches[1][y, x - 8])
            want[y, x] = sum(vals) / len(vals)
    np.testing.assert_allclose(out, want, atol=1e-15)


def test_gaps_are_mid_gray_and_order_free():
    spec = SamplingSpec(patch_size=4, stride=6)  # stride larger than patch leaves gaps
    rng = np.random.default_rng(2)
    patches = rng.uniform(size=(3, 4, 4))
    lay = WordGrid(rng.integers(0, 3, size=(3, 3)), spec)
    out = render_layout(lay, _cb(patches))
    assert out.shape == (16, 16)
    assert np.all(out[4:6, :] == 0.5)
    assert out.min() >= 0 and out.max() <= 1
    # reversing the grid twice changes accumulation order only through the loop; output is fixed
    flipped = WordGrid(lay.labels[::-1, ::-1].copy(), spec)
    np.testing.assert_allclose(render_layout(flipped, _cb(patches))[::-1, ::-1][4:6], 0.5)


def test_render_validation():
    with pytest.raises(InvalidInputError):
        render_layout(WordGrid(np.array([[0]])), _cb(np.zeros((1, 16, 16))))
    with pytest.raises(InvalidInputError):
        render_layout(WordGrid(np.array([[3]])), _cb(np.zeros((1, 32, 32))))


def test_self_codebook_render_is_recognizable():
    img = synthetic_image(np.random.default_rng(10), 64)
    other = synthetic_image(np.random.default_rng(11), 64)
    d, p = corpus_features([img])
    k = len(np.unique(d, axis=0))
    cb = train_codebook(d, p, k, iters=50, seed=0)
    out = render_layout(image_to_grid(img, cb), cb)
    assert xcorr(out, img) > xcorr(out, other)
    assert xcorr(out, img) > 0.9
