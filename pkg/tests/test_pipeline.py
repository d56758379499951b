import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bovwrecon.errors import InvalidInputError
from bovwrecon.pipeline import (
    DESCRIPTOR_DIM,
    Codebook,
    SamplingSpec,
    WordGrid,
    codebook_bytes,
    corpus_features,
    describe_patches,
    extract_dense_descriptors,
    image_features,
    image_to_grid,
    kmeans,
    pool,
    quantize,
    quantize_many,
    read_codebook,
    round_trip_float32,
    train_codebook,
    write_codebook,
)
from bovwrecon.synth import synthetic_corpus, synthetic_image


def test_default_grid_is_13_by_13():
    img = synthetic_image(np.random.default_rng(0), 128)
    assert SamplingSpec().grid_dims(128, 128) == (13, 13)
    assert extract_dense_descriptors(img).shape == (13, 13, DESCRIPTOR_DIM)


def test_sampling_rejects_incompatible_sizes():
    with pytest.raises(InvalidInputError):
        SamplingSpec().grid_dims(130, 128)
    with pytest.raises(InvalidInputError):
        SamplingSpec().grid_dims(16, 128)
    with pytest.raises(InvalidInputError):
        SamplingSpec(0, 8)
    with pytest.raises(InvalidInputError):
        extract_dense_descriptors(np.zeros((100, 128)))


def test_constant_image_gives_zero_descriptors():
    d = extract_dense_descriptors(np.full((64, 64), 0.5))
    assert not d.any()


def test_brightness_scale_leaves_descriptors_unchanged():
    img = synthetic_image(np.random.default_rng(3), 64) * 0.45
    a = extract_dense_descriptors(img)
    b = extract_dense_descriptors(2.0 * img)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_descriptor_norms_and_clip():
    img = synthetic_image(np.random.default_rng(4), 128)
    d = extract_dense_descriptors(img).reshape(-1, DESCRIPTOR_DIM)
    norms = np.linalg.norm(d, axis=1)
    assert np.all((norms == 0) | (np.abs(norms - 1) <= 1e-6))
    # after renormalization no component can exceed the clip by more than the rescale
    assert d.min() >= 0


def test_descriptor_oracle_single_edge():
    # vertical step edge in the left half: all gradient energy points in +x,
    # i.e. orientation bin 0, in the spatial cells straddling the edge
    p = np.zeros((32, 32))
    p[:, 12:] = 1.0
    d = describe_patches(p).reshape(4, 4, 8)
    assert np.allclose(d[:, :, 1:], 0)
    energy = d[:, :, 0]
    assert np.all(energy[:, 1] > 0) and np.all(energy[:, 0] == 0) and np.all(energy[:, 3] == 0)
    np.testing.assert_allclose(energy[:, 1], 0.5)  # four equal cells after normalization


def test_extraction_is_deterministic():
    img = synthetic_image(np.random.default_rng(5), 64)
    a = extract_dense_descriptors(img)
    b = extract_dense_descriptors(img.copy())
    assert a.tobytes() == b.tobytes()


def test_patches_are_anchored_at_stride_multiples():
    img = np.arange(48 * 40, dtype=float).reshape(40, 48) / (48 * 40)
    spec = SamplingSpec(32, 8)
    _, patches = image_features(img, spec)
    gw, gh = spec.grid_dims(48, 40)
    assert patches.shape == (gw * gh, 32, 32)
    row, col = 1, 2
    np.testing.assert_array_equal(patches[row * gw + col], img[8:40, 16:48])


def _codebook(cents):
    cents = np.asarray(cents, dtype=float)
    k = cents.shape[0]
    return Codebook(cents, np.full((k, 4, 4), 0.5), np.zeros(k, dtype=np.int64))


def test_quantize_exact_match_and_ties():
    rng = np.random.default_rng(0)
    cents = rng.normal(size=(6, 5))
    cb = _codebook(cents)
    assert quantize(cents[3], cb) == 3
    # equidistant from centroids 1 and 4
    cents2 = np.zeros((5, 2))
    cents2[1] = [1, 0]
    cents2[4] = [-1, 0]
    cents2[[0, 2, 3]] = [[5, 5], [6, 6], [7, 7]]
    assert quantize(np.zeros(2), _codebook(cents2)) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_quantize_matches_linear_scan(seed):
    rng = np.random.default_rng(seed)
    cents = rng.integers(-2, 3, size=(7, 3)).astype(float)  # integer grid forces ties
    pts = rng.integers(-2, 3, size=(20, 3)).astype(float)
    cb = _codebook(cents)
    got = quantize_many(pts, cb)
    for p, g in zip(pts, got):
        best, best_d = 0, np.inf
        for i, c in enumerate(cents):
            dist = float(((p - c) ** 2).sum())
            if dist < best_d:
                best, best_d = i, dist
        assert g == best


def test_quantize_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        quantize(np.zeros(3), _codebook(np.zeros((2, 4))))


def test_requantizing_centroids_is_identity():
    cents = np.random.default_rng(1).normal(size=(10, 8))
    assert list(quantize_many(cents, _codebook(cents))) == list(range(10))


def test_pool_examples():
    g = WordGrid(np.array([[0, 1], [1, 1]]))
    assert pool(g, 2).tolist() == [1, 3]
    assert pool(WordGrid(np.zeros((0, 0), dtype=int)), 3).tolist() == [0, 0, 0]
    with pytest.raises(InvalidInputError):
        pool(g, 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_pool_conserves_and_ignores_position(h, w, K, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, K, size=(h, w))
    g = WordGrid(labels)
    hist = pool(g, K)
    assert hist.sum() == h * w
    shuffled = WordGrid(rng.permutation(labels.ravel()).reshape(h, w))
    assert np.array_equal(pool(shuffled, K), hist)


def test_codebook_two_points():
    pts = np.array([[0.0, 1.0], [3.0, -1.0]])
    patches = np.stack([np.zeros((4, 4)), np.ones((4, 4))])
    cb = train_codebook(pts, patches, 2, iters=10, seed=0)
    got = sorted(map(tuple, cb.centroids))
    assert got == sorted(map(tuple, pts))
    assert cb.train_counts.tolist() == [1, 1]


def test_codebook_k1_is_global_mean():
    pts = np.tile([[0.2, 0.4]], (5, 1))
    patches = np.random.default_rng(0).uniform(size=(5, 4, 4))
    cb = train_codebook(pts, patches, 1, iters=5, seed=0)
    np.testing.assert_allclose(cb.centroids[0], [0.2, 0.4])
    np.testing.assert_allclose(cb.mean_patches[0], patches.mean(axis=0))


def test_kmeans_recovers_separated_clusters():
    gen = np.random.default_rng(99)
    means = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 10]], dtype=float)
    pts = np.concatenate([m + gen.normal(0, 0.3, size=(25, 3)) for m in means])
    truth = np.array([pts[i * 25:(i + 1) * 25].mean(axis=0) for i in range(4)])
    for seed in range(20):
        cents = kmeans(pts, 4, 100, seed)
        order = [int(np.argmin(((truth - c) ** 2).sum(1))) for c in cents]
        assert sorted(order) == [0, 1, 2, 3]
        np.testing.assert_allclose(cents, truth[order], atol=1e-6)


def test_kmeans_errors_and_determinism():
    pts = np.random.default_rng(0).normal(size=(30, 4))
    with pytest.raises(InvalidInputError):
        kmeans(pts, 31, 10, 0)
    with pytest.raises(InvalidInputError):
        kmeans(pts, 3, 0, 0)
    assert np.array_equal(kmeans(pts, 5, 20, 7), kmeans(pts, 5, 20, 7))


def test_kmeans_handles_duplicate_points():
    pts = np.array([[0.0, 0.0]] * 6 + [[1.0, 1.0]] * 2)
    cents = kmeans(pts, 3, 10, 0)
    assert cents.shape == (3, 2)
    assert np.isfinite(cents).all()


def test_mean_patches_follow_final_assignment():
    imgs = synthetic_corpus(3, seed=1, size=64)
    d, p = corpus_features(imgs)
    cb = train_codebook(d, p, 8, iters=20, seed=0)
    lab = quantize_many(d, cb)
    for i in range(8):
        if cb.train_counts[i]:
            np.testing.assert_allclose(cb.mean_patches[i], p[lab == i].mean(axis=0))
        else:
            assert np.all(cb.mean_patches[i] == 0.5)
    assert cb.train_counts.sum() == d.shape[0]


def test_texture_corpus_uses_several_words():
    # four flat/striped textures tiled into one image
    yy, xx = np.mgrid[0:64, 0:64]
    tex = [np.full((64, 64), 0.3), (xx // 4 % 2) * 0.8, (yy // 4 % 2) * 0.8, ((xx + yy) // 4 % 2) * 0.8]
    img = np.block([[tex[0][:32, :32], tex[1][:32, :32]], [tex[2][:32, :32], tex[3][:32, :32]]])
    big = np.kron(img, np.ones((2, 2)))  # 128 x 128
    d, p = corpus_features([big])
    cb = train_codebook(d, p, 16, iters=30, seed=0)
    grid = image_to_grid(big, cb)
    assert len(np.unique(grid.labels)) >= 4


def test_codebook_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    cb = Codebook(rng.normal(size=(3, 128)), rng.uniform(size=(3, 8, 8)), np.array([4, 0, 2]))
    path = tmp_path / "cb.bvwc"
    write_codebook(path, cb)
    back = read_codebook(path)
    want = round_trip_float32(cb)
    assert np.array_equal(back.centroids, want.centroids)
    assert np.array_equal(back.mean_patches, want.mean_patches)
    assert back.train_counts.tolist() == [4, 0, 2]
    data = codebook_bytes(cb)
    assert data[:4] == b"BVWC" and len(data) == 16 + 4 * (3 * 128 + 3 * 64 + 3)
    (tmp_path / "bad").write_bytes(data[:-1])
    with pytest.raises(InvalidInputError):
        read_codebook(tmp_path / "bad")


def test_image_to_grid_checks_patch_size():
    cb = _codebook(np.zeros((2, 128)))
    with pytest.raises(InvalidInputError):
        image_to_grid(np.zeros((64, 64)), cb)
