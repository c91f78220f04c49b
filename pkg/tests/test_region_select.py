import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from ralu.errors import DomainError, ShapeError
from ralu.latent_grid import LatentGrid, Level
from ralu.region_select import (AffineDecoder, EdgeScoreMap, NormDecoder, canny, gaussian_blur, gaussian_kernel,
                                hysteresis, patch_scores, select_topk, sobel, topk_count, tweedie_terminal)


def square_image(n=64, lo=16, hi=48):
    img = np.zeros((n, n))
    img[lo:hi, lo:hi] = 1.0
    return img


def test_canny_square_recall():
    img = square_image()
    edges = canny(img)
    truth = np.zeros_like(img, dtype=bool)
    truth[16:48, 16:48] = True
    boundary = truth & ~ndimage.binary_erosion(truth)
    near = ndimage.binary_dilation(edges.astype(bool), structure=np.ones((3, 3)))
    recall = (near & boundary).sum() / boundary.sum()
    assert recall >= 0.9
    band = ndimage.binary_dilation(boundary, structure=np.ones((5, 5)))
    assert edges[~band].sum() == 0


@given(st.floats(0.0, 1.0))
def test_canny_constant_image_has_no_edges(v):
    assert canny(np.full((32, 32), v)).sum() == 0


def test_canny_threshold_domain():
    with pytest.raises(DomainError):
        canny(square_image(), 0.2, 0.1)
    with pytest.raises(DomainError):
        canny(square_image(), 0.0, 0.1)
    with pytest.raises(ShapeError):
        canny(np.zeros((2, 2, 2)))


def test_blur_matches_scipy():
    img = np.random.default_rng(0).random((20, 17))
    ref = ndimage.gaussian_filter(img, 1.0, mode="mirror", truncate=3.0)
    np.testing.assert_allclose(gaussian_blur(img, 1.0), ref, atol=1e-12)
    assert gaussian_kernel(1.4).sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(gaussian_blur(img, 0.0), img)


def test_sobel_matches_scipy():
    img = np.random.default_rng(1).random((12, 9))
    gx, gy = sobel(img)
    np.testing.assert_allclose(gx, ndimage.sobel(img, axis=1, mode="nearest"), atol=1e-12)
    np.testing.assert_allclose(gy, ndimage.sobel(img, axis=0, mode="nearest"), atol=1e-12)


def test_hysteresis_connectivity():
    mag = np.zeros((5, 5))
    mag[0, 0] = 1.0       # strong
    mag[1, 1] = 0.5       # weak, diagonal neighbour of strong
    mag[4, 4] = 0.5       # weak, isolated
    out = hysteresis(mag, 0.3, 0.8)
    assert out[0, 0] == 1 and out[1, 1] == 1 and out[4, 4] == 0
    assert hysteresis(np.zeros((3, 3)), 0.1, 0.2).sum() == 0


def test_norm_decoder():
    vals = np.zeros((2, 2, 2))
    vals[:, 0, 0] = [3.0, 4.0]
    img = NormDecoder(footprint=3).decode(LatentGrid(vals, Level.LOW))
    assert img.shape == (6, 6)
    assert img[:3, :3].min() == 1.0 and img[3:, :].max() == 0.0
    flat = NormDecoder(2).decode(LatentGrid(np.ones((1, 2, 2)), Level.LOW))
    assert flat.sum() == 0


def test_affine_decoder(tmp_path):
    path = tmp_path / "dec.json"
    path.write_text(json.dumps({"weights": [0.5, 0.25], "bias": 0.1}))
    dec = AffineDecoder.from_file(path, footprint=1)
    vals = np.stack([np.full((2, 2), 1.0), np.full((2, 2), 4.0)])
    np.testing.assert_allclose(dec.decode(LatentGrid(vals, Level.LOW)), 1.0)
    with pytest.raises(ShapeError):
        dec.decode(LatentGrid(np.ones((3, 2, 2)), Level.LOW))


def test_patch_scores_counts_pixels():
    edges = np.zeros((16, 16), dtype=np.uint8)
    edges[0:8, 8:16] = 1
    edges[9, 1] = 1
    sc = patch_scores(edges, (2, 2), footprint=8)
    np.testing.assert_array_equal(sc.scores, [[0, 64], [1, 0]])
    with pytest.raises(ShapeError):
        patch_scores(edges, (3, 3), footprint=8)


def test_topk_count():
    assert topk_count(0.3, 1024) == 308
    assert topk_count(0.0, 1024) == 0
    assert topk_count(1.0, 1024) == 1024
    assert topk_count(0.5, 3) == 2
    with pytest.raises(DomainError):
        topk_count(1.5, 10)


@given(st.lists(st.integers(0, 3), min_size=9, max_size=9), st.floats(0.0, 1.0))
def test_select_topk_order_and_ties(scores, ratio):
    sm = EdgeScoreMap(3, 3, np.array(scores, dtype=float).reshape(3, 3))
    sel = select_topk(sm, ratio).selected
    assert len(sel) == topk_count(ratio, 9)
    keyed = [(-scores[i], i) for i in sel]
    assert keyed == sorted(keyed)
    rest = [i for i in range(9) if i not in sel]
    if sel and rest:
        assert min((-scores[i], i) for i in rest) > keyed[-1]


def test_tweedie_terminal():
    assert tweedie_terminal(np.array([1.0]), 1.0, np.array([5.0]))[0] == 1.0
    assert tweedie_terminal(np.array([1.0]), 0.5, np.array([2.0]))[0] == 2.0
    with pytest.raises(DomainError):
        tweedie_terminal(np.array([1.0]), -0.1, np.array([1.0]))
