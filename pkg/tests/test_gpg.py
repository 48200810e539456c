import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from granet.geometry import ViewLattice, fibonacci_viewpoints
from granet.gpg import GpgConfig, crop_batch, decode_grasps, grasp_head, init_gpg, predict_view
from granet.nn import ParameterStore
from granet.tensor import Tensor

CFG = GpgConfig()


def _store(cfg=CFG, seed=0):
    s = ParameterStore(seed)
    init_gpg(s, cfg)
    return s


def test_uniform_view_logits_pick_view_zero():
    s = _store()
    s.set("gpg.view.1.weight", np.zeros((128, 300)))
    s.set("gpg.view.1.bias", np.zeros(300))
    _, v = predict_view(s, Tensor(np.ones((3, 256))), 300)
    assert v.tolist() == [0, 0, 0]
    b = np.zeros(300)
    b[17] = 10.0
    s.set("gpg.view.1.bias", b)
    assert predict_view(s, Tensor(np.ones((2, 256))), 300)[1].tolist() == [17, 17]


def test_view_label_of_exact_lattice_vector():
    lat = fibonacci_viewpoints(300)
    assert lat.nearest(lat.vectors[[5, 123, 299]]).tolist() == [5, 123, 299]


def test_zero_head_scores_and_widths():
    s = _store()
    s.set("gpg.head.weight", np.zeros(s["gpg.head.weight"].shape))
    crops = np.random.default_rng(0).normal(size=(3, 64, 3))
    scores, widths = grasp_head(s, crops, CFG)
    assert CFG.cells == 48 and scores.shape == (3, 48) and widths.shape == (3, 48)
    assert not scores.data.any()
    np.testing.assert_allclose(widths.data, CFG.w_max / 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_head_permutation_invariant_and_widths_bounded(seed):
    rng = np.random.default_rng(seed)
    s = _store(seed=seed % 7)
    crops = rng.normal(scale=0.05, size=(2, 64, 3))
    a_s, a_w = grasp_head(s, crops, CFG)
    b_s, b_w = grasp_head(s, crops[:, rng.permutation(64)], CFG)
    np.testing.assert_allclose(a_s.data, b_s.data, atol=1e-12)
    np.testing.assert_allclose(a_w.data, b_w.data, atol=1e-12)
    assert np.all((a_w.data >= 0) & (a_w.data <= CFG.w_max))


def test_crop_batch_flags_empty_crops():
    cloud = np.array([[0.0, 0, 0], [0.01, 0, 0]])
    crops, empty = crop_batch(cloud, np.array([[0.0, 0, 0], [5.0, 5, 5]]),
                              np.array([[1.0, 0, 0], [1.0, 0, 0]]), CFG)
    assert crops.shape == (2, 64, 3)
    assert empty.tolist() == [False, True]
    assert not crops[1].any()


def test_decode_example():
    lat = ViewLattice(vectors=np.array([[1.0, 0, 0]]), count=1)
    p = np.array([[0.1, 0.2, 0.3]])
    scores = np.zeros((1, 48))
    scores[0, 0] = 1.0
    widths = np.full((1, 48), 0.04)
    (g,) = decode_grasps(p, np.array([7]), np.array([0]), scores, widths, lat, CFG)
    np.testing.assert_allclose(g.T, p[0] + [0.01, 0, 0])
    assert g.depth == 0.01 and g.width == 0.04 and g.score == 1.0 and g.point == 7
    np.testing.assert_allclose(g.R[:, 0], [1, 0, 0], atol=1e-12)
    theta = np.arccos(np.clip(g.R[:, 1] @ np.array([0.0, 1, 0]), -1, 1))
    assert theta == pytest.approx(np.pi / 24)


def test_decode_ties_pick_first_cell():
    lat = fibonacci_viewpoints(10)
    (g,) = decode_grasps(np.zeros((1, 3)), np.array([0]), np.array([4]), np.zeros((1, 48)),
                         np.full((1, 48), 0.02), lat, CFG)
    assert g.depth == CFG.depth_bins[0]
    np.testing.assert_allclose(g.R[:, 0], lat.vectors[4])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_decode_sorted_valid_and_within_depth(seed):
    rng = np.random.default_rng(seed)
    lat = fibonacci_viewpoints(30)
    n = 12
    pts = rng.uniform(-0.2, 0.2, size=(n, 3))
    scores = np.round(rng.normal(size=(n, 48)), 1)  # rounding creates ties
    widths = rng.uniform(0, CFG.w_max, size=(n, 48))
    ids = rng.permutation(100)[:n]
    out = decode_grasps(pts, ids, rng.integers(0, 30, n), scores, widths, lat, CFG)
    assert len(out) == n
    keys = [(-g.score, g.point) for g in out]
    assert keys == sorted(keys)
    by_id = dict(zip(ids.tolist(), pts))
    for g in out:
        assert g.is_valid()
        assert np.linalg.norm(g.T - by_id[g.point]) <= max(CFG.depth_bins) + 1e-12
    assert len(decode_grasps(pts, ids, np.zeros(n, int), scores, widths, lat, CFG, full_grid=True)) == n * 48
