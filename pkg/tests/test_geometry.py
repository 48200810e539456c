import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from granet.geometry import (PointCloud, align_x_to, assemble_rotation, cylinder_crop,
                             farthest_point_sampling, fibonacci_viewpoints, knn_graph,
                             normalized_adjacency_powers, roll_about_x)


def brute_knn(points, k):
    n = len(points)
    out = []
    for i in range(n):
        d = [(float(np.sum((points[i] - points[j]) ** 2)), j) for j in range(n) if j != i]
        out.append([j for _, j in sorted(d)[:k]])
    return out


def test_knn_line_example():
    g = knn_graph(np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]]), 1)
    assert list(zip(g.src, g.dst)) == [(0, 1), (1, 0), (2, 1)]


def test_knn_complete_graph():
    pts = np.random.default_rng(0).normal(size=(6, 3))
    g = knn_graph(pts, 5)
    assert {(int(a), int(b)) for a, b in zip(g.src, g.dst)} == {(a, b) for a in range(6) for b in range(6) if a != b}


def test_knn_coincident_neighbors_lower_index_first():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
    g = knn_graph(pts, 1)
    assert g.dst[0] == 1


def test_knn_errors():
    with pytest.raises(ValueError):
        knn_graph(np.zeros((3, 3)), 3)
    with pytest.raises(ValueError):
        knn_graph(np.zeros((1, 3)), 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 60), st.integers(1, 4))
def test_knn_matches_brute_force(seed, n, k):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    g = knn_graph(pts, k, chunk=7)
    assert np.array_equal(g.dst.reshape(n, k), np.array(brute_knn(pts, k)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_knn_permutation_consistent(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 3))
    perm = rng.permutation(30)
    g = knn_graph(pts, 4)
    gp = knn_graph(pts[perm], 4)
    edges = {(int(a), int(b)) for a, b in zip(g.src, g.dst)}
    mapped = {(int(perm[a]), int(perm[b])) for a, b in zip(gp.src, gp.dst)}
    assert edges == mapped


def test_fps_line_example():
    pts = np.stack([np.arange(10.0), np.zeros(10), np.zeros(10)], 1)
    assert farthest_point_sampling(pts, 3, 0).tolist() == [0, 9, 4]


def test_fps_trivial_cases():
    pts = np.random.default_rng(0).normal(size=(12, 3))
    assert farthest_point_sampling(pts, 1, 5).tolist() == [5]
    full = farthest_point_sampling(pts, 12, 3)
    assert full[0] == 3 and sorted(full.tolist()) == list(range(12))
    with pytest.raises(ValueError):
        farthest_point_sampling(pts, 13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fps_covering_radius_non_increasing(seed):
    pts = np.random.default_rng(seed).normal(size=(40, 3))
    order = farthest_point_sampling(pts, 40)
    radii = []
    for m in range(1, 41):
        d = np.linalg.norm(pts[:, None] - pts[order[:m]][None], axis=2).min(axis=1)
        radii.append(d.max())
    assert all(a >= b for a, b in zip(radii, radii[1:]))


def test_adjacency_two_nodes():
    g = normalized_adjacency_powers(knn_graph(np.array([[0.0, 0, 0], [1.0, 0, 0]]), 1), 2)
    np.testing.assert_allclose(g.power(1).toarray(), [[0, 1], [1, 0]])
    np.testing.assert_allclose(g.power(2).toarray(), np.eye(2))


def test_adjacency_star_and_isolated_node():
    from granet.geometry import SceneGraph
    g = SceneGraph(nodes=np.arange(4), positions=np.zeros((4, 3)), src=np.array([0, 0]),
                   dst=np.array([1, 2]), weights=np.ones(2))
    normalized_adjacency_powers(g, 3)
    a = g.power(1).toarray()
    assert a[0, 1] == pytest.approx(1 / np.sqrt(2))
    for q in (1, 2, 3):
        m = g.power(q).toarray()
        assert not m[3].any() and not m[:, 3].any()


def test_power_requires_cached_hops():
    g = normalized_adjacency_powers(knn_graph(np.random.default_rng(0).normal(size=(5, 3)), 2), 2)
    with pytest.raises(ValueError):
        g.power(3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_adjacency_symmetric_nonnegative_contractive(seed):
    g = normalized_adjacency_powers(knn_graph(np.random.default_rng(seed).normal(size=(40, 3)), 5), 4)
    for q in range(1, 5):
        m = g.power(q)
        assert m.min() >= 0
        assert abs(m - m.T).max() < 1e-10
        assert np.abs(np.linalg.eigvalsh(m.toarray())).max() <= 1 + 1e-9


def test_propagate_matches_powers():
    rng = np.random.default_rng(2)
    g = normalized_adjacency_powers(knn_graph(rng.normal(size=(20, 3)), 4), 3)
    x = rng.normal(size=(20, 2))
    for q, y in enumerate(g.propagate(x), start=1):
        np.testing.assert_allclose(y, g.power(q) @ x, atol=1e-12)


def test_fibonacci_lattice():
    lat = fibonacci_viewpoints(300)
    np.testing.assert_allclose(np.linalg.norm(lat.vectors, axis=1), 1.0, atol=1e-9)
    cos = np.clip(lat.vectors @ lat.vectors.T, -1, 1)
    np.fill_diagonal(cos, -1)
    assert np.degrees(np.arccos(cos.max())) >= 9.0
    two = fibonacci_viewpoints(2).vectors
    assert two[0, 2] * two[1, 2] < 0


def test_assemble_rotation_cases():
    np.testing.assert_allclose(assemble_rotation([1.0, 0, 0], 0.0), np.eye(3), atol=1e-15)
    r = assemble_rotation([0.0, 0, -1], np.pi / 2)
    np.testing.assert_allclose(r, align_x_to(np.array([0.0, 0, -1])) @ roll_about_x(np.pi / 2))
    np.testing.assert_allclose(r[:, 0], [0, 0, -1], atol=1e-15)
    flip = assemble_rotation([-1.0, 0, 0], 0.0)
    np.testing.assert_allclose(flip, np.diag([-1.0, 1, -1]))
    with pytest.raises(ValueError):
        assemble_rotation([1.0, 1.0, 0], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(0, 2 * np.pi), st.floats(-np.pi, np.pi))
def test_assemble_rotation_is_rotation(z, phi, theta):
    r = np.sqrt(1 - z * z)
    a = np.array([r * np.cos(phi), r * np.sin(phi), z])
    a /= np.linalg.norm(a)
    R = assemble_rotation(a, theta)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(R) - 1) < 1e-9
    np.testing.assert_allclose(R[:, 0], a, atol=1e-12)


def test_cylinder_crop_keep_set():
    center = np.zeros(3)
    # (t, r, kept) along a +z approach; boundary values are exact in binary here
    cases = [(0.0, 0.0, True), (0.04, 0.0, True), (0.041, 0.0, False), (-0.02, 0.01, True),
             (-0.021, 0.0, False), (0.01, 0.05, True), (0.01, 0.0505, False), (0.03, 0.049, True),
             (0.0, 0.06, False), (-0.01, 0.02, True)]
    pts = np.array([center + [r, 0, t] for t, r, _ in cases])
    local, empty = cylinder_crop(pts, center, [0.0, 0, 1], max_points=len(cases))
    assert not empty
    kept = [i for i, (_, _, k) in enumerate(cases) if k]
    expect = (pts[kept] - center) @ align_x_to(np.array([0.0, 0, 1])) / 0.05
    got = local[:len(kept)]
    np.testing.assert_allclose(got, expect, atol=1e-12)
    np.testing.assert_allclose(got[0], 0.0, atol=1e-15)  # the centre maps to the origin
    np.testing.assert_allclose(local[len(kept):], np.repeat(got[:1], len(cases) - len(kept), 0))


def test_cylinder_crop_counts_and_empty():
    rng = np.random.default_rng(0)
    pts = rng.normal(scale=0.02, size=(500, 3))
    local, empty = cylinder_crop(pts, np.zeros(3), [1.0, 0, 0])
    assert local.shape == (64, 3) and not empty
    local, empty = cylinder_crop(pts + 10.0, np.zeros(3), [1.0, 0, 0])
    assert empty and local.shape == (1, 3) and not local.any()
    with pytest.raises(ValueError):
        cylinder_crop(pts, np.zeros(3), [1.0, 0, 0], radius=0.0)


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.nan, 0, 0]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((1, 3)), normals=np.array([[1.0, 1.0, 0.0]]))
