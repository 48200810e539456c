"""Point-cloud and graph kernels: KNN graphs, FPS, adjacency powers, views, frames."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class PointCloud:
    points: np.ndarray
    object_ids: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.object_ids is not None:
            self.object_ids = np.asarray(self.object_ids, dtype=np.int64)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("normals must be unit length")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class SceneGraph:
    """Directed graph over ``positions``; edges are sorted by source node.

    ``nodes`` maps local node ids back to indices in the originating cloud.
    """
    nodes: np.ndarray
    positions: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray
    adjacency: sp.csr_matrix | None = None
    degree: np.ndarray | None = None
    hops: int = 0
    _powers: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def offsets(self) -> np.ndarray:
        """CSR offsets of out-edges per source node."""
        return np.concatenate([[0], np.cumsum(np.bincount(self.src, minlength=self.num_nodes))])

    def weight_matrix(self) -> sp.csr_matrix:
        n = self.num_nodes
        return sp.csr_matrix((self.weights, (self.src, self.dst)), shape=(n, n))

    def power(self, q: int) -> sp.csr_matrix:
        """Normalized adjacency raised to ``q`` (materialized and cached)."""
        if self.adjacency is None or q > self.hops or q < 1:
            raise ValueError(f"hop power {q} not cached; call normalized_adjacency_powers first")
        if q not in self._powers:
            self._powers[q] = (self.adjacency if q == 1 else self.power(q - 1) @ self.adjacency).tocsr()
        return self._powers[q]

    def propagate(self, x: np.ndarray, p: int | None = None) -> list[np.ndarray]:
        """``[A x, A^2 x, ..., A^p x]`` by repeated products."""
        p = self.hops if p is None else p
        if self.adjacency is None or p > self.hops or p < 1:
            raise ValueError(f"{p} hop powers requested, {self.hops} cached")
        out, cur = [], np.asarray(x, dtype=np.float64)
        for _ in range(p):
            cur = np.asarray(self.adjacency @ cur)
            out.append(cur)
        return out


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_graph(points: np.ndarray, k: int, nodes: np.ndarray | None = None,
              chunk: int = 256) -> SceneGraph:
    """Each node gets out-edges to its ``k`` nearest other nodes.

    Distances are exact coordinate differences; ties go to the lower index.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n < 2:
        raise ValueError("knn_graph needs at least 2 nodes")
    if k >= n or k < 1:
        raise ValueError(f"k={k} must be in [1, {n - 1}] for {n} nodes")
    nbrs = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = pairwise_sq_dists(points[start:stop], points)
        rows = np.arange(stop - start)
        d[rows, rows + start] = np.inf
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        within = d <= kth[:, None]
        for r in range(stop - start):
            cand = np.nonzero(within[r])[0]
            order = np.lexsort((cand, d[r, cand]))
            nbrs[start + r] = cand[order[:k]]
    src = np.repeat(np.arange(n), k)
    return SceneGraph(
        nodes=np.arange(n) if nodes is None else np.asarray(nodes, dtype=np.int64),
        positions=points, src=src, dst=nbrs.reshape(-1), weights=np.ones(n * k))


def normalized_adjacency_powers(graph: SceneGraph, p: int, materialize: bool = False) -> SceneGraph:
    """Symmetrize W as max(W, W^T), form D^-1/2 W D^-1/2 and enable ``p`` hops.

    Isolated nodes get zero rows and columns.  With ``materialize`` the
    powers A^1..A^p are computed and cached immediately.
    """
    if p < 1:
        raise ValueError("hop count must be >= 1")
    w = graph.weight_matrix()
    w = w.maximum(w.T).tocsr()
    deg = np.asarray(w.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    dm = sp.diags(inv_sqrt)
    graph.adjacency = (dm @ w @ dm).tocsr()
    graph.degree = deg
    graph.hops = p
    graph._powers = {}
    if materialize:
        for q in range(1, p + 1):
            graph.power(q)
    return graph


def farthest_point_sampling(points: np.ndarray, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy max-min subset in selection order; ties to the lower index."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} points")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed index {seed_index} out of range")
    out = np.empty(m, dtype=np.int64)
    out[0] = seed_index
    diff = points - points[seed_index]
    mind = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, m):
        nxt = int(np.argmax(mind))
        out[i] = nxt
        diff = points - points[nxt]
        np.minimum(mind, np.einsum("ij,ij->i", diff, diff), out=mind)
    return out


@dataclass(frozen=True)
class ViewLattice:
    vectors: np.ndarray
    count: int

    def nearest(self, directions: np.ndarray) -> np.ndarray:
        """Index of the lattice vector with largest dot product (lowest index on ties)."""
        d = np.atleast_2d(directions)
        return np.argmax(d @ self.vectors.T, axis=1)


def fibonacci_viewpoints(count: int = 300) -> ViewLattice:
    if count < 1:
        raise ValueError("need at least one view")
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    v = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return ViewLattice(vectors=v, count=count)


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    o = np.zeros_like(x)
    return np.stack([np.stack([o, -z, y], -1), np.stack([z, o, -x], -1),
                     np.stack([-y, x, o], -1)], -2)


def align_x_to(approach: np.ndarray) -> np.ndarray:
    """Minimal rotation(s) taking +x onto ``approach`` (``(...,3)`` -> ``(...,3,3)``).

    The antipodal case uses a half turn about +y.
    """
    a = np.asarray(approach, dtype=np.float64)
    c = a[..., 0]
    v = np.stack([np.zeros_like(c), -a[..., 2], a[..., 1]], axis=-1)  # x cross a
    k = _skew(v)
    eye = np.broadcast_to(np.eye(3), a.shape[:-1] + (3, 3))
    anti = (1.0 + c) < 1e-12
    denom = np.where(anti, 1.0, 1.0 + c)
    r = eye + k + (k @ k) / denom[..., None, None]
    if np.any(anti):
        flip = np.diag([-1.0, 1.0, -1.0])
        r = np.where(anti[..., None, None], flip, r)
    return r


def roll_about_x(angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    o, one = np.zeros_like(c), np.ones_like(c)
    return np.stack([np.stack([one, o, o], -1), np.stack([o, c, -s], -1),
                     np.stack([o, s, c], -1)], -2)


def assemble_rotation(approach, in_plane_angle: float) -> np.ndarray:
    """Grasp rotation whose first column is ``approach``, rolled by ``in_plane_angle``."""
    a = np.asarray(approach, dtype=np.float64)
    if abs(np.linalg.norm(a) - 1.0) > 1e-6:
        raise ValueError(f"approach must be a unit vector, |a|={np.linalg.norm(a):.6g}")
    return align_x_to(a) @ roll_about_x(in_plane_angle)


def cylinder_crop(points: np.ndarray, center, approach, radius: float = 0.05,
                  depth_lo: float = -0.02, depth_hi: float = 0.04,
                  max_points: int = 64) -> tuple[np.ndarray, bool]:
    """Points inside an approach-aligned cylinder, in the unrolled grasp frame.

    Returns ``(local, empty)`` where ``local`` is ``max_points x 3`` scaled by
    ``1/radius`` (FPS-subsampled or padded with the first kept point), or a
    single zero row with ``empty=True`` when nothing falls inside.
    """
    if radius <= 0 or depth_lo >= depth_hi:
        raise ValueError("need radius > 0 and depth_lo < depth_hi")
    center = np.asarray(center, dtype=np.float64)
    rot = align_x_to(np.asarray(approach, dtype=np.float64))
    local = (np.asarray(points, dtype=np.float64) - center) @ rot
    t = local[:, 0]
    r2 = local[:, 1] ** 2 + local[:, 2] ** 2
    keep = (t >= depth_lo) & (t <= depth_hi) & (r2 <= radius * radius)
    kept = local[keep] / radius
    if len(kept) == 0:
        return np.zeros((1, 3)), True
    if len(kept) > max_points:
        kept = kept[farthest_point_sampling(kept, max_points)]
    elif len(kept) < max_points:
        kept = np.concatenate([kept, np.repeat(kept[:1], max_points - len(kept), axis=0)])
    return kept, False
