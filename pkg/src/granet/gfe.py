"""Graph feature embedding: multi-hop propagation with hop attention, global
pooling, position encoding and the post-embedding EdgeConv."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import SceneGraph, farthest_point_sampling, knn_graph, normalized_adjacency_powers
from .nn import ParameterStore, affine_apply, mlp_apply
from .tensor import Tensor


@dataclass(frozen=True)
class GfeConfig:
    hops: int = 4
    embed_dim: int = 64
    knn_k: int = 32
    resample: int = 7000
    out_dim: int = 256
    fps_seed_index: int = 0

    def __post_init__(self):
        if self.hops < 1 or self.embed_dim < 1 or self.knn_k < 1 or self.resample < 1:
            raise ValueError("hops, embed_dim, knn_k and resample must be positive")


@dataclass
class GfeOutput:
    indices: np.ndarray     # resampled rows of the input cloud
    features: Tensor        # len(indices) x out_dim
    graph: SceneGraph       # KNN graph over the resampled points


PSI_HIDDEN = 8  # psi scores each hop's pooled value on its own, so hop order cannot matter


def init_gfe(store: ParameterStore, cfg: GfeConfig, prefix: str = "gfe") -> None:
    f, p = cfg.embed_dim, cfg.hops
    for q in range(1, p + 1):
        store.add_mlp(f"{prefix}.phi.{q}", (3, f))
    store.add_mlp(f"{prefix}.psi", (1, PSI_HIDDEN, 1))
    store.add_affine(f"{prefix}.theta_g", f, 1)
    store.add_affine(f"{prefix}.theta_f", f, f)
    store.add_mlp(f"{prefix}.sigma", (3, f, f))
    init_edgeconv(store, f"{prefix}.edge", 3 * f, cfg.out_dim)


def init_edgeconv(store: ParameterStore, prefix: str, c_in: int, c_out: int) -> None:
    """``prefix.rel.weight`` acts on ``h_j - h_i``; ``prefix.center`` on ``h_i``."""
    bound = np.sqrt(6.0 / c_in)
    name = f"{prefix}.rel.weight"
    store.add(name, store.rng_for(name).uniform(-bound, bound, size=(c_in, c_out)))
    store.add_affine(f"{prefix}.center", c_in, c_out)


def hop_inputs(graph: SceneGraph, x: np.ndarray, p: int) -> list[np.ndarray]:
    """``[A x, A^2 x, ..., A^p x]``; constant with respect to the parameters."""
    if graph.adjacency is None or graph.hops < p:
        raise ValueError(f"graph has {graph.hops} cached hop powers, {p} needed")
    return graph.propagate(x, p)


def hop_features_from_inputs(store: ParameterStore, inputs: list, prefix: str = "gfe") -> list[Tensor]:
    f_in = T.as_tensor(inputs[0]).shape[1]
    return [mlp_apply(store, f"{prefix}.phi.{q}", xq, (f_in, store[f"{prefix}.phi.{q}.0.weight"].shape[1]),
                      final_relu=True)
            for q, xq in enumerate(inputs, start=1)]


def hop_features(graph: SceneGraph, x, store: ParameterStore, p: int,
                 prefix: str = "gfe") -> list[Tensor]:
    """``H_q = relu(phi_q(A^q x))`` for q = 1..p."""
    return hop_features_from_inputs(store, hop_inputs(graph, np.asarray(x, dtype=np.float64), p),
                                    prefix)


def hop_attention_weights(store: ParameterStore, hops: list[Tensor], prefix: str = "gfe") -> Tensor:
    """Per-node softmax over hops of ``psi(max-pool) + psi(mean-pool)``.

    ``psi`` is one scalar map shared by every hop, so identical hops get equal weight.
    """
    p = len(hops)
    n_phi = sum(1 for name, _ in store.items() if name.startswith(f"{prefix}.phi.") and name.endswith(".weight"))
    if n_phi and n_phi != p:
        raise ValueError(f"{prefix} has {n_phi} hop maps, got {p} hop features")
    n = hops[0].shape[0]
    widths = (1, store[f"{prefix}.psi.0.weight"].shape[1], 1)
    mx = T.concat([T.tmax(h, axis=1, keepdims=True) for h in hops], axis=1)
    av = T.concat([T.mean(h, axis=1, keepdims=True) for h in hops], axis=1)
    logits = T.add(mlp_apply(store, f"{prefix}.psi", T.reshape(mx, (n * p, 1)), widths),
                   mlp_apply(store, f"{prefix}.psi", T.reshape(av, (n * p, 1)), widths))
    return T.softmax(T.reshape(logits, (n, p)), axis=1)


def hop_attention(store: ParameterStore, hops: list[Tensor], prefix: str = "gfe") -> Tensor:
    """Attention-weighted sum of the hop features (N x f)."""
    shapes = {h.shape for h in hops}
    if len(shapes) != 1:
        raise ValueError(f"hop features differ in shape: {sorted(shapes)}")
    s = hop_attention_weights(store, hops, prefix)
    out = None
    for q, h in enumerate(hops):
        term = T.mul(T.index(s, (slice(None), slice(q, q + 1))), h)
        out = term if out is None else T.add(out, term)
    return out


def global_pool(store: ParameterStore, h_local: Tensor, prefix: str = "gfe") -> Tensor:
    """Softmax-gated sum over nodes of ``theta_f(h)``; returns an f-vector."""
    gate = T.softmax(affine_apply(store, f"{prefix}.theta_g", h_local), axis=0)
    feat = affine_apply(store, f"{prefix}.theta_f", h_local)
    return T.tsum(T.mul(gate, feat), axis=0)


def position_encode(store: ParameterStore, x, prefix: str = "gfe") -> Tensor:
    f = store[f"{prefix}.sigma.1.weight"].shape[1]
    return mlp_apply(store, f"{prefix}.sigma", x, (3, store[f"{prefix}.sigma.0.weight"].shape[1], f))


def in_edge_layout(graph: SceneGraph) -> tuple[np.ndarray, np.ndarray]:
    """Edge permutation grouping edges by target node, plus CSR offsets."""
    order = np.lexsort((graph.src, graph.dst))
    counts = np.bincount(graph.dst, minlength=graph.num_nodes)
    return order, np.concatenate([[0], np.cumsum(counts)])


def edgeconv(store: ParameterStore, prefix: str, graph: SceneGraph, h: Tensor,
             residual: bool, layout=None) -> Tensor:
    """Per node, max over in-edges ``j -> i`` of ``rel(h_j - h_i)`` plus ``center(h_i)``.

    ``rel`` is linear, so the edge term is ``max_j(h_j W) - h_i W``.  Nodes
    without in-edges get ``center(h_i)`` alone.  With ``residual`` the input
    is added back, which requires equal widths.
    """
    w = store[f"{prefix}.rel.weight"]
    if w.shape[0] != h.shape[1]:
        raise ValueError(f"{prefix}.rel.weight: expected input width {w.shape[0]}, got {h.shape[1]}")
    if residual and w.shape[1] != h.shape[1]:
        raise ValueError(f"{prefix}: residual block needs equal widths, got {h.shape[1]} -> {w.shape[1]}")
    order, offsets = layout if layout is not None else in_edge_layout(graph)
    proj = T.matmul(h, w)
    pooled, nonempty = T.segment_max(T.gather_rows(proj, graph.src[order]), offsets)
    edge = T.sub(pooled, T.mul(proj, nonempty[:, None].astype(np.float64)))
    out = T.add(edge, affine_apply(store, f"{prefix}.center", h))
    return T.add(out, h) if residual else out


def embed_nodes(store: ParameterStore, points: np.ndarray, inputs: list,
                prefix: str = "gfe") -> Tensor:
    """``[H_local | h_global | H_pos]`` for every input point (N x 3f)."""
    hops = hop_features_from_inputs(store, inputs, prefix)
    h_local = hop_attention(store, hops, prefix)
    h_global = global_pool(store, h_local, prefix)
    h_pos = position_encode(store, points, prefix)
    return T.concat([h_local, T.broadcast_rows(h_global, len(points)), h_pos], axis=1)


@dataclass
class GfeGraphs:
    """Parameter-independent structure of one cloud: graphs, hop inputs, resample."""
    full: SceneGraph
    inputs: list
    indices: np.ndarray
    resampled: SceneGraph
    layout: tuple


def build_gfe_graphs(points: np.ndarray, cfg: GfeConfig) -> GfeGraphs:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < cfg.resample:
        raise ValueError(f"cloud has {len(points)} points, fewer than resample size {cfg.resample}")
    full = normalized_adjacency_powers(knn_graph(points, cfg.knn_k), cfg.hops)
    inputs = hop_inputs(full, points, cfg.hops)
    idx = farthest_point_sampling(points, cfg.resample, cfg.fps_seed_index)
    res = knn_graph(points[idx], cfg.knn_k, nodes=idx)
    return GfeGraphs(full, inputs, idx, res, in_edge_layout(res))


def gfe_forward(points: np.ndarray, cfg: GfeConfig, store: ParameterStore,
                graphs: GfeGraphs | None = None, prefix: str = "gfe") -> GfeOutput:
    points = np.asarray(points, dtype=np.float64)
    graphs = graphs if graphs is not None else build_gfe_graphs(points, cfg)
    h = embed_nodes(store, points, graphs.inputs, prefix)
    h_res = T.gather_rows(h, graphs.indices)
    feats = edgeconv(store, f"{prefix}.edge", graphs.resampled, h_res, residual=False,
                     layout=graphs.layout)
    return GfeOutput(graphs.indices, feats, graphs.resampled)
