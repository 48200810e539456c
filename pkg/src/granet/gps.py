"""Grasp point selection: object-point filtering and value-ranked top-k."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .geometry import SceneGraph, farthest_point_sampling, knn_graph
from .gfe import edgeconv, in_edge_layout, init_edgeconv
from .nn import ParameterStore, mlp_apply
from .oracle import GraspAnnotationSet
from .tensor import Tensor

log = logging.getLogger("granet")

OPS_WIDTHS = (256, 128, 64, 16, 2)


def vps_widths(levels: int) -> tuple[int, ...]:
    return (256, 64, 32, levels)


class SelectionError(RuntimeError):
    pass


@dataclass
class SelectionStage:
    logits: Tensor            # per input node
    indices: np.ndarray       # selected rows of the original cloud
    local: np.ndarray         # selected rows of the stage input
    graph: SceneGraph         # rebuilt on the selection
    features: Tensor          # features of the selected nodes
    warnings: list[str] = field(default_factory=list)


def init_gps(store: ParameterStore, levels: int) -> None:
    store.add_mlp("ops.zeta", OPS_WIDTHS)
    init_edgeconv(store, "vps.edge", 256, 256)
    store.add_mlp("vps.zeta", vps_widths(levels))


def rebuild_graph(points: np.ndarray, nodes: np.ndarray, k: int) -> SceneGraph:
    """KNN graph over a selection; ``k`` shrinks when the selection is tiny."""
    n = len(nodes)
    if n < 2:
        return SceneGraph(nodes=np.asarray(nodes), positions=points[nodes].reshape(-1, 3),
                          src=np.zeros(0, dtype=np.int64), dst=np.zeros(0, dtype=np.int64),
                          weights=np.zeros(0))
    return knn_graph(points[nodes], min(k, n - 1), nodes=nodes)


def ops_logits(store: ParameterStore, features: Tensor) -> Tensor:
    return mlp_apply(store, "ops.zeta", features, OPS_WIDTHS)


def ops_select(points: np.ndarray, indices: np.ndarray, features: Tensor, store: ParameterStore,
               n_obj: int, k: int, mask: np.ndarray | None = None,
               fps_seed_index: int = 0) -> SelectionStage:
    """Keep nodes classified as object, FPS them down to ``n_obj``, rebuild the graph.

    ``mask`` replaces the predicted classes (used for teacher-forced training).
    """
    logits = ops_logits(store, features)
    if mask is None:
        mask = np.argmax(logits.data, axis=1) == 1  # ties go to background
    cand = np.nonzero(mask)[0]
    warnings = []
    if len(cand) == 0:
        raise SelectionError("no object points predicted")
    if len(cand) < n_obj:
        msg = f"only {len(cand)} object points predicted, fewer than n_obj={n_obj}"
        log.warning(msg)
        warnings.append(msg)
        local = cand
    else:
        local = cand[farthest_point_sampling(points[indices[cand]], n_obj,
                                             min(fps_seed_index, len(cand) - 1))]
    sel = indices[local]
    return SelectionStage(logits, sel, local, rebuild_graph(points, sel, k),
                          T.gather_rows(features, local), warnings)


def expected_level(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p @ np.arange(logits.shape[1], dtype=np.float64)


def top_by_value(value: np.ndarray, original: np.ndarray, n: int) -> np.ndarray:
    """Positions of the ``n`` largest values; ties go to the lower original index."""
    order = np.lexsort((original, -value))
    return order[:n]


def vps_features(store: ParameterStore, stage: SelectionStage) -> Tensor:
    return edgeconv(store, "vps.edge", stage.graph, stage.features, residual=True,
                    layout=in_edge_layout(stage.graph))


def vps_select(points: np.ndarray, stage: SelectionStage, store: ParameterStore, n_val: int,
               k: int, levels: int) -> tuple[SelectionStage, Tensor]:
    """Rank the object stage by expected value level and keep the top ``n_val``.

    Returns the selection and the refined features of every object node.
    """
    if len(stage.indices) < 1:
        raise SelectionError("value selection needs at least one node")
    refined = vps_features(store, stage)
    logits = mlp_apply(store, "vps.zeta", refined, vps_widths(levels))
    warnings = []
    if len(stage.indices) < n_val:
        msg = f"only {len(stage.indices)} object nodes, fewer than n_val={n_val}"
        log.warning(msg)
        warnings.append(msg)
    local = top_by_value(expected_level(logits.data), stage.indices, n_val)
    sel = stage.indices[local]
    return SelectionStage(logits, sel, local, rebuild_graph(points, sel, k),
                          T.gather_rows(refined, local), warnings), refined


# -- value labels ------------------------------------------------------------
@dataclass
class DovLabels:
    indices: np.ndarray
    mean_score: np.ndarray
    level: np.ndarray
    annotated: np.ndarray
    levels: int

    def lookup(self, num_points: int) -> np.ndarray:
        """Cloud-sized label array; points outside ``indices`` get level 0."""
        out = np.zeros(num_points, dtype=np.int64)
        out[self.indices] = self.level
        return out


def quantize_levels(mean_score: np.ndarray, annotated: np.ndarray, levels: int) -> np.ndarray:
    if levels < 2:
        raise ValueError("need at least 2 levels")
    out = np.zeros(len(mean_score), dtype=np.int64)
    if not annotated.any():
        return out
    s = mean_score[annotated]
    lo, hi = s.min(), s.max()
    if hi == lo:
        out[annotated] = levels - 1
        return out
    lv = np.floor((s - lo) / (hi - lo) * levels).astype(np.int64)
    out[annotated] = np.minimum(lv, levels - 1)
    return out


def compute_dov_labels(annotations: GraspAnnotationSet, indices: np.ndarray,
                       levels: int) -> DovLabels:
    """Mean grasp score per point quantized into ``levels`` classes by the scene range."""
    indices = np.asarray(indices, dtype=np.int64)
    size = int(max(indices.max(initial=-1), annotations.point.max(initial=-1))) + 1
    mean, count = annotations.mean_scores(size)
    annotated = count[indices] > 0
    ms = np.where(annotated, mean[indices], 0.0)
    return DovLabels(indices, ms, quantize_levels(ms, annotated, levels), annotated, levels)
