"""Ground-truth matching, the loss stack and the training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import tensor as T
from .config import RunConfig
from .geometry import farthest_point_sampling
from .gfe import GfeGraphs, gfe_forward
from .gpg import crop_batch, grasp_head, view_logits
from .gps import (DovLabels, SelectionStage, compute_dov_labels, ops_logits, rebuild_graph,
                  vps_select)
from .model import GraNet
from .nn import Adam
from .oracle import GraspAnnotationSet
from .scenes import SyntheticScene
from .tensor import Tensor

log = logging.getLogger("granet")


class TrainingError(RuntimeError):
    pass


@dataclass
class SceneSupervision:
    """Per query point: the matched annotated point (-1 when unmatched) and its labels."""
    matched: np.ndarray
    annotated_point: np.ndarray
    view: np.ndarray
    angle_bin: np.ndarray
    depth_bin: np.ndarray
    width: np.ndarray
    score: np.ndarray


def match_ground_truth(query: np.ndarray, cloud: np.ndarray, annotations: GraspAnnotationSet,
                       radius: float = 0.005) -> SceneSupervision:
    """Pair each query location with the nearest annotated point within ``radius``.

    The matched point's best grasp supplies the view, angle-bin, depth-bin,
    width and score targets.
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    n = len(query)
    best = annotations.best_per_point()
    sup = SceneSupervision(np.zeros(n, dtype=bool), np.full(n, -1), np.zeros(n, dtype=np.int64),
                           np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64),
                           np.zeros(n), np.zeros(n))
    if not best or n == 0:
        return sup
    pts = np.array(sorted(best))
    dist, pos = cKDTree(cloud[pts]).query(query, k=1)
    ok = dist <= radius
    rows = np.array([best[int(p)] for p in pts[pos[ok]]], dtype=np.int64)
    sup.matched[ok] = True
    sup.annotated_point[ok] = pts[pos[ok]]
    sup.view[ok] = annotations.view[rows]
    sup.angle_bin[ok] = annotations.angle_bin[rows]
    sup.depth_bin[ok] = annotations.depth_bin[rows]
    sup.width[ok] = annotations.width[rows]
    sup.score[ok] = annotations.score[rows]
    return sup


def gps_loss(ops_logits: Tensor, object_labels, vps_logits: Tensor, level_labels) -> Tensor:
    """Object/background cross-entropy plus value-level cross-entropy."""
    return T.add(T.cross_entropy(ops_logits, object_labels),
                 T.cross_entropy(vps_logits, level_labels))


def total_loss(l_gps, l_view, l_score, l_rot, l_width, cfg: RunConfig) -> Tensor:
    grasp = T.add(T.add(T.as_tensor(l_score), T.as_tensor(l_rot)), T.as_tensor(l_width))
    return T.add(T.add(T.mul(T.as_tensor(l_gps), cfg.lambda_gps),
                       T.mul(T.as_tensor(l_view), cfg.lambda_view)),
                 T.mul(grasp, cfg.lambda_grasp))


def lr_for_epoch(epoch: int, cfg: RunConfig) -> float:
    """Epochs count from 1."""
    return cfg.lr if epoch <= cfg.lr_decay_after else cfg.lr_decayed


@dataclass
class TrainingScene:
    """Everything about one scene that does not depend on the parameters."""
    name: str
    points: np.ndarray
    graphs: GfeGraphs
    object_labels: np.ndarray      # per resampled row
    obj_local: np.ndarray          # resampled rows picked from ground-truth object points
    obj_graph: object
    levels: np.ndarray             # per object row
    supervision: SceneSupervision  # per object row
    crops: np.ndarray              # per object row, along the labelled view
    dov: DovLabels


def prepare_scene(model: GraNet, scene: SyntheticScene, annotations: GraspAnnotationSet,
                  name: str = "") -> TrainingScene:
    cfg = model.cfg
    points = scene.points
    graphs = model.graphs(points)
    mask = scene.object_mask[graphs.indices]
    cand = np.nonzero(mask)[0]
    if len(cand) == 0:
        raise TrainingError(f"scene {name}: no object points after resampling")
    if len(cand) > cfg.n_obj:
        local = cand[farthest_point_sampling(points[graphs.indices[cand]], cfg.n_obj,
                                             min(cfg.fps_seed_index, len(cand) - 1))]
    else:
        local = cand
    sel = graphs.indices[local]
    dov = compute_dov_labels(annotations, np.nonzero(scene.object_mask)[0], cfg.dov_levels)
    levels = dov.lookup(len(points))[sel]
    sup = match_ground_truth(points[sel], points, annotations, cfg.match_radius)
    crops, _ = crop_batch(points, points[sel], model.lattice.vectors[sup.view], model.gpg_cfg)
    return TrainingScene(name or str(scene.seed), points, graphs, mask.astype(np.int64), local,
                         rebuild_graph(points, sel, cfg.knn_k), levels, sup, crops, dov)


def scene_losses(model: GraNet, ts: TrainingScene) -> dict:
    """Forward pass with ground-truth object selection and labelled-view crops."""
    cfg, store = model.cfg, model.store
    gfe = gfe_forward(ts.points, model.gfe_cfg, store, ts.graphs)
    o_logits = ops_logits(store, gfe.features)
    sel = ts.graphs.indices[ts.obj_local]
    stage = SelectionStage(o_logits, sel, ts.obj_local, ts.obj_graph,
                           T.gather_rows(gfe.features, ts.obj_local))
    val, _ = vps_select(ts.points, stage, store, cfg.n_val, cfg.knn_k, cfg.dov_levels)
    l_gps = gps_loss(o_logits, ts.object_labels, val.logits, ts.levels)

    rows = val.local[ts.supervision.matched[val.local]]
    zero = T.Tensor(0.0)
    l_view = l_rot = l_score = l_width = zero
    if len(rows):
        sup = ts.supervision
        pos = np.nonzero(ts.supervision.matched[val.local])[0]
        v_logits = view_logits(store, T.gather_rows(val.features, pos), cfg.views)
        l_view = T.cross_entropy(v_logits, sup.view[rows])
        scores, widths = grasp_head(store, ts.crops[rows], model.gpg_cfg)
        cell = sup.angle_bin[rows] * len(cfg.depth_bins) + sup.depth_bin[rows]
        l_rot = T.cross_entropy(scores, cell)
        pick = (np.arange(len(rows)), cell)
        l_score = T.smooth_l1(T.index(scores, pick), sup.score[rows])
        l_width = T.smooth_l1(T.mul(T.index(widths, pick), 1.0 / cfg.w_max),
                              sup.width[rows] / cfg.w_max)
    loss = total_loss(l_gps, l_view, l_score, l_rot, l_width, cfg)
    ops_acc = float(np.mean((np.argmax(o_logits.data, axis=1) == 1) == (ts.object_labels == 1)))
    vps_pred = np.argmax(val.logits.data, axis=1)
    return {"loss": loss, "gps": l_gps, "view": l_view, "rot": l_rot, "score": l_score,
            "width": l_width, "ops_acc": ops_acc,
            "vps_acc1": float(np.mean(np.abs(vps_pred - ts.levels) <= 1)),
            "vps_acc": float(np.mean(vps_pred == ts.levels)), "matched": int(len(rows))}


METRIC_KEYS = ("loss", "gps", "view", "rot", "score", "width", "ops_acc", "vps_acc", "vps_acc1")


def train_epoch(scenes: list[TrainingScene], model: GraNet, optimizer: Adam, cfg: RunConfig,
                epoch: int) -> dict:
    """One pass over ``scenes`` in seeded-shuffled order with gradient accumulation."""
    if not scenes:
        raise TrainingError("training set is empty")
    lr = lr_for_epoch(epoch, cfg)
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(scenes))
    sums = {k: 0.0 for k in METRIC_KEYS}
    steps = 0
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        model.store.zero_grad()
        for i in batch:
            out = scene_losses(model, scenes[i])
            value = float(out["loss"].data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss on scene {scenes[i].name} at epoch {epoch} "
                                    f"step {optimizer.step_count + 1}")
            T.mul(out["loss"], 1.0 / len(batch)).backward()
            for k in METRIC_KEYS:
                v = out[k]
                sums[k] += float(v.data) if isinstance(v, Tensor) else v
        grads = {k: (g if g is not None else np.zeros_like(p.data))
                 for k, p in model.store.items() for g in [p.grad]}
        optimizer.step(model.store, grads, lr=lr)
        steps += 1
    record = {"epoch": epoch, "lr": lr, "steps": steps}
    record.update({k: sums[k] / len(scenes) for k in METRIC_KEYS})
    return record


def evaluate_training(scenes: list[TrainingScene], model: GraNet) -> dict:
    """Mean metrics over ``scenes`` without updating anything."""
    sums = {k: 0.0 for k in METRIC_KEYS}
    store = model.store
    model.store = store.frozen()
    try:
        with T.no_grad():
            for ts in scenes:
                out = scene_losses(model, ts)
                for k in METRIC_KEYS:
                    v = out[k]
                    sums[k] += float(v.data) if isinstance(v, Tensor) else v
    finally:
        model.store = store
    return {k: sums[k] / len(scenes) for k in METRIC_KEYS}


def train(scenes: list[TrainingScene], model: GraNet, cfg: RunConfig, metrics_path=None,
          on_epoch=None) -> list[dict]:
    """Run ``cfg.epochs`` epochs; metrics go to ``metrics_path`` as JSON lines."""
    optimizer = Adam(lr=cfg.lr)
    history = []
    sink = open(metrics_path, "w") if metrics_path is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            rec = train_epoch(scenes, model, optimizer, cfg, epoch)
            history.append(rec)
            log.info("epoch %d lr %.1e loss %.4f ops %.3f vps±1 %.3f", epoch, rec["lr"],
                     rec["loss"], rec["ops_acc"], rec["vps_acc1"])
            if sink is not None:
                sink.write(json.dumps(rec, sort_keys=True) + "\n")
                sink.flush()
            if on_epoch is not None:
                on_epoch(epoch, model)
    finally:
        if sink is not None:
            sink.close()
    return history
