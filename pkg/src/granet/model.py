"""The full network: parameter layout plus inference in granet / fps-baseline modes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .evaluation import GraspPose
from .geometry import ViewLattice, farthest_point_sampling, fibonacci_viewpoints
from .gfe import GfeConfig, GfeGraphs, build_gfe_graphs, gfe_forward, init_gfe
from .gpg import GpgConfig, crop_batch, decode_grasps, grasp_head, init_gpg, predict_view
from .gps import (SelectionStage, expected_level, init_gps, ops_select, rebuild_graph,
                  vps_features, vps_select)
from .nn import ParameterStore

MODES = ("granet", "fps-baseline")


def gfe_config(cfg: RunConfig) -> GfeConfig:
    return GfeConfig(hops=cfg.hops, embed_dim=cfg.embed_dim, knn_k=cfg.knn_k,
                     resample=cfg.resample, fps_seed_index=cfg.fps_seed_index)


def gpg_config(cfg: RunConfig) -> GpgConfig:
    return GpgConfig(views=cfg.views, angle_bins=cfg.angle_bins, depth_bins=cfg.depth_bins,
                     w_max=cfg.w_max, cylinder_radius=cfg.cylinder_radius,
                     cylinder_depth_lo=cfg.cylinder_depth_lo,
                     cylinder_depth_hi=cfg.cylinder_depth_hi, cylinder_points=cfg.cylinder_points)


def build_store(cfg: RunConfig) -> ParameterStore:
    store = ParameterStore(cfg.seed)
    init_gfe(store, gfe_config(cfg))
    init_gps(store, cfg.dov_levels)
    init_gpg(store, gpg_config(cfg))
    return store


@dataclass
class Prediction:
    grasps: list[GraspPose]
    resampled: np.ndarray          # cloud rows after the first FPS
    object_points: np.ndarray      # cloud rows kept by OPS (empty in fps-baseline mode)
    grasp_points: np.ndarray       # cloud rows handed to GPG
    ops_mask: np.ndarray | None    # predicted object class per resampled row
    value: np.ndarray | None       # expected value level per object row
    views: np.ndarray
    warnings: list[str] = field(default_factory=list)


class GraNet:
    def __init__(self, cfg: RunConfig, store: ParameterStore | None = None):
        self.cfg = cfg
        self.gfe_cfg = gfe_config(cfg)
        self.gpg_cfg = gpg_config(cfg)
        self.lattice: ViewLattice = fibonacci_viewpoints(cfg.views)
        fresh = build_store(cfg)
        if store is None:
            store = fresh
        else:
            check_layout(store, fresh)
        self.store = store

    def graphs(self, points: np.ndarray) -> GfeGraphs:
        return build_gfe_graphs(points, self.gfe_cfg)

    def predict(self, points: np.ndarray, mode: str = "granet", graphs: GfeGraphs | None = None,
                full_grid: bool = False) -> Prediction:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        cfg = self.cfg
        points = np.asarray(points, dtype=np.float64)
        store = self.store.frozen()
        with T.no_grad():
            gfe = gfe_forward(points, self.gfe_cfg, store, graphs)
            warnings: list[str] = []
            if mode == "granet":
                obj = ops_select(points, gfe.indices, gfe.features, store, cfg.n_obj, cfg.knn_k,
                                 fps_seed_index=cfg.fps_seed_index)
                val, _ = vps_select(points, obj, store, cfg.n_val, cfg.knn_k, cfg.dov_levels)
                warnings = obj.warnings + val.warnings
                ops_mask = np.argmax(obj.logits.data, axis=1) == 1
                value = expected_level(val.logits.data)
                obj_idx, sel, feats = obj.indices, val.indices, val.features
            else:
                local = farthest_point_sampling(points[gfe.indices], min(cfg.n_val, len(gfe.indices)),
                                                cfg.fps_seed_index)
                sel = gfe.indices[local]
                stage = SelectionStage(T.Tensor(np.zeros((len(local), 2))), sel, local,
                                       rebuild_graph(points, sel, cfg.knn_k),
                                       T.gather_rows(gfe.features, local))
                feats = vps_features(store, stage)
                ops_mask, value, obj_idx = None, None, np.zeros(0, dtype=np.int64)
            _, views = predict_view(store, feats, cfg.views)
            crops, _ = crop_batch(points, points[sel], self.lattice.vectors[views], self.gpg_cfg)
            scores, widths = grasp_head(store, crops, self.gpg_cfg)
        grasps = decode_grasps(points[sel], sel, views, scores.data, widths.data, self.lattice,
                               self.gpg_cfg, full_grid)
        return Prediction(grasps, gfe.indices, obj_idx, sel, ops_mask, value, views, warnings)


def check_layout(store: ParameterStore, reference: ParameterStore) -> None:
    """Raise if ``store`` does not have exactly the reference names and shapes."""
    names, ref = set(store), set(reference)
    if names != ref:
        missing = sorted(ref - names)
        extra = sorted(names - ref)
        what = f"missing {missing[0]!r}" if missing else f"unexpected {extra[0]!r}"
        raise ValueError(f"checkpoint does not match the configured network: {what}")
    for name in ref:
        if store[name].shape != reference[name].shape:
            raise ValueError(f"parameter {name}: expected shape {reference[name].shape}, "
                             f"got {store[name].shape}")
