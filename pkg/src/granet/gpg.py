"""Grasp pose generation: view classification, cylinder-crop heads, decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .evaluation import GraspPose
from .geometry import ViewLattice, assemble_rotation, cylinder_crop
from .nn import ParameterStore, affine_apply, mlp_apply
from .tensor import Tensor

ENCODER_WIDTHS = (3, 64, 128)


@dataclass(frozen=True)
class GpgConfig:
    views: int = 300
    angle_bins: int = 12
    depth_bins: tuple[float, ...] = (0.01, 0.02, 0.03, 0.04)
    w_max: float = 0.1
    cylinder_radius: float = 0.05
    cylinder_depth_lo: float = -0.02
    cylinder_depth_hi: float = 0.04
    cylinder_points: int = 64

    def __post_init__(self):
        if self.views < 1 or self.angle_bins < 1 or not self.depth_bins:
            raise ValueError("views, angle bins and depth bins must be nonempty")
        if self.w_max <= 0:
            raise ValueError("w_max must be positive")

    @property
    def cells(self) -> int:
        return self.angle_bins * len(self.depth_bins)


def init_gpg(store: ParameterStore, cfg: GpgConfig) -> None:
    store.add_mlp("gpg.view", (256, 128, cfg.views))
    store.add_mlp("gpg.encoder", ENCODER_WIDTHS)
    store.add_affine("gpg.head", ENCODER_WIDTHS[-1], 2 * cfg.cells)


def view_logits(store: ParameterStore, features: Tensor, views: int) -> Tensor:
    return mlp_apply(store, "gpg.view", features, (256, 128, views))


def predict_view(store: ParameterStore, features: Tensor, views: int) -> tuple[Tensor, np.ndarray]:
    """View logits and the chosen view per point (lowest index on ties)."""
    logits = view_logits(store, features, views)
    return logits, np.argmax(logits.data, axis=1)


def crop_batch(cloud: np.ndarray, centers: np.ndarray, approaches: np.ndarray,
               cfg: GpgConfig) -> tuple[np.ndarray, np.ndarray]:
    """Stacked crops (n x max_points x 3) and their empty flags."""
    crops = np.zeros((len(centers), cfg.cylinder_points, 3))
    empty = np.zeros(len(centers), dtype=bool)
    for i, (c, a) in enumerate(zip(centers, approaches)):
        local, empty[i] = cylinder_crop(cloud, c, a, cfg.cylinder_radius, cfg.cylinder_depth_lo,
                                        cfg.cylinder_depth_hi, cfg.cylinder_points)
        crops[i] = local if not empty[i] else 0.0
    return crops, empty


def grasp_head(store: ParameterStore, crops, cfg: GpgConfig) -> tuple[Tensor, Tensor]:
    """Per-crop ``(scores, widths)``, each ``n x (angle_bins * depth_bins)``.

    Cell ``a * len(depth_bins) + d`` holds angle bin ``a`` and depth bin
    ``d``.  Widths are ``w_max * sigmoid(.)``.
    """
    crops = T.as_tensor(crops)
    n, m, _ = crops.shape
    enc = mlp_apply(store, "gpg.encoder", T.reshape(crops, (n * m, 3)), ENCODER_WIDTHS,
                    final_relu=True)
    pooled = T.tmax(T.reshape(enc, (n, m, ENCODER_WIDTHS[-1])), axis=1)
    out = affine_apply(store, "gpg.head", pooled, 2 * cfg.cells)
    c = cfg.cells
    scores = T.index(out, (slice(None), slice(0, c)))
    widths = T.mul(T.sigmoid(T.index(out, (slice(None), slice(c, 2 * c)))), cfg.w_max)
    return scores, widths


def decode_grasps(points: np.ndarray, point_ids: np.ndarray, view_index: np.ndarray,
                  scores: np.ndarray, widths: np.ndarray, lattice: ViewLattice,
                  cfg: GpgConfig, full_grid: bool = False) -> list[GraspPose]:
    """Best (angle, depth) cell per point as a pose, sorted by score descending.

    With ``full_grid`` every cell of every point is emitted.
    """
    depths = np.asarray(cfg.depth_bins, dtype=np.float64)
    D = len(depths)
    out = []
    for i in range(len(points)):
        cells = range(cfg.cells) if full_grid else [int(np.argmax(scores[i]))]
        v = lattice.vectors[view_index[i]]
        for cell in cells:
            a, d = divmod(cell, D)
            theta = (a + 0.5) * np.pi / cfg.angle_bins
            out.append(GraspPose(R=assemble_rotation(v, theta), T=points[i] + depths[d] * v,
                                 width=float(widths[i, cell]), depth=float(depths[d]),
                                 score=float(scores[i, cell]), point=int(point_ids[i])))
    order = np.lexsort((np.arange(len(out)), [g.point for g in out], [-g.score for g in out]))
    return [out[j] for j in order]
