"""Analytic grasp oracle: closing-line contacts, friction requirement, collisions.

Grasp frame convention: column 0 of ``R`` is the approach direction, column 1
the closing direction, column 2 their cross product.  ``T`` is the closing
centre; the two fingers sit at ``T -/+ (width/2) * closing``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import json
from pathlib import Path

import numba
import numpy as np

from .geometry import ViewLattice, align_x_to, farthest_point_sampling, roll_about_x
from .scenes import SyntheticScene

MU_MAX = 1.2


@dataclass(frozen=True)
class GripperModel:
    finger_thickness: float = 0.01
    finger_length: float = 0.06
    finger_height: float = 0.02
    back_clearance: float = 0.02
    contact_exclusion: float = 0.005

    def reach(self, width, depth):
        """Upper bound on the distance from ``T`` to any gripper point."""
        xb = np.asarray(depth) + self.back_clearance + self.finger_thickness
        x = np.maximum(xb, self.finger_length - np.asarray(depth) - self.back_clearance)
        y = 0.5 * np.asarray(width) + self.finger_thickness
        return np.sqrt(x * x + y * y + (0.5 * self.finger_height) ** 2)


def contact_mu(scene: SyntheticScene, R: np.ndarray, T: np.ndarray, width: np.ndarray):
    """Friction coefficient needed by each grasp; ``inf`` when not a valid pinch.

    A grasp is a valid pinch when exactly one primitive meets the closing
    segment and its chord lies within the finger gap.  Returns
    ``(mu, c1, c2, target)`` with contact points and the 1-based object id
    (0 when invalid).
    """
    R = np.asarray(R, dtype=np.float64).reshape(-1, 3, 3)
    T = np.asarray(T, dtype=np.float64).reshape(-1, 3)
    width = np.broadcast_to(np.asarray(width, dtype=np.float64), (len(T),))
    y = R[:, :, 1]
    half = 0.5 * width
    n = len(T)
    hits = np.zeros(n, dtype=np.int64)
    target = np.zeros(n, dtype=np.int64)
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    for oid, prim in enumerate(scene.primitives, start=1):
        a, b = prim.line_interval(T, y)
        touch = (b > -half) & (a < half)
        hits += touch
        target = np.where(touch, oid, target)
        lo = np.where(touch, a, lo)
        hi = np.where(touch, b, hi)
    ok = (hits == 1) & (lo >= -half) & (hi <= half)
    mu = np.full(n, np.inf)
    c1 = T + lo[:, None] * y
    c2 = T + hi[:, None] * y
    for oid, prim in enumerate(scene.primitives, start=1):
        sel = ok & (target == oid)
        if not sel.any():
            continue
        n1 = prim.normal(c1[sel])
        n2 = prim.normal(c2[sel])
        ys = y[sel]
        # finger at -w/2 pushes along +y against inward normal -n1; the other along -y
        cos1 = -np.einsum("ij,ij->i", n1, ys)
        cos2 = np.einsum("ij,ij->i", n2, ys)
        mu[sel] = np.maximum(_tan_from_cos(cos1), _tan_from_cos(cos2))
    target[~ok] = 0
    return mu, c1, c2, target


def _tan_from_cos(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.sqrt(np.clip(1.0 - c * c, 0.0, None)) / c
    return np.where(c > 0, t, np.inf)


def gripper_boxes(width: np.ndarray, depth: np.ndarray, gripper: GripperModel) -> np.ndarray:
    """Axis-aligned boxes (left finger, right finger, back plate) in the grasp frame.

    Shape ``(n, 3, 2, 3)``: box, (min, max), xyz.
    """
    width = np.asarray(width, dtype=np.float64).reshape(-1)
    depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), width.shape)
    t, hh = gripper.finger_thickness, 0.5 * gripper.finger_height
    xb = -depth - gripper.back_clearance
    xt = xb + gripper.finger_length
    hw = 0.5 * width
    n = len(width)
    boxes = np.empty((n, 3, 2, 3))
    boxes[:, 0, 0] = np.stack([xb, -hw - t, np.full(n, -hh)], 1)
    boxes[:, 0, 1] = np.stack([xt, -hw, np.full(n, hh)], 1)
    boxes[:, 1, 0] = np.stack([xb, hw, np.full(n, -hh)], 1)
    boxes[:, 1, 1] = np.stack([xt, hw + t, np.full(n, hh)], 1)
    boxes[:, 2, 0] = np.stack([xb - t, -hw - t, np.full(n, -hh)], 1)
    boxes[:, 2, 1] = np.stack([xb, hw + t, np.full(n, hh)], 1)
    return boxes


@numba.njit(cache=True)
def _collide_kernel(P, R, T, boxes, c1, c2, reach2, ex2):
    n = T.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        for k in range(P.shape[0]):
            dx = P[k, 0] - T[i, 0]
            dy = P[k, 1] - T[i, 1]
            dz = P[k, 2] - T[i, 2]
            if dx * dx + dy * dy + dz * dz > reach2[i]:
                continue
            lx = dx * R[i, 0, 0] + dy * R[i, 1, 0] + dz * R[i, 2, 0]
            ly = dx * R[i, 0, 1] + dy * R[i, 1, 1] + dz * R[i, 2, 1]
            lz = dx * R[i, 0, 2] + dy * R[i, 1, 2] + dz * R[i, 2, 2]
            hit = False
            for b in range(3):
                if (boxes[i, b, 0, 0] < lx < boxes[i, b, 1, 0]
                        and boxes[i, b, 0, 1] < ly < boxes[i, b, 1, 1]
                        and boxes[i, b, 0, 2] < lz < boxes[i, b, 1, 2]):
                    hit = True
                    break
            if not hit:
                continue
            e1 = (P[k, 0] - c1[i, 0]) ** 2 + (P[k, 1] - c1[i, 1]) ** 2 + (P[k, 2] - c1[i, 2]) ** 2
            e2 = (P[k, 0] - c2[i, 0]) ** 2 + (P[k, 1] - c2[i, 1]) ** 2 + (P[k, 2] - c2[i, 2]) ** 2
            if e1 > ex2 and e2 > ex2:
                out[i] = True
                break
    return out


def collides(points: np.ndarray, R: np.ndarray, T: np.ndarray, width, depth, c1, c2,
             gripper: GripperModel = GripperModel()) -> np.ndarray:
    """True where any scene point, away from both contacts, is strictly inside the gripper."""
    R = np.ascontiguousarray(np.asarray(R, dtype=np.float64).reshape(-1, 3, 3))
    T = np.ascontiguousarray(np.asarray(T, dtype=np.float64).reshape(-1, 3))
    n = len(T)
    width = np.broadcast_to(np.asarray(width, dtype=np.float64), (n,))
    depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), (n,))
    c1 = np.ascontiguousarray(np.broadcast_to(np.asarray(c1, dtype=np.float64), (n, 3)))
    c2 = np.ascontiguousarray(np.broadcast_to(np.asarray(c2, dtype=np.float64), (n, 3)))
    boxes = gripper_boxes(width, depth, gripper)
    reach = gripper.reach(width, depth)
    return _collide_kernel(np.ascontiguousarray(points, dtype=np.float64), R, T, boxes,
                           c1, c2, reach * reach, gripper.contact_exclusion ** 2)


def collision_check(points: np.ndarray, R, T, width: float, depth: float,
                    contacts=None, gripper: GripperModel = GripperModel()) -> bool:
    """Single-pose collision test; ``contacts`` defaults to far-away points (no exclusion)."""
    if contacts is None:
        far = np.full(3, np.inf)
        contacts = (far, far)
    return bool(collides(points, R, T, width, depth, contacts[0], contacts[1], gripper)[0])


def evaluate_grasps(scene: SyntheticScene, R, T, width, depth,
                    gripper: GripperModel = GripperModel()) -> dict:
    """Recompute ``mu_min`` and collision status for arbitrary poses."""
    mu, c1, c2, target = contact_mu(scene, R, T, width)
    coll = np.zeros(len(mu), dtype=bool)
    valid = np.isfinite(mu)
    if valid.any():
        R = np.asarray(R).reshape(-1, 3, 3)
        T = np.asarray(T).reshape(-1, 3)
        w = np.broadcast_to(np.asarray(width, dtype=np.float64), (len(mu),))
        d = np.broadcast_to(np.asarray(depth, dtype=np.float64), (len(mu),))
        coll[valid] = collides(scene.points, R[valid], T[valid], w[valid], d[valid],
                               c1[valid], c2[valid], gripper)
    return {"mu": mu, "collision": coll, "target": target}


# -- annotation ------------------------------------------------------------------
@dataclass
class GraspAnnotationSet:
    """Flat table of annotated grasps; ``point`` indexes the scene cloud."""
    point: np.ndarray
    approach: np.ndarray
    angle: np.ndarray
    depth: np.ndarray
    width: np.ndarray
    mu: np.ndarray
    score: np.ndarray
    view: np.ndarray = field(default=None)
    angle_bin: np.ndarray = field(default=None)
    depth_bin: np.ndarray = field(default=None)
    annotated_points: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.point)

    def for_point(self, i: int) -> np.ndarray:
        return np.nonzero(self.point == i)[0]

    def mean_scores(self, num_points: int) -> tuple[np.ndarray, np.ndarray]:
        """Per cloud point mean score and grasp count."""
        cnt = np.bincount(self.point, minlength=num_points)
        tot = np.bincount(self.point, weights=self.score, minlength=num_points)
        mean = np.divide(tot, cnt, out=np.zeros(num_points), where=cnt > 0)
        return mean, cnt

    def best_per_point(self) -> dict[int, int]:
        """Row of the highest-scoring grasp per point (lowest row on ties)."""
        order = np.lexsort((np.arange(len(self)), -self.score, self.point))
        first = np.ones(len(order), dtype=bool)
        first[1:] = self.point[order][1:] != self.point[order][:-1]
        rows = order[first]
        return {int(self.point[r]): int(r) for r in rows}


@dataclass(frozen=True)
class AnnotationConfig:
    angle_bins: int = 12
    depth_bins: tuple[float, ...] = (0.01, 0.02, 0.03, 0.04)
    w_max: float = 0.1
    width_margin: float = 0.005
    view_cone_deg: float = 40.0
    max_points: int = 4096
    max_grasps_per_point: int = 24
    chunk_points: int = 64


def annotate_grasps(scene: SyntheticScene, lattice: ViewLattice,
                    config: AnnotationConfig = AnnotationConfig(),
                    gripper: GripperModel = GripperModel()) -> GraspAnnotationSet:
    """Enumerate (view, angle, depth) grasps at object points and keep feasible ones.

    Views are limited to a cone around the inward surface normal.  The width
    is the chord of the point's own primitive plus a margin on each side.
    """

    obj = np.nonzero(scene.object_mask)[0]
    if len(obj) > config.max_points:
        obj = np.sort(obj[farthest_point_sampling(scene.points[obj], config.max_points)])
    normals = scene.normals()
    A = config.angle_bins
    angles = (np.arange(A) + 0.5) * np.pi / A
    depths = np.asarray(config.depth_bins, dtype=np.float64)
    rolls = roll_about_x(angles)
    aligned = align_x_to(lattice.vectors)
    rot_table = aligned[:, None] @ rolls[None]  # V x A x 3 x 3
    cos_cone = np.cos(np.radians(config.view_cone_deg))

    cols = {k: [] for k in ("point", "view", "angle_bin", "depth_bin", "width", "mu")}
    cone = (normals[obj] @ -lattice.vectors.T) >= cos_cone  # points x views
    for start in range(0, len(obj), config.chunk_points):
        pts = obj[start:start + config.chunk_points]
        pi, vv = np.nonzero(cone[start:start + config.chunk_points])
        if len(pi) == 0:
            continue
        nc = len(pi)
        pi = np.repeat(pi, A * len(depths))
        vv = np.repeat(vv, A * len(depths))
        aa = np.tile(np.repeat(np.arange(A), len(depths)), nc)
        dd = np.tile(np.arange(len(depths)), nc * A)
        R = rot_table[vv, aa]
        T = scene.points[pts[pi]] + depths[dd][:, None] * lattice.vectors[vv]
        oid = scene.object_ids[pts[pi]]
        lo = np.full(len(T), np.nan)
        hi = np.full(len(T), np.nan)
        for o in np.unique(oid):
            sel = oid == o
            lo[sel], hi[sel] = scene.primitives[o - 1].line_interval(T[sel], R[sel, :, 1])
        width = 2.0 * np.fmax(np.abs(lo), np.abs(hi)) + 2.0 * config.width_margin
        ok = np.isfinite(width) & (width <= config.w_max)
        pi, vv, aa, dd, R, T, width, oid = (x[ok] for x in (pi, vv, aa, dd, R, T, width, oid))
        mu, c1, c2, target = contact_mu(scene, R, T, width)
        ok = (mu < MU_MAX) & (target == oid)
        pi, vv, aa, dd, R, T, width, mu, c1, c2 = (
            x[ok] for x in (pi, vv, aa, dd, R, T, width, mu, c1, c2))
        keep = ~collides(scene.points, R, T, width, depths[dd], c1, c2, gripper)
        rows = _cap_per_point(pi[keep], mu[keep], config.max_grasps_per_point)
        kept = np.nonzero(keep)[0][rows]
        cols["point"].append(pts[pi[kept]])
        cols["view"].append(vv[kept])
        cols["angle_bin"].append(aa[kept])
        cols["depth_bin"].append(dd[kept])
        cols["width"].append(width[kept])
        cols["mu"].append(mu[kept])
    flat = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in cols.items()}
    view = flat["view"].astype(np.int64)
    abin = flat["angle_bin"].astype(np.int64)
    dbin = flat["depth_bin"].astype(np.int64)
    return GraspAnnotationSet(
        point=flat["point"].astype(np.int64), approach=lattice.vectors[view],
        angle=angles[abin], depth=depths[dbin], width=flat["width"], mu=flat["mu"],
        score=(MU_MAX - flat["mu"]) / MU_MAX, view=view, angle_bin=abin, depth_bin=dbin,
        annotated_points=obj)


def _cap_per_point(point: np.ndarray, mu: np.ndarray, cap: int) -> np.ndarray:
    """Rows to keep: per point the best grasp plus an even stride over the rest.

    ``point`` must be non-decreasing (enumeration order); the result keeps
    that order.
    """
    if cap <= 0:
        return np.arange(len(point))
    keep = []
    bounds = np.flatnonzero(np.diff(point)) + 1
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(point)]):
        n = hi - lo
        if n <= cap:
            keep.append(np.arange(lo, hi))
            continue
        best = lo + int(np.argmin(mu[lo:hi]))
        rest = np.setdiff1d(np.arange(lo, hi), [best])
        pick = rest[np.linspace(0, len(rest) - 1, cap - 1).round().astype(np.int64)]
        keep.append(np.sort(np.r_[best, pick]))
    return np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)


# -- annotation file ------------------------------------------------------------
ANNOTATION_FIELDS = ("ax", "ay", "az", "angle", "depth", "width", "mu_min", "score")


def _fmt(x: float) -> float:
    return float(f"{x:.9g}")


def annotations_to_dict(ann: GraspAnnotationSet, seed: int,
                        config: AnnotationConfig = AnnotationConfig()) -> dict:
    rows = np.column_stack([ann.approach, ann.angle, ann.depth, ann.width, ann.mu, ann.score])
    grasps: dict[str, list] = {}
    for i, row in zip(ann.point.tolist(), rows.tolist()):
        grasps.setdefault(str(i), []).append([_fmt(v) for v in row])
    return {"seed": int(seed), "angle_bins": config.angle_bins,
            "depth_bins": [float(d) for d in config.depth_bins], "fields": list(ANNOTATION_FIELDS),
            "annotated_points": [int(i) for i in ann.annotated_points], "grasps": grasps}


def annotations_from_dict(d: dict, lattice: ViewLattice) -> GraspAnnotationSet:
    if d.get("fields") != list(ANNOTATION_FIELDS):
        raise ValueError(f"annotation fields {d.get('fields')} not understood")
    pts, rows = [], []
    for key in sorted(d["grasps"], key=int):
        for row in d["grasps"][key]:
            pts.append(int(key))
            rows.append(row)
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, len(ANNOTATION_FIELDS))
    A = int(d["angle_bins"])
    depths = np.asarray(d["depth_bins"], dtype=np.float64)
    approach = arr[:, :3]
    return GraspAnnotationSet(
        point=np.asarray(pts, dtype=np.int64), approach=approach, angle=arr[:, 3],
        depth=arr[:, 4], width=arr[:, 5], mu=arr[:, 6], score=arr[:, 7],
        view=lattice.nearest(approach) if len(arr) else np.zeros(0, dtype=np.int64),
        angle_bin=np.clip(np.floor(arr[:, 3] * A / np.pi).astype(np.int64), 0, A - 1),
        depth_bin=np.argmin(np.abs(arr[:, 4:5] - depths[None]), axis=1),
        annotated_points=np.asarray(d["annotated_points"], dtype=np.int64))


def save_annotations(ann: GraspAnnotationSet, path, seed: int,
                     config: AnnotationConfig = AnnotationConfig()) -> None:
    Path(path).write_text(json.dumps(annotations_to_dict(ann, seed, config),
                                     separators=(",", ":")) + "\n")


def load_annotations(path, lattice: ViewLattice) -> GraspAnnotationSet:
    return annotations_from_dict(json.loads(Path(path).read_text()), lattice)
