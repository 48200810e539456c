"""Grasp deduplication and the Precision@k / AP protocol."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .oracle import GripperModel, evaluate_grasps
from .scenes import SyntheticScene

MU_GRID = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)


@dataclass
class GraspPose:
    R: np.ndarray
    T: np.ndarray
    width: float
    depth: float
    score: float
    point: int = -1

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)
        self.width = float(self.width)
        self.depth = float(self.depth)
        self.score = float(self.score)

    def is_valid(self, w_max: float = 0.1, tol: float = 1e-6) -> bool:
        ortho = np.abs(self.R.T @ self.R - np.eye(3)).max() < tol
        return bool(ortho and abs(np.linalg.det(self.R) - 1.0) < tol
                    and 0.0 <= self.width <= w_max)


def stack_poses(grasps: list[GraspPose]) -> dict[str, np.ndarray]:
    n = len(grasps)
    return {
        "R": np.array([g.R for g in grasps]).reshape(n, 3, 3),
        "T": np.array([g.T for g in grasps]).reshape(n, 3),
        "width": np.array([g.width for g in grasps], dtype=np.float64),
        "depth": np.array([g.depth for g in grasps], dtype=np.float64),
        "score": np.array([g.score for g in grasps], dtype=np.float64),
        "point": np.array([g.point for g in grasps], dtype=np.int64),
    }


def rank_order(grasps: list[GraspPose]) -> np.ndarray:
    """Score descending; ties by point index, then input position."""
    if not grasps:
        return np.zeros(0, dtype=np.int64)
    s = stack_poses(grasps)
    return np.lexsort((np.arange(len(grasps)), s["point"], -s["score"]))


def rotation_angle(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Geodesic angle between rotations (broadcasts over leading axes)."""
    tr = np.einsum("...ij,...ij->...", Ra, Rb)
    return np.arccos(np.clip((tr - 1.0) * 0.5, -1.0, 1.0))


def grasp_nms(grasps: list[GraspPose], trans_thresh: float = 0.03,
              rot_thresh_deg: float = 30.0) -> tuple[list[GraspPose], int]:
    """Greedy suppression; returns ``(kept, number_suppressed)``.

    A grasp is dropped when an already kept grasp lies within both the
    translation and the rotation threshold.
    """
    order = rank_order(grasps)
    rot_thresh = np.radians(rot_thresh_deg)
    kept: list[GraspPose] = []
    kT = np.zeros((0, 3))
    kR = np.zeros((0, 3, 3))
    for i in order:
        g = grasps[i]
        if len(kept):
            near = np.linalg.norm(kT - g.T, axis=1) <= trans_thresh
            if near.any() and np.any(rotation_angle(kR[near], g.R) <= rot_thresh):
                continue
        kept.append(g)
        kT = np.vstack([kT, g.T])
        kR = np.concatenate([kR, g.R[None]])
    return kept, len(grasps) - len(kept)


@dataclass
class EvalReport:
    ap_mu: dict[float, float]
    ap: float
    precision: dict[float, np.ndarray]
    num_predictions: int
    num_collisions: int
    num_duplicates: int
    k: int
    mu_min: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap_mu": {f"{m:.1f}": v for m, v in self.ap_mu.items()},
            "precision_at_k": {f"{m:.1f}": [float(x) for x in p] for m, p in self.precision.items()},
            "num_predictions": self.num_predictions,
            "num_collisions": self.num_collisions,
            "num_duplicates": self.num_duplicates,
            "k": self.k,
        }


def exact_mean(values) -> float:
    """Mean of floats, rounded once from the exact rational result."""
    values = list(values)
    if not values:
        return 0.0
    return float(sum(map(Fraction, values), Fraction(0)) / len(values))


def exact_precision_mean(tp: np.ndarray, k: int) -> float:
    """Mean over j = 1..k of hits-in-top-j / j, computed exactly then rounded."""
    m = min(len(tp), k)
    hits = np.cumsum(np.asarray(tp[:m], dtype=np.int64))
    total = sum((Fraction(int(h), j) for j, h in enumerate(hits, start=1)), Fraction(0))
    c = int(hits[-1]) if m else 0
    total += sum((Fraction(c, j) for j in range(m + 1, k + 1)), Fraction(0))
    return float(total / k)


def precision_curve(tp: np.ndarray, k: int) -> np.ndarray:
    """Precision@j for j = 1..k; slots past the end of ``tp`` are false positives."""
    hits = np.zeros(k)
    m = min(len(tp), k)
    hits[:m] = np.asarray(tp[:m], dtype=np.float64)
    return np.cumsum(hits) / np.arange(1, k + 1)


def evaluate_ap(grasps: list[GraspPose], scene: SyntheticScene, k: int = 50,
                mus=MU_GRID, trans_thresh: float = 0.03, rot_thresh_deg: float = 30.0,
                gripper: GripperModel = GripperModel()) -> EvalReport:
    """NMS, then the top ``k`` by score scored against the analytic oracle."""
    kept, dup = grasp_nms(grasps, trans_thresh, rot_thresh_deg)
    top = kept[:k]
    if top:
        s = stack_poses(top)
        res = evaluate_grasps(scene, s["R"], s["T"], s["width"], s["depth"], gripper)
        mu, coll = res["mu"], res["collision"]
    else:
        mu, coll = np.zeros(0), np.zeros(0, dtype=bool)
    ap_mu, prec = {}, {}
    for m in mus:
        tp = (~coll) & (mu <= m)
        prec[float(m)] = precision_curve(tp, k)
        ap_mu[float(m)] = exact_precision_mean(tp, k)
    ap = exact_mean(ap_mu.values())
    return EvalReport(ap_mu=ap_mu, ap=ap, precision=prec, num_predictions=len(grasps),
                      num_collisions=int(coll.sum()), num_duplicates=dup, k=k, mu_min=mu)


def mean_report(reports: list[EvalReport]) -> dict:
    """Average AP figures over scenes."""
    if not reports:
        return {"ap": 0.0, "ap_mu": {}, "scenes": 0}
    mus = list(reports[0].ap_mu)
    return {
        "ap": float(np.mean([r.ap for r in reports])),
        "ap_mu": {f"{m:.1f}": float(np.mean([r.ap_mu[m] for r in reports])) for m in mus},
        "num_collisions": int(sum(r.num_collisions for r in reports)),
        "num_duplicates": int(sum(r.num_duplicates for r in reports)),
        "scenes": len(reports),
    }
