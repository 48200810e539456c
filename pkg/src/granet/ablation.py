"""Paired evaluation of learned point selection against plain FPS."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import EvalReport, evaluate_ap, mean_report
from .model import MODES, GraNet, Prediction
from .scenes import SyntheticScene


class ContractError(AssertionError):
    pass


def check_selection(pred: Prediction, n_val: int, mode: str) -> None:
    """Grasp points must nest inside the object selection and the resample."""
    res = set(pred.resampled.tolist())
    grasp = pred.grasp_points.tolist()
    if len(set(grasp)) != len(grasp):
        raise ContractError("duplicate grasp points")
    if not set(grasp) <= res:
        raise ContractError("grasp points outside the resampled cloud")
    if mode == "granet":
        obj = set(pred.object_points.tolist())
        if not obj <= res:
            raise ContractError("object points outside the resampled cloud")
        if not set(grasp) <= obj:
            raise ContractError("grasp points outside the object selection")
    if len(grasp) != n_val and not pred.warnings:
        raise ContractError(f"{len(grasp)} grasp points without a shortfall warning, expected {n_val}")


def evaluate_scene(model: GraNet, scene: SyntheticScene, mode: str, graphs=None) -> tuple[EvalReport, Prediction]:
    cfg = model.cfg
    pred = model.predict(scene.points, mode, graphs)
    check_selection(pred, cfg.n_val, mode)
    report = evaluate_ap(pred.grasps, scene, cfg.eval_k, trans_thresh=cfg.nms_translation,
                         rot_thresh_deg=cfg.nms_rotation_deg)
    return report, pred


@dataclass
class AblationResult:
    reports: dict[str, list[EvalReport]]
    summary: dict[str, dict]
    predictions: dict[str, list[Prediction]]

    @property
    def delta(self) -> float:
        return self.summary["granet"]["ap"] - self.summary["fps-baseline"]["ap"]

    def to_dict(self) -> dict:
        return {"modes": self.summary, "delta_ap": self.delta,
                "per_scene": {m: [r.ap for r in rs] for m, rs in self.reports.items()}}


def run_ablation(scenes: list[SyntheticScene], model: GraNet) -> AblationResult:
    """Both modes on the same scenes with the same weights."""
    reports: dict[str, list[EvalReport]] = {m: [] for m in MODES}
    preds: dict[str, list[Prediction]] = {m: [] for m in MODES}
    for scene in scenes:
        graphs = model.graphs(scene.points)
        for mode in MODES:
            rep, pred = evaluate_scene(model, scene, mode, graphs)
            reports[mode].append(rep)
            preds[mode].append(pred)
    return AblationResult(reports, {m: mean_report(rs) for m, rs in reports.items()}, preds)


def precision_means(reports: list[EvalReport]) -> dict[float, np.ndarray]:
    mus = list(reports[0].precision)
    return {m: np.mean([r.precision[m] for r in reports], axis=0) for m in mus}
