"""Text artifacts: grasp lists, JSON reports and ASCII PLY files."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .evaluation import GraspPose
from .oracle import GripperModel


def fmt(x: float) -> str:
    return f"{float(x):.9g}"


def round_floats(obj):
    """Recursively round floats to 9 significant digits for stable text output."""
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    if isinstance(obj, np.generic):
        return round_floats(obj.item())
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(round_floats(obj), indent=2, sort_keys=True) + "\n")


GRASP_HEADER = "# score r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz width depth"


def dumps_grasps(grasps: list[GraspPose]) -> str:
    lines = [GRASP_HEADER]
    for g in grasps:
        vals = [g.score, *g.R.reshape(-1), *g.T, g.width, g.depth]
        lines.append(" ".join(fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def write_grasps(grasps: list[GraspPose], path) -> None:
    Path(path).write_text(dumps_grasps(grasps))


def read_grasps(path) -> list[GraspPose]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        v = [float(x) for x in line.split()]
        if len(v) != 15:
            raise ValueError(f"grasp line has {len(v)} fields, expected 15")
        out.append(GraspPose(R=np.reshape(v[1:10], (3, 3)), T=v[10:13], width=v[13], depth=v[14],
                             score=v[0]))
    return out


# -- PLY -------------------------------------------------------------------------
def _ply_header(n_vertex: int, vertex_props: list[tuple[str, str]], n_edge: int = 0) -> list[str]:
    head = ["ply", "format ascii 1.0", f"element vertex {n_vertex}"]
    head += [f"property {t} {name}" for name, t in vertex_props]
    if n_edge:
        head += [f"element edge {n_edge}", "property int vertex1", "property int vertex2",
                 "property uchar red", "property uchar green", "property uchar blue"]
    head.append("end_header")
    return head


def _vertex_line(row, kinds) -> str:
    return " ".join(str(int(v)) if k != "float" else fmt(v) for v, k in zip(row, kinds))


def write_point_ply(path, points: np.ndarray, colors: np.ndarray,
                    scalars: dict[str, np.ndarray] | None = None) -> None:
    """Colored points with optional extra float properties."""
    scalars = scalars or {}
    props = [("x", "float"), ("y", "float"), ("z", "float"), ("red", "uchar"),
             ("green", "uchar"), ("blue", "uchar")] + [(k, "float") for k in scalars]
    kinds = [t for _, t in props]
    cols = [points, colors] + [np.asarray(v, dtype=np.float64)[:, None] for v in scalars.values()]
    table = np.hstack(cols) if len(points) else np.zeros((0, len(props)))
    lines = _ply_header(len(points), props) + [_vertex_line(r, kinds) for r in table]
    Path(path).write_text("\n".join(lines) + "\n")


def heat_colors(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Blue (low) to red (high), as 0..255 integers."""
    t = np.clip((np.asarray(values, dtype=np.float64) - lo) / max(hi - lo, 1e-12), 0.0, 1.0)
    return np.round(np.stack([255 * t, 64 * (1 - np.abs(2 * t - 1)), 255 * (1 - t)], 1)).astype(int)


def gripper_segments(g: GraspPose, gripper: GripperModel = GripperModel()) -> np.ndarray:
    """Line segments (s x 2 x 3) sketching the jaw in world coordinates."""
    xb = -g.depth - gripper.back_clearance
    xt = xb + gripper.finger_length
    hw = 0.5 * g.width
    local = np.array([
        [[xb, -hw, 0], [xt, -hw, 0]],
        [[xb, hw, 0], [xt, hw, 0]],
        [[xb, -hw, 0], [xb, hw, 0]],
        [[xb, 0, 0], [xb - 0.02, 0, 0]],
    ])
    return local @ g.R.T + g.T


def write_grasp_ply(path, grasps: list[GraspPose]) -> None:
    """Grasp frames as vertices plus colored edges (color by score rank)."""
    verts, edges = [], []
    scores = np.array([g.score for g in grasps]) if grasps else np.zeros(0)
    colors = heat_colors(scores, scores.min(initial=0), scores.max(initial=1)) if grasps else []
    for g, c in zip(grasps, colors):
        for a, b in gripper_segments(g):
            edges.append((len(verts), len(verts) + 1, *c))
            verts.extend([a, b])
    props = [("x", "float"), ("y", "float"), ("z", "float")]
    lines = _ply_header(len(verts), props, len(edges))
    lines += [" ".join(fmt(x) for x in v) for v in verts]
    lines += [" ".join(str(int(x)) for x in e) for e in edges]
    Path(path).write_text("\n".join(lines) + "\n")
