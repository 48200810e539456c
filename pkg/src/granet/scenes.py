"""Synthetic tabletop scenes built from analytic primitives, plus their text format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PointCloud

KINDS = ("box", "cylinder", "sphere")


class SceneGenerationError(RuntimeError):
    pass


@dataclass
class Primitive:
    """Convex solid resting on z=0.  ``dims``: box (lx, ly, lz), cylinder
    (radius, height), sphere (radius,).  ``rotation``/``translation`` place the
    local frame whose origin is the solid's centre."""
    kind: str
    dims: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        self.dims = np.asarray(self.dims, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    # -- frames ----------------------------------------------------------
    def to_local(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p) - self.translation) @ self.rotation

    def dir_to_local(self, d: np.ndarray) -> np.ndarray:
        return np.asarray(d) @ self.rotation

    def to_world(self, q: np.ndarray) -> np.ndarray:
        return q @ self.rotation.T + self.translation

    @property
    def footprint_radius(self) -> float:
        if self.kind == "box":
            return 0.5 * float(np.hypot(self.dims[0], self.dims[1]))
        return float(self.dims[0])

    @property
    def height(self) -> float:
        return float({"box": self.dims[2] if self.kind == "box" else 0,
                      "cylinder": self.dims[1] if self.kind == "cylinder" else 0,
                      "sphere": 2 * self.dims[0]}[self.kind])

    # -- implicit surface --------------------------------------------------
    def implicit(self, p: np.ndarray) -> np.ndarray:
        """Zero on the surface, negative inside."""
        q = self.to_local(np.atleast_2d(p))
        if self.kind == "box":
            return np.max(np.abs(q) - 0.5 * self.dims, axis=1)
        if self.kind == "cylinder":
            radial = np.hypot(q[:, 0], q[:, 1]) - self.dims[0]
            return np.maximum(radial, np.abs(q[:, 2]) - 0.5 * self.dims[1])
        return np.linalg.norm(q, axis=1) - self.dims[0]

    def normal(self, p: np.ndarray) -> np.ndarray:
        """Outward unit normal at (near-)surface points."""
        q = self.to_local(np.atleast_2d(p))
        n = np.zeros_like(q)
        if self.kind == "box":
            excess = np.abs(q) - 0.5 * self.dims
            ax = np.argmax(excess, axis=1)
            rows = np.arange(len(q))
            n[rows, ax] = np.sign(q[rows, ax])
        elif self.kind == "cylinder":
            radial = np.hypot(q[:, 0], q[:, 1])
            cap = (np.abs(q[:, 2]) - 0.5 * self.dims[1]) >= (radial - self.dims[0])
            n[cap, 2] = np.sign(q[cap, 2])
            side = ~cap
            n[side, 0] = q[side, 0] / radial[side]
            n[side, 1] = q[side, 1] / radial[side]
        else:
            n = q / np.linalg.norm(q, axis=1, keepdims=True)
        return n @ self.rotation.T

    def line_interval(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Entry/exit parameters of lines ``o + t d`` (``d`` unit); NaN on a miss."""
        o = self.to_local(np.atleast_2d(origins))
        d = self.dir_to_local(np.atleast_2d(dirs))
        if self.kind == "box":
            return _slab(o, d, 0.5 * self.dims)
        if self.kind == "sphere":
            return _quadratic(o, d, self.dims[0])
        r, half_h = self.dims
        t0, t1 = _quadratic(o[:, :2], d[:, :2], r, allow_parallel=True)
        z0, z1 = _slab(o[:, 2:], d[:, 2:], np.array([half_h]))
        lo, hi = np.maximum(t0, z0), np.minimum(t1, z1)
        miss = ~(lo <= hi)
        lo[miss] = np.nan
        hi[miss] = np.nan
        return lo, hi

    # -- sampling ----------------------------------------------------------
    def face_areas(self) -> np.ndarray:
        """Areas of the sampled patches (the bottom face is never sampled)."""
        if self.kind == "box":
            lx, ly, lz = self.dims
            return np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly])
        if self.kind == "cylinder":
            r, h = self.dims
            return np.array([2 * np.pi * r * h, np.pi * r * r])
        return np.array([4 * np.pi * self.dims[0] ** 2])

    def sample_surface(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        areas = self.face_areas()
        face = rng.choice(len(areas), size=n, p=areas / areas.sum())
        u, v = rng.random(n), rng.random(n)
        q = np.zeros((n, 3))
        nl = np.zeros((n, 3))
        if self.kind == "box":
            hx, hy, hz = 0.5 * self.dims
            axis = np.array([0, 0, 1, 1, 2])[face]
            sign = np.array([1.0, -1.0, 1.0, -1.0, 1.0])[face]
            half = 0.5 * self.dims
            for a in range(3):
                on = axis == a
                others = [b for b in range(3) if b != a]
                q[on, a] = sign[on] * half[a]
                q[on, others[0]] = (2 * u[on] - 1) * half[others[0]]
                q[on, others[1]] = (2 * v[on] - 1) * half[others[1]]
                nl[on, a] = sign[on]
        elif self.kind == "cylinder":
            r, h = self.dims
            side = face == 0
            phi = 2 * np.pi * u
            q[side] = np.stack([r * np.cos(phi[side]), r * np.sin(phi[side]),
                                (v[side] - 0.5) * h], axis=1)
            nl[side] = np.stack([np.cos(phi[side]), np.sin(phi[side]), np.zeros(side.sum())], axis=1)
            cap = ~side
            rr = r * np.sqrt(v[cap])
            q[cap] = np.stack([rr * np.cos(phi[cap]), rr * np.sin(phi[cap]),
                               np.full(cap.sum(), 0.5 * h)], axis=1)
            nl[cap, 2] = 1.0
        else:
            z = 2 * u - 1
            phi = 2 * np.pi * v
            s = np.sqrt(1 - z * z)
            nl = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
            q = self.dims[0] * nl
        return self.to_world(q), nl @ self.rotation.T

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dimensions": _round(self.dims),
                "pose": {"R": _round(self.rotation), "T": _round(self.translation)}}

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        return cls(d["kind"], d["dimensions"], d["pose"]["R"], d["pose"]["T"])


def _slab(o, d, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (-half - o) * inv
        t1 = (half - o) * inv
    lo_ax = np.fmin(t0, t1)
    hi_ax = np.fmax(t0, t1)
    parallel = d == 0
    inside = np.abs(o) <= half
    lo_ax = np.where(parallel, np.where(inside, -np.inf, np.nan), lo_ax)
    hi_ax = np.where(parallel, np.where(inside, np.inf, np.nan), hi_ax)
    lo = np.max(lo_ax, axis=1)
    hi = np.min(hi_ax, axis=1)
    miss = ~(lo <= hi)
    lo[miss] = np.nan
    hi[miss] = np.nan
    return lo, hi


def _quadratic(o, d, r, allow_parallel=False):
    a = np.einsum("ij,ij->i", d, d)
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - r * r
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - a * c
        root = np.sqrt(disc)
        lo = (-b - root) / a
        hi = (-b + root) / a
    miss = ~(disc > 0)
    if allow_parallel:
        par = a < 1e-300
        lo = np.where(par, np.where(c <= 0, -np.inf, np.nan), lo)
        hi = np.where(par, np.where(c <= 0, np.inf, np.nan), hi)
        miss &= ~par
    lo[miss] = np.nan
    hi[miss] = np.nan
    return lo, hi


def _round(x) -> list | float:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        return float(f"{float(arr):.9g}")
    return [_round(v) for v in arr]


# -- scenes -----------------------------------------------------------------
@dataclass
class SceneProfile:
    name: str = "desk"
    num_points: int = 2048
    min_objects: int = 3
    max_objects: int = 8
    table_fraction: float = 0.35
    plane_half_extent: float = 0.2
    placement_half_extent: float = 0.13
    box_side: tuple[float, float] = (0.03, 0.07)
    box_height: tuple[float, float] = (0.03, 0.08)
    cylinder_radius: tuple[float, float] = (0.015, 0.035)
    cylinder_height: tuple[float, float] = (0.04, 0.10)
    sphere_radius: tuple[float, float] = (0.02, 0.04)
    min_object_points: int = 50
    camera: tuple[float, float, float] = (0.0, 0.0, 0.8)
    cull: bool = True


PROFILES = {
    "desk": SceneProfile(),
    "paper": SceneProfile(name="paper", num_points=12000),
}


@dataclass
class SyntheticScene:
    seed: int
    primitives: list[Primitive]
    plane_extent: float
    cloud: PointCloud
    meta: dict = field(default_factory=dict)

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    @property
    def object_ids(self) -> np.ndarray:
        return self.cloud.object_ids

    @property
    def object_mask(self) -> np.ndarray:
        return self.cloud.object_ids > 0

    def normals(self) -> np.ndarray:
        """Analytic outward normals (table points get +z)."""
        out = np.tile([0.0, 0.0, 1.0], (len(self.cloud), 1))
        for i, prim in enumerate(self.primitives, start=1):
            sel = self.object_ids == i
            if sel.any():
                out[sel] = prim.normal(self.points[sel])
        return out


def _place_primitive(rng, profile: SceneProfile, kind: str) -> Primitive:
    if kind == "box":
        lx, ly = rng.uniform(*profile.box_side, size=2)
        lz = rng.uniform(*profile.box_height)
        yaw = rng.uniform(0, np.pi)
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        return Primitive("box", [lx, ly, lz], rot, [0, 0, lz / 2])
    if kind == "cylinder":
        r = rng.uniform(*profile.cylinder_radius)
        h = rng.uniform(*profile.cylinder_height)
        return Primitive("cylinder", [r, h], np.eye(3), [0, 0, h / 2])
    r = rng.uniform(*profile.sphere_radius)
    return Primitive("sphere", [r], np.eye(3), [0, 0, r])


def generate_scene(seed: int, profile: SceneProfile | str = "desk") -> SyntheticScene:
    """Deterministic tabletop scene for ``seed``."""
    if isinstance(profile, str):
        profile = PROFILES[profile]
    rng = np.random.default_rng(seed)
    n_obj = int(rng.integers(profile.min_objects, profile.max_objects + 1))
    prims: list[Primitive] = []
    for _ in range(n_obj):
        kind = KINDS[int(rng.integers(len(KINDS)))]
        prim = _place_primitive(rng, profile, kind)
        for attempt in range(1000):
            xy = rng.uniform(-profile.placement_half_extent, profile.placement_half_extent, size=2)
            ok = all(np.hypot(*(xy - other.translation[:2]))
                     >= prim.footprint_radius + other.footprint_radius for other in prims)
            if ok:
                prim.translation[:2] = xy
                prims.append(prim)
                break
        else:
            raise SceneGenerationError(f"seed {seed}: could not place object {len(prims) + 1} "
                                       "after 1000 attempts")

    cam = np.asarray(profile.camera, dtype=np.float64)
    n_table = int(round(profile.num_points * profile.table_fraction))
    budget = profile.num_points - n_table
    visible_area = np.array([_visible_area(p, cam, rng) for p in prims])
    share = visible_area / visible_area.sum() * budget
    counts = np.maximum(np.floor(share).astype(int), profile.min_object_points)
    # fix rounding so the object points add up exactly
    while counts.sum() > budget:
        counts[int(np.argmax(counts))] -= 1
    frac_order = np.argsort(-(share - np.floor(share)), kind="stable")
    j = 0
    while counts.sum() < budget:
        counts[frac_order[j % len(prims)]] += 1
        j += 1

    pts, ids, nrm = [], [], []
    for oid, (prim, cnt) in enumerate(zip(prims, counts), start=1):
        got_p, got_n = [], []
        have = 0
        while have < cnt:
            p, nl = prim.sample_surface(rng, 2 * cnt)
            if profile.cull:
                keep = np.einsum("ij,ij->i", nl, cam - p) > 0
                p, nl = p[keep], nl[keep]
            got_p.append(p)
            got_n.append(nl)
            have += len(p)
        pts.append(np.concatenate(got_p)[:cnt])
        nrm.append(np.concatenate(got_n)[:cnt])
        ids.append(np.full(cnt, oid))

    table = []
    have = 0
    while have < n_table:
        xy = rng.uniform(-profile.plane_half_extent, profile.plane_half_extent, size=(2 * n_table, 2))
        free = np.ones(len(xy), dtype=bool)
        for prim in prims:
            free &= np.hypot(*(xy - prim.translation[:2]).T) > prim.footprint_radius
        table.append(xy[free])
        have += int(free.sum())
    table_xy = np.concatenate(table)[:n_table]
    pts.append(np.column_stack([table_xy, np.zeros(n_table)]))
    nrm.append(np.tile([0.0, 0.0, 1.0], (n_table, 1)))
    ids.append(np.zeros(n_table, dtype=int))

    points = np.concatenate(pts)
    object_ids = np.concatenate(ids)
    normals = np.concatenate(nrm)
    order = rng.permutation(len(points))
    cloud = PointCloud(points[order], object_ids[order], normals[order])
    return SyntheticScene(seed=int(seed), primitives=prims,
                          plane_extent=profile.plane_half_extent, cloud=cloud,
                          meta={"profile": profile.name})


def _visible_area(prim: Primitive, cam: np.ndarray, rng) -> float:
    """Monte-Carlo estimate of the camera-facing sampled area (own RNG stream)."""
    local = np.random.default_rng(int(rng.integers(2 ** 32)))
    p, nl = prim.sample_surface(local, 512)
    frac = np.mean(np.einsum("ij,ij->i", nl, cam - p) > 0)
    return float(prim.face_areas().sum() * max(frac, 1e-3))


# -- file format ----------------------------------------------------------------
def scene_to_dict(scene: SyntheticScene) -> dict:
    pts = [[*_round(p), int(i)] for p, i in zip(scene.points, scene.object_ids)]
    return {"seed": scene.seed, "profile": scene.meta.get("profile", "desk"),
            "plane_extent": _round(scene.plane_extent),
            "primitives": [p.to_dict() for p in scene.primitives], "points": pts}


def scene_from_dict(d: dict) -> SyntheticScene:
    prims = [Primitive.from_dict(p) for p in d["primitives"]]
    arr = np.asarray(d["points"], dtype=np.float64).reshape(-1, 4)
    scene = SyntheticScene(seed=int(d["seed"]), primitives=prims,
                           plane_extent=float(d["plane_extent"]),
                           cloud=PointCloud(arr[:, :3], arr[:, 3].astype(np.int64)),
                           meta={"profile": d.get("profile", "desk")})
    scene.cloud.normals = scene.normals()
    return scene


def dumps_scene(scene: SyntheticScene) -> str:
    return json.dumps(scene_to_dict(scene), separators=(",", ":")) + "\n"


def save_scene(scene: SyntheticScene, path) -> None:
    Path(path).write_text(dumps_scene(scene))


def load_scene(path) -> SyntheticScene:
    return scene_from_dict(json.loads(Path(path).read_text()))


def quantize_scene(scene: SyntheticScene) -> SyntheticScene:
    """Round-trip through the text format so in-memory values match the file."""
    return scene_from_dict(json.loads(dumps_scene(scene)))
