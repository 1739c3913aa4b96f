"""Procedural two-camera scenes with analytically known depth.

Scenes are built from axis-aligned boxes (slabs may have zero thickness
along one axis, giving rectangles), so every ray intersection is a
closed-form slab test. That exactness is the point: `oracle_classify`
ray-casts every pixel and is the tolerance-free ground truth the dense
annotator is scored against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covisibility import CovisLabel, CovisMap
from .geom3d import (
    BEHIND_CAMERA_EPS,
    CameraFrame,
    CameraIntrinsics,
    DepthMap,
    RigidPose,
    quat_from_axis_angle,
    quat_multiply,
    quat_to_matrix,
)

ORACLE_HIT_TOL = 1e-9  # meters; "first hit is that point" slack
_RAY_EPS = 1e-12


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi]; zero extent along an axis makes a rectangle."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box lo {self.lo} exceeds hi {self.hi}")

    def contains(self, p) -> bool:
        return all(l <= c <= h for l, c, h in zip(self.lo, p, self.hi))


@dataclass
class SceneSpec:
    """Primitives plus two camera placements sharing one intrinsics."""

    primitives: list[Box]
    intrinsics: CameraIntrinsics
    poses: tuple[RigidPose, RigidPose]
    seed: int | None = None

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        for pose in self.poses:
            c = pose.translation
            for box in self.primitives:
                if box.contains(c):
                    raise ValueError(f"camera center {c} inside primitive {box}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "intrinsics": {
                "fx": self.intrinsics.fx,
                "fy": self.intrinsics.fy,
                "cx": self.intrinsics.cx,
                "cy": self.intrinsics.cy,
                "width": self.intrinsics.width,
                "height": self.intrinsics.height,
            },
            "poses": [
                {"q": [float(x) for x in p.rotation], "t": [float(x) for x in p.translation]}
                for p in self.poses
            ],
            "primitives": [{"lo": list(b.lo), "hi": list(b.hi)} for b in self.primitives],
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        return SceneSpec(
            primitives=[Box(tuple(b["lo"]), tuple(b["hi"])) for b in d["primitives"]],
            intrinsics=CameraIntrinsics(**d["intrinsics"]),
            poses=tuple(
                RigidPose(np.array(p["q"]), np.array(p["t"])) for p in d["poses"]
            ),
            seed=d.get("seed"),
        )


def _ray_box_interval(origin: np.ndarray, dirs: np.ndarray, box: Box):
    """Slab test: parameter interval [tmin, tmax] where rays are inside box.

    Exact for zero-thickness boxes (the interval collapses to a point).
    Returns (tmin, tmax, hit) with hit False for rays that miss entirely.
    """
    n = dirs.shape[0]
    tmin = np.full(n, -np.inf)
    tmax = np.full(n, np.inf)
    ok = np.ones(n, dtype=bool)
    for k in range(3):
        d = dirs[:, k]
        o = origin[k]
        par = d == 0.0
        ok &= ~par | ((o >= box.lo[k]) & (o <= box.hi[k]))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (box.lo[k] - o) / d
            t2 = (box.hi[k] - o) / d
        tlo = np.where(par, -np.inf, np.minimum(t1, t2))
        thi = np.where(par, np.inf, np.maximum(t1, t2))
        tmin = np.maximum(tmin, tlo)
        tmax = np.minimum(tmax, thi)
    ok &= tmax >= tmin
    return tmin, tmax, ok


def _first_hits(origin: np.ndarray, dirs: np.ndarray, primitives: list[Box]):
    """Nearest forward intersection per ray.

    Returns (t, hit_id): t is +inf and hit_id is -1 where nothing is hit.
    """
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1, dtype=np.int32)
    for i, box in enumerate(primitives):
        tmin, tmax, ok = _ray_box_interval(origin, dirs, box)
        t = np.where(tmin > _RAY_EPS, tmin, np.where(tmax > _RAY_EPS, tmax, np.inf))
        t = np.where(ok, t, np.inf)
        better = t < best_t
        best_t = np.where(better, t, best_t)
        best_id = np.where(better, i, best_id)
    return best_t, best_id


def _pixel_rays(intr: CameraIntrinsics, pose: RigidPose):
    """World-space origin and per-pixel ray directions.

    Directions are scaled so the parameter t equals depth along the
    optical axis (camera-frame z component is 1).
    """
    vv, uu = np.meshgrid(
        np.arange(intr.height, dtype=np.float64),
        np.arange(intr.width, dtype=np.float64),
        indexing="ij",
    )
    dirs_cam = np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1
    ).reshape(-1, 3)
    r = quat_to_matrix(pose.rotation)
    return pose.translation, dirs_cam @ r.T


def render_depth_with_ids(scene: SceneSpec, cam_index: int):
    """Depth map plus the index of the primitive hit per pixel (-1 = none)."""
    intr = scene.intrinsics
    origin, dirs = _pixel_rays(intr, scene.poses[cam_index])
    t, hit_id = _first_hits(origin, dirs, scene.primitives)
    depth = np.where(np.isfinite(t), t, np.nan)
    return (
        DepthMap(depth.reshape(intr.height, intr.width)),
        hit_id.reshape(intr.height, intr.width),
    )


def render_depth(scene: SceneSpec, cam_index: int) -> DepthMap:
    """Per-pixel nearest ray-primitive intersection depth; NaN where no hit."""
    return render_depth_with_ids(scene, cam_index)[0]


def scene_frames(scene: SceneSpec) -> tuple[CameraFrame, CameraFrame]:
    """Both cameras with their rendered depth maps."""
    return tuple(
        CameraFrame(scene.intrinsics, scene.poses[i], render_depth(scene, i)) for i in (0, 1)
    )


def oracle_classify(scene: SceneSpec, direction: tuple[int, int] = (0, 1)) -> CovisMap:
    """Exact three-class ground truth for one direction of the pair.

    For each source pixel: intersect its exact ray, project the hit point
    into the other camera, test frustum bounds on continuous coordinates,
    then ray-cast from the other camera toward the point. The pixel is
    covisible iff that cast's first hit is the point itself (within
    ORACLE_HIT_TOL meters along the ray).
    """
    src_idx, tgt_idx = direction
    intr = scene.intrinsics
    src_pose = scene.poses[src_idx]
    tgt_pose = scene.poses[tgt_idx]

    origin, dirs = _pixel_rays(intr, src_pose)
    t, _ = _first_hits(origin, dirs, scene.primitives)
    labels = np.full(t.shape, int(CovisLabel.IGNORE), dtype=np.uint8)
    hit = np.isfinite(t)
    if hit.any():
        pts = origin + t[hit, None] * dirs[hit]

        r_t = quat_to_matrix(tgt_pose.rotation)
        c_t = tgt_pose.translation
        pts_cam = (pts - c_t) @ r_t
        z = pts_cam[:, 2]
        in_front = z > BEHIND_CAMERA_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            u = intr.fx * pts_cam[:, 0] / z + intr.cx
            v = intr.fy * pts_cam[:, 1] / z + intr.cy
        inside = in_front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)

        sub = np.full(z.shape, int(CovisLabel.OUTSIDE_FOV), dtype=np.uint8)
        if inside.any():
            seg = pts[inside] - c_t
            seg_len = np.linalg.norm(seg, axis=1)
            t_first, _ = _first_hits(c_t, seg, scene.primitives)
            # the cast is toward a surface point at t = 1; blocked iff some
            # surface is met strictly before it (beyond fp slack)
            dist_first = t_first * seg_len
            covis = ~np.isfinite(dist_first) | (dist_first >= seg_len - ORACLE_HIT_TOL)
            sub[inside] = np.where(
                covis, int(CovisLabel.COVISIBLE), int(CovisLabel.OCCLUDED)
            ).astype(np.uint8)
        labels[hit] = sub

    names = (f"cam{src_idx}", f"cam{tgt_idx}")
    return CovisMap(labels.reshape(intr.height, intr.width), direction=names)


def _edge_mask(id_map: np.ndarray) -> np.ndarray:
    """Pixels whose 8-neighborhood contains a differing hit id."""
    h, w = id_map.shape
    padded = np.pad(id_map, 1, mode="edge")
    out = np.zeros((h, w), dtype=bool)
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            if dv == 0 and du == 0:
                continue
            out |= padded[1 + dv : 1 + dv + h, 1 + du : 1 + du + w] != id_map
    return out


def boundary_mask(scene: SceneSpec, direction: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Pixels whose ray hits within ~1 px of a primitive edge in either view.

    Discretization makes these legitimately ambiguous, so agreement
    scoring between the dense annotator and the oracle excludes them.
    """
    src_idx, tgt_idx = direction
    intr = scene.intrinsics
    _, src_ids = render_depth_with_ids(scene, src_idx)
    _, tgt_ids = render_depth_with_ids(scene, tgt_idx)

    mask = _edge_mask(src_ids)
    tgt_edges = _edge_mask(tgt_ids)

    origin, dirs = _pixel_rays(intr, scene.poses[src_idx])
    t, _ = _first_hits(origin, dirs, scene.primitives)
    hit = np.isfinite(t)
    if hit.any():
        pts = origin + t[hit, None] * dirs[hit]
        r_t = quat_to_matrix(scene.poses[tgt_idx].rotation)
        c_t = scene.poses[tgt_idx].translation
        pts_cam = (pts - c_t) @ r_t
        z = pts_cam[:, 2]
        in_front = z > BEHIND_CAMERA_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            u = intr.fx * pts_cam[:, 0] / z + intr.cx
            v = intr.fy * pts_cam[:, 1] / z + intr.cy

        near = np.zeros(z.shape, dtype=bool)
        # within 1 px of the continuous FOV bounds of the target image
        near |= in_front & (u > -1) & (u < 1)
        near |= in_front & (u > intr.width - 1) & (u < intr.width + 1)
        near |= in_front & (v > -1) & (v < 1)
        near |= in_front & (v > intr.height - 1) & (v < intr.height + 1)
        # lands within 1 px of a primitive edge seen by the target camera
        proj_inside = in_front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        if proj_inside.any():
            ui = np.clip(np.rint(u[proj_inside]).astype(np.int64), 0, intr.width - 1)
            vi = np.clip(np.rint(v[proj_inside]).astype(np.int64), 0, intr.height - 1)
            near_tgt = np.zeros(int(proj_inside.sum()), dtype=bool)
            near_tgt |= tgt_edges[vi, ui]
            near[proj_inside] |= near_tgt

        sub = np.zeros(t.shape, dtype=bool)
        sub[hit] = near
        mask |= sub.reshape(intr.height, intr.width)
    return mask


DEFAULT_IMAGE_SIZE = 64
DEFAULT_FOCAL = 48.0


def _default_intrinsics(size: int = DEFAULT_IMAGE_SIZE) -> CameraIntrinsics:
    f = DEFAULT_FOCAL * size / DEFAULT_IMAGE_SIZE
    c = (size - 1) / 2.0
    return CameraIntrinsics(fx=f, fy=f, cx=c, cy=c, width=size, height=size)


def _sample_candidate(rng: np.random.Generator, size: int) -> SceneSpec:
    intr = _default_intrinsics(size)
    z_back = rng.uniform(5.0, 8.0)
    half = 2.5 * z_back * (size / 2.0) / intr.fx
    primitives = [Box((-half, -half, z_back), (half, half, z_back))]

    # 0..3 slabs on top of the background plane keeps the total in 1..4
    n_slabs = int(rng.integers(0, 3))
    if rng.uniform() < 0.6:
        n_slabs += 1
    for _ in range(n_slabs):
        zc = rng.uniform(2.5, 0.8 * z_back)
        lateral = 0.5 * zc * (size / 2.0) / intr.fx
        cx = rng.uniform(-lateral, lateral)
        cy = rng.uniform(-lateral, lateral)
        ex = rng.uniform(0.15, 0.9)
        ey = rng.uniform(0.15, 0.9)
        ez = 0.0 if rng.uniform() < 0.5 else rng.uniform(0.05, 0.3)
        primitives.append(Box((cx - ex, cy - ey, zc - ez), (cx + ex, cy + ey, zc + ez)))

    pose_a = RigidPose(
        quat_from_axis_angle([1.0, 0.0, 0.0], rng.uniform(-3.0, 3.0)),
        np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0]),
    )

    baseline = rng.uniform(0.1, 2.0)
    d = rng.normal(size=3) * np.array([1.0, 0.5, 0.3])
    n = np.linalg.norm(d)
    if n < 1e-9:
        d = np.array([1.0, 0.0, 0.0])
        n = 1.0
    t_b = pose_a.translation + baseline * d / n

    yaw = rng.uniform(0.0, 150.0) * (1.0 if rng.uniform() < 0.5 else -1.0)
    pitch = rng.uniform(-10.0, 10.0)
    rot_b = quat_multiply(
        quat_from_axis_angle([0.0, 1.0, 0.0], yaw), quat_from_axis_angle([1.0, 0.0, 0.0], pitch)
    )
    pose_b = RigidPose(rot_b, t_b)
    return SceneSpec(primitives=primitives, intrinsics=intr, poses=(pose_a, pose_b))


def sample_scene(seed: int, size: int = DEFAULT_IMAGE_SIZE, max_attempts: int = 100) -> SceneSpec:
    """Deterministic random scene whose pair has definable overlap.

    Candidates are redrawn until the oracle finds at least one covisible
    pixel in each direction, up to max_attempts (then RuntimeError).
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        try:
            scene = _sample_candidate(rng, size)
        except ValueError:
            continue  # a camera landed inside a primitive
        ok = True
        for direction in ((0, 1), (1, 0)):
            labels = oracle_classify(scene, direction).labels
            if not (labels == CovisLabel.COVISIBLE).any():
                ok = False
                break
        if ok:
            scene.seed = seed
            return scene
    raise RuntimeError(f"no scene with covisible overlap after {max_attempts} attempts")
