"""Dense covisibility annotation for ordered frame pairs.

Every pixel of a source frame is classified with respect to a target
frame by back-projecting its depth, transporting the 3-D point into the
target camera, and testing frustum bounds plus a depth (z-) comparison
against the target's stored depth:

- ``COVISIBLE``: the point projects inside the target image and passes
  the z-test against the bilinearly sampled target depth.
- ``OCCLUDED``: projects inside the target image but the target sees
  nearer geometry at that location.
- ``OUTSIDE_FOV``: behind the target camera or projecting outside the
  target image bounds.
- ``IGNORE``: the source pixel has no valid depth; never contributes to
  losses or statistics.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geom3d import (
    BEHIND_CAMERA_EPS,
    CameraFrame,
    project,
    quat_to_matrix,
    relative_pose,
    unproject,
)


class CovisLabel(enum.IntEnum):
    COVISIBLE = 0
    OCCLUDED = 1
    OUTSIDE_FOV = 2
    IGNORE = 255


class ClassScheme(enum.IntEnum):
    """Label vocabulary of a map; two-class schemes merge a pair of classes."""

    THREE_CLASS = 0
    COVISIBLE_OR_NOT = 1  # occluded and outside-FOV merged into "not covisible" (1)
    INSIDE_FOV_OR_NOT = 2  # covisible and occluded merged into "inside FOV" (0)


class InvalidTargetPolicy(enum.Enum):
    """What to do when all four target-depth neighbors are invalid."""

    OCCLUDED = "occluded"
    COVISIBLE = "covisible"
    IGNORE = "ignore"


@dataclass(frozen=True)
class OcclusionTolerance:
    """Slack for the z-test: a point passes if within
    max(relative * target_depth, absolute) meters behind the target depth."""

    relative: float = 0.01
    absolute: float = 0.05

    def __post_init__(self):
        if self.relative < 0 or self.absolute < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass
class CovisMap:
    """Per-pixel labels for one direction (source -> target) of a pair."""

    labels: np.ndarray  # (H, W) uint8, values in {0, 1, 2, 255}
    direction: tuple[str, str] = ("src", "tgt")
    scheme: ClassScheme = ClassScheme.THREE_CLASS

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {self.labels.shape}")
        self.direction = (str(self.direction[0]), str(self.direction[1]))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def ignore_mask(self) -> np.ndarray:
        return self.labels == CovisLabel.IGNORE

    def class_count(self) -> int:
        return 3 if self.scheme == ClassScheme.THREE_CLASS else 2

    def counts(self) -> dict[int, int]:
        """Pixel count per label value."""
        vals, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


def bilinear_depth(depth_values: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Invalid-aware bilinear sampling of a depth raster.

    Neighbors outside the image or with invalid depth get zero weight;
    remaining weights are renormalized. Returns (sample, supported)
    where supported is False when all four neighbors were unusable.
    """
    h, w = depth_values.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0

    sample = np.zeros(u.shape, dtype=np.float64)
    wsum = np.zeros(u.shape, dtype=np.float64)
    valid = np.isfinite(depth_values) & (depth_values > 0)
    for dv, du, wgt in (
        (0, 0, (1 - fu) * (1 - fv)),
        (0, 1, fu * (1 - fv)),
        (1, 0, (1 - fu) * fv),
        (1, 1, fu * fv),
    ):
        vi = v0 + dv
        ui = u0 + du
        inb = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
        uic = np.clip(ui, 0, w - 1)
        vic = np.clip(vi, 0, h - 1)
        ok = inb & valid[vic, uic]
        wv = np.where(ok, wgt, 0.0)
        sample += wv * np.where(ok, depth_values[vic, uic], 0.0)
        wsum += wv
    supported = wsum > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        sample = np.where(supported, sample / wsum, np.nan)
    return sample, supported


def transport_points(src: CameraFrame, tgt: CameraFrame, u, v, d):
    """Lift source pixels (u, v) with depth d into the target camera frame.

    Returns (uv_tgt, depth_tgt, in_front) from geom3d.project.
    """
    pts_src = unproject(src.intrinsics, u, v, d)
    rel = relative_pose(src.pose, tgt.pose)
    pts_tgt = pts_src @ quat_to_matrix(rel.rotation).T + rel.translation
    return project(tgt.intrinsics, pts_tgt)


def _classify_flat(
    src: CameraFrame,
    tgt: CameraFrame,
    u: np.ndarray,
    v: np.ndarray,
    tol: OcclusionTolerance,
    policy: InvalidTargetPolicy,
) -> np.ndarray:
    """Classify a flat array of source pixel coordinates."""
    labels = np.full(u.shape, int(CovisLabel.IGNORE), dtype=np.uint8)
    d = src.depth.values[v, u]
    has_depth = np.isfinite(d) & (d > 0)
    if not has_depth.any():
        return labels

    uv_t, z_t, in_front = transport_points(
        src, tgt, u[has_depth].astype(np.float64), v[has_depth].astype(np.float64), d[has_depth]
    )
    kt = tgt.intrinsics
    inside = (
        in_front
        & (uv_t[:, 0] >= 0)
        & (uv_t[:, 0] < kt.width)
        & (uv_t[:, 1] >= 0)
        & (uv_t[:, 1] < kt.height)
    )

    sub = np.full(z_t.shape, int(CovisLabel.OUTSIDE_FOV), dtype=np.uint8)
    if inside.any():
        d_s, supported = bilinear_depth(tgt.depth.values, uv_t[inside, 0], uv_t[inside, 1])
        d_t = z_t[inside]
        slack = np.maximum(tol.relative * d_s, tol.absolute)
        with np.errstate(invalid="ignore"):
            covis = d_t <= d_s + slack
        verdict = np.where(covis, int(CovisLabel.COVISIBLE), int(CovisLabel.OCCLUDED)).astype(
            np.uint8
        )
        if policy == InvalidTargetPolicy.OCCLUDED:
            fallback = int(CovisLabel.OCCLUDED)
        elif policy == InvalidTargetPolicy.COVISIBLE:
            fallback = int(CovisLabel.COVISIBLE)
        else:
            fallback = int(CovisLabel.IGNORE)
        verdict[~supported] = fallback
        sub[inside] = verdict
    labels[has_depth] = sub
    return labels


def classify_pixel(
    src: CameraFrame,
    tgt: CameraFrame,
    u: int,
    v: int,
    tol: OcclusionTolerance = OcclusionTolerance(),
    policy: InvalidTargetPolicy = InvalidTargetPolicy.OCCLUDED,
) -> CovisLabel:
    """Classify one source pixel with respect to the target frame."""
    k = src.intrinsics
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise ValueError(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    lab = _classify_flat(
        src, tgt, np.array([u], dtype=np.int64), np.array([v], dtype=np.int64), tol, policy
    )
    return CovisLabel(int(lab[0]))


def annotate_pair(
    src: CameraFrame,
    tgt: CameraFrame,
    tol: OcclusionTolerance = OcclusionTolerance(),
    policy: InvalidTargetPolicy = InvalidTargetPolicy.OCCLUDED,
    direction: tuple[str, str] = ("src", "tgt"),
) -> CovisMap:
    """Densely classify every source pixel. Deterministic; equals
    classify_pixel applied pixel-by-pixel."""
    k = src.intrinsics
    vv, uu = np.meshgrid(
        np.arange(k.height, dtype=np.int64), np.arange(k.width, dtype=np.int64), indexing="ij"
    )
    labels = _classify_flat(src, tgt, uu.ravel(), vv.ravel(), tol, policy)
    return CovisMap(labels.reshape(k.height, k.width), direction=direction)


_REMAP_TABLES = {
    ClassScheme.THREE_CLASS: {0: 0, 1: 1, 2: 2},
    ClassScheme.COVISIBLE_OR_NOT: {0: 0, 1: 1, 2: 1},
    ClassScheme.INSIDE_FOV_OR_NOT: {0: 0, 1: 0, 2: 1},
}


def remap_classes(covis_map: CovisMap, scheme: ClassScheme) -> CovisMap:
    """Collapse the three classes into one of the two-class schemes.

    COVISIBLE_OR_NOT merges occluded with outside-FOV (label 1 = not
    covisible); INSIDE_FOV_OR_NOT merges covisible with occluded
    (label 0 = inside FOV). Ignore pixels are preserved untouched.
    """
    if covis_map.scheme != ClassScheme.THREE_CLASS and scheme != covis_map.scheme:
        raise ValueError(f"cannot remap a {covis_map.scheme.name} map to {scheme.name}")
    table = _REMAP_TABLES[scheme]
    lut = np.arange(256, dtype=np.uint8)
    for old, new in table.items():
        lut[old] = new
    out = lut[covis_map.labels]
    return CovisMap(out, direction=covis_map.direction, scheme=scheme)


def overlap_fraction(covis_map: CovisMap):
    """Directional overlap: covisible / non-ignore pixels, or None if the
    map has no non-ignore pixels."""
    non_ignore = int((~covis_map.ignore_mask).sum())
    if non_ignore == 0:
        return None
    covis = int((covis_map.labels == CovisLabel.COVISIBLE).sum())
    return covis / non_ignore
