"""Per-pair geometric criteria: overlap, scale ratio, viewpoint angle.

All three are undefined (None) when a pair has no covisible pixels;
downstream histograms and reports must treat that as an explicit flag,
not a zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .covisibility import CovisLabel, CovisMap, overlap_fraction, transport_points
from .geom3d import CameraFrame, unproject


@dataclass(frozen=True)
class PairCriteria:
    """overlap in [0, 1]; scale_ratio folded to >= 1; viewpoint_angle in
    [0, 180] degrees. None marks an undefined criterion."""

    overlap: float | None
    scale_ratio: float | None
    viewpoint_angle: float | None

    @property
    def defined(self) -> bool:
        return (
            self.overlap is not None
            and self.scale_ratio is not None
            and self.viewpoint_angle is not None
        )

    def to_dict(self) -> dict:
        return {
            "overlap": self.overlap,
            "scale_ratio": self.scale_ratio,
            "viewpoint_angle": self.viewpoint_angle,
        }

    @staticmethod
    def from_dict(d: dict) -> "PairCriteria":
        return PairCriteria(d["overlap"], d["scale_ratio"], d["viewpoint_angle"])


def overlap(map_ab: CovisMap, map_ba: CovisMap) -> float | None:
    """Pair overlap: min of the two directional covisible fractions.

    The directional fraction is covisible / non-ignore pixels. None if
    either direction has no non-ignore pixels.
    """
    if map_ab.direction != (map_ba.direction[1], map_ba.direction[0]):
        raise ValueError(
            f"maps are not the two directions of one pair: "
            f"{map_ab.direction} vs {map_ba.direction}"
        )
    o_ab = overlap_fraction(map_ab)
    o_ba = overlap_fraction(map_ba)
    if o_ab is None or o_ba is None:
        return None
    return min(o_ab, o_ba)


def _covisible_coords(src: CameraFrame, covis_map: CovisMap):
    if (covis_map.height, covis_map.width) != (src.intrinsics.height, src.intrinsics.width):
        raise ValueError("covisibility map does not match the source frame")
    vs, us = np.nonzero(covis_map.labels == CovisLabel.COVISIBLE)
    return us, vs


def scale_ratio(src: CameraFrame, tgt: CameraFrame, covis_map: CovisMap) -> float | None:
    """Folded median depth ratio over covisible pixels.

    Under a pinhole model the ratio of source depth to transported depth
    equals the apparent-scale change, so the folded median max(m, 1/m)
    is >= 1 and swap-symmetric. None if no covisible pixels.
    """
    us, vs = _covisible_coords(src, covis_map)
    if us.size == 0:
        return None
    d = src.depth.values[vs, us]
    _, z_t, _ = transport_points(src, tgt, us.astype(np.float64), vs.astype(np.float64), d)
    m = float(np.median(d / z_t))
    return max(m, 1.0 / m)


def viewpoint_angle(
    src: CameraFrame,
    tgt: CameraFrame,
    covis_map: CovisMap,
    method: str = "point",
) -> float | None:
    """Median viewpoint separation over covisible pixels, in degrees.

    method="point" (default): per-pixel angle at the 3-D point between
    the rays to the two camera centers, then the median. Well-defined
    for any geometry. method="optical_axis": angle between the two
    cameras' viewing directions, for comparison.
    """
    if method == "optical_axis":
        z = np.array([0.0, 0.0, 1.0])
        a1 = src.pose.apply(z) - src.center
        a2 = tgt.pose.apply(z) - tgt.center
        cosang = float(np.dot(a1, a2) / (np.linalg.norm(a1) * np.linalg.norm(a2)))
        return math.degrees(math.acos(max(-1.0, min(1.0, cosang))))
    if method != "point":
        raise ValueError(f"unknown viewpoint-angle method {method!r}")

    us, vs = _covisible_coords(src, covis_map)
    if us.size == 0:
        return None
    d = src.depth.values[vs, us]
    pts_cam = unproject(src.intrinsics, us.astype(np.float64), vs.astype(np.float64), d)
    pts = src.pose.apply(pts_cam)
    r1 = src.center - pts
    r2 = tgt.center - pts
    n1 = np.linalg.norm(r1, axis=1)
    n2 = np.linalg.norm(r2, axis=1)
    ok = (n1 > 1e-12) & (n2 > 1e-12)
    if not ok.any():
        return 0.0  # both centers coincide with the points; rays identical
    cosang = np.clip(np.sum(r1[ok] * r2[ok], axis=1) / (n1[ok] * n2[ok]), -1.0, 1.0)
    return float(np.degrees(np.median(np.arccos(cosang))))


def compute_criteria(
    src: CameraFrame, tgt: CameraFrame, map_ab: CovisMap, map_ba: CovisMap
) -> PairCriteria:
    """All three criteria for a pair, using the src -> tgt direction for
    the per-pixel quantities."""
    return PairCriteria(
        overlap=overlap(map_ab, map_ba),
        scale_ratio=scale_ratio(src, tgt, map_ab),
        viewpoint_angle=viewpoint_angle(src, tgt, map_ab),
    )


@dataclass(frozen=True)
class CriteriaBins:
    """Reporting bins; intervals are [lo, hi) with the final one closed.

    Values outside the declared edges clamp into the boundary bins so
    that every defined criterion lands in exactly one bin.
    """

    overlap_edges: tuple[float, ...] = (0.05, 0.20, 0.40, 0.60, 0.80, 1.00)
    scale_edges: tuple[float, ...] = (1.0, 1.5, 2.5, 4.0, 6.0)
    angle_edges: tuple[float, ...] = (0.0, 30.0, 60.0, 120.0, 180.0)

    def __post_init__(self):
        for edges in (self.overlap_edges, self.scale_edges, self.angle_edges):
            if any(a >= b for a, b in zip(edges, edges[1:])):
                raise ValueError(f"bin edges must be strictly increasing: {edges}")

    @staticmethod
    def _labels(edges, fmt) -> list[str]:
        return [f"{fmt(a)}-{fmt(b)}" for a, b in zip(edges, edges[1:])]

    @property
    def overlap_labels(self) -> list[str]:
        return self._labels(self.overlap_edges, lambda x: f"{x * 100:g}")

    @property
    def scale_labels(self) -> list[str]:
        return self._labels(self.scale_edges, lambda x: f"{x:.1f}")

    @property
    def angle_labels(self) -> list[str]:
        return self._labels(self.angle_edges, lambda x: f"{x:g}")


def bin_index(value: float, edges) -> int:
    """Half-open bin lookup with clamping; interior edges belong to the
    upper bin, the final edge to the last bin."""
    i = int(np.searchsorted(np.asarray(edges), value, side="right")) - 1
    return min(max(i, 0), len(edges) - 2)


def assign_bins(
    criteria: PairCriteria, bins: CriteriaBins = CriteriaBins()
) -> tuple[int | None, int | None, int | None]:
    """Bin indices (overlap, scale, angle); None where a criterion is
    undefined."""
    return (
        None if criteria.overlap is None else bin_index(criteria.overlap, bins.overlap_edges),
        None
        if criteria.scale_ratio is None
        else bin_index(criteria.scale_ratio, bins.scale_edges),
        None
        if criteria.viewpoint_angle is None
        else bin_index(criteria.viewpoint_angle, bins.angle_edges),
    )


def assign_bin_labels(
    criteria: PairCriteria, bins: CriteriaBins = CriteriaBins()
) -> tuple[str | None, str | None, str | None]:
    """Human-readable bin labels matching the reporting tables."""
    io, isc, ia = assign_bins(criteria, bins)
    return (
        None if io is None else bins.overlap_labels[io],
        None if isc is None else bins.scale_labels[isc],
        None if ia is None else bins.angle_labels[ia],
    )
