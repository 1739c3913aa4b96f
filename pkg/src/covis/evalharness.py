"""Pose and correspondence evaluation: errors, success rates, AUC,
criteria-binned breakdowns, ground-truth flow, and endpoint error."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .covisibility import CovisLabel, CovisMap, OcclusionTolerance, annotate_pair, transport_points
from .geom3d import CameraFrame, RigidPose, quat_geodesic_deg
from .pairmetrics import CriteriaBins, PairCriteria, bin_index

DEGENERATE_NORM = 1e-9

# Success-rate threshold sets: (rotation degrees, translation meters)
OUTDOOR_THRESHOLDS = ((5.0, 0.5), (5.0, 2.0), (10.0, 5.0))
INDOOR_THRESHOLDS = ((10.0, 0.25), (10.0, 0.5), (10.0, 1.0))
AUC_THRESHOLDS = (5.0, 10.0, 20.0)


@dataclass(frozen=True)
class PoseError:
    """Rotation error (deg), metric translation error (m), angular
    translation error (deg, None when a translation is degenerate)."""

    rotation_deg: float
    translation_m: float
    translation_deg: float | None

    def to_dict(self) -> dict:
        return {
            "rotation_deg": self.rotation_deg,
            "translation_m": self.translation_m,
            "translation_deg": self.translation_deg,
        }


def angular_error_deg(a, b) -> float | None:
    """Angle between two vectors; None if either is near zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < DEGENERATE_NORM or nb < DEGENERATE_NORM:
        return None
    cosang = float(np.dot(a, b) / (na * nb))
    return math.degrees(math.acos(max(-1.0, min(1.0, cosang))))


def pose_error(gt: RigidPose, pred: RigidPose) -> PoseError:
    return PoseError(
        rotation_deg=quat_geodesic_deg(gt.rotation, pred.rotation),
        translation_m=float(np.linalg.norm(gt.translation - pred.translation)),
        translation_deg=angular_error_deg(gt.translation, pred.translation),
    )


def success_rate(errors: list[PoseError], rot_thresh: float, trans_thresh: float) -> float:
    """Percent of pairs within both thresholds (rotation AND metric
    translation)."""
    if rot_thresh <= 0 or trans_thresh <= 0:
        raise ValueError("thresholds must be positive")
    if not errors:
        return 0.0
    ok = sum(
        1 for e in errors if e.rotation_deg <= rot_thresh and e.translation_m <= trans_thresh
    )
    return 100.0 * ok / len(errors)


def auc_at(errors: list[PoseError], thresholds=AUC_THRESHOLDS) -> list[float]:
    """Area under the cumulative recall curve of
    max(rotation, angular-translation) error, exactly step-integrated
    over [0, threshold] and normalized to percent.

    Pairs with a degenerate (undefined-direction) translation are
    excluded from this angular metric.
    """
    if any(t <= 0 for t in thresholds):
        raise ValueError("thresholds must be positive")
    vals = [
        max(e.rotation_deg, e.translation_deg)
        for e in errors
        if e.translation_deg is not None
    ]
    out = []
    for th in thresholds:
        if not vals:
            out.append(0.0)
            continue
        # integral of the step recall curve: sum of (th - e) over e <= th
        area = sum(th - v for v in vals if v <= th)
        out.append(100.0 * area / (th * len(vals)))
    return out


@dataclass
class BinRow:
    label: str
    count: int
    rate: float | None  # None flags an empty bin


@dataclass
class EvalReport:
    errors: list[PoseError]
    success: dict[str, float]
    auc: dict[str, float]
    bins: dict[str, list[BinRow]] | None = None
    undefined_criteria: int = 0

    @property
    def pair_count(self) -> int:
        return len(self.errors)

    def to_dict(self) -> dict:
        d = {
            "pair_count": self.pair_count,
            "success": self.success,
            "auc": self.auc,
            "errors": [e.to_dict() for e in self.errors],
        }
        if self.bins is not None:
            d["bins"] = {
                key: [{"label": r.label, "count": r.count, "rate": r.rate} for r in rows]
                for key, rows in self.bins.items()
            }
            d["undefined_criteria"] = self.undefined_criteria
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def binned_report(
    errors: list[PoseError],
    criteria: list[PairCriteria],
    rot_thresh: float,
    trans_thresh: float,
    bins: CriteriaBins = CriteriaBins(),
) -> tuple[dict[str, list[BinRow]], int]:
    """Success rate inside each overlap/scale/angle bin independently.

    Pairs with an undefined criterion are excluded from that criterion's
    table and tallied in the returned undefined count (a pair with all
    three undefined counts once).
    """
    if len(errors) != len(criteria):
        raise ValueError("need one PairCriteria per PoseError")
    tables: dict[str, list[BinRow]] = {}
    for key, edges, labels in (
        ("overlap", bins.overlap_edges, bins.overlap_labels),
        ("scale_ratio", bins.scale_edges, bins.scale_labels),
        ("viewpoint_angle", bins.angle_edges, bins.angle_labels),
    ):
        rows = [[] for _ in range(len(edges) - 1)]
        for err, crit in zip(errors, criteria):
            value = getattr(crit, key)
            if value is None:
                continue
            rows[bin_index(value, edges)].append(err)
        tables[key] = [
            BinRow(
                label=lab,
                count=len(es),
                rate=success_rate(es, rot_thresh, trans_thresh) if es else None,
            )
            for lab, es in zip(labels, rows)
        ]
    undefined = sum(1 for c in criteria if not c.defined)
    return tables, undefined


def evaluate_pairs(
    gt_poses: list[RigidPose],
    pred_poses: list[RigidPose],
    criteria: list[PairCriteria] | None = None,
    success_thresholds=OUTDOOR_THRESHOLDS + INDOOR_THRESHOLDS,
    auc_thresholds=AUC_THRESHOLDS,
    bin_rate_thresholds: tuple[float, float] = (5.0, 2.0),
    bins: CriteriaBins = CriteriaBins(),
) -> EvalReport:
    """Full report over aligned ground-truth / predicted pose lists."""
    if len(gt_poses) != len(pred_poses):
        raise ValueError("ground-truth and prediction counts differ")
    errors = [pose_error(g, p) for g, p in zip(gt_poses, pred_poses)]
    success = {
        f"{r:g}deg/{t:g}m": success_rate(errors, r, t) for r, t in success_thresholds
    }
    auc = {f"auc@{t:g}": v for t, v in zip(auc_thresholds, auc_at(errors, auc_thresholds))}
    report = EvalReport(errors=errors, success=success, auc=auc)
    if criteria is not None:
        report.bins, report.undefined_criteria = binned_report(
            errors, criteria, bin_rate_thresholds[0], bin_rate_thresholds[1], bins
        )
    return report


def report_to_csv(report: EvalReport) -> str:
    """Bin tables as CSV, one column per bin plus the whole-set rate,
    mirroring the criteria-binned success-rate table layout."""
    lines = []
    whole = next(iter(report.success.values())) if report.success else ""
    if report.bins:
        header: list[str] = []
        values: list[str] = []
        for key, rows in report.bins.items():
            for row in rows:
                header.append(f"{key}:{row.label}")
                values.append("" if row.rate is None else f"{row.rate:.1f}")
        header.append("whole")
        values.append(f"{whole:.1f}" if whole != "" else "")
        lines.append(",".join(header))
        lines.append(",".join(values))
    else:
        lines.append("metric,value")
        for k, v in {**report.success, **report.auc}.items():
            lines.append(f"{k},{v:.3f}")
    return "\n".join(lines) + "\n"


def gt_flow(
    src: CameraFrame,
    tgt: CameraFrame,
    covis_map: CovisMap | None = None,
    tol: OcclusionTolerance = OcclusionTolerance(),
):
    """Ground-truth displacement field on covisible source pixels.

    Returns (flow, valid): flow[v, u] holds the displacement to the
    reprojection of pixel (u, v) in the target image (target minus
    source coordinates); valid marks covisible pixels.
    """
    if covis_map is None:
        covis_map = annotate_pair(src, tgt, tol)
    valid = covis_map.labels == CovisLabel.COVISIBLE
    h, w = valid.shape
    flow = np.full((h, w, 2), np.nan)
    vs, us = np.nonzero(valid)
    if us.size:
        d = src.depth.values[vs, us]
        uv_t, _, _ = transport_points(
            src, tgt, us.astype(np.float64), vs.astype(np.float64), d
        )
        flow[vs, us, 0] = uv_t[:, 0] - us
        flow[vs, us, 1] = uv_t[:, 1] - vs
    return flow, valid


def correspondences_from_features(out1, out2, patch_size: int, grid: int):
    """Token-level matches by argmax cosine similarity.

    out1/out2 are (N, d) arrays (decoder features). Returns
    (points1, points2, similarity): match endpoints at patch centers in
    pixel coordinates.
    """
    f1 = np.asarray(out1, dtype=np.float64)
    f2 = np.asarray(out2, dtype=np.float64)
    n1 = f1 / (np.linalg.norm(f1, axis=1, keepdims=True) + 1e-12)
    n2 = f2 / (np.linalg.norm(f2, axis=1, keepdims=True) + 1e-12)
    sim = n1 @ n2.T
    best = sim.argmax(axis=1)
    score = sim[np.arange(sim.shape[0]), best]

    def centers(indices):
        gy, gx = np.divmod(indices, grid)
        half = (patch_size - 1) / 2.0
        return np.stack([gx * patch_size + half, gy * patch_size + half], axis=1)

    return centers(np.arange(f1.shape[0])), centers(best), score


def aepe(points1: np.ndarray, points2: np.ndarray, flow: np.ndarray) -> float | None:
    """Mean endpoint error of predicted correspondences against the flow.

    The ground-truth target point for a source point is source + flow,
    bilinearly interpolated over valid flow pixels; matches without any
    valid flow support are excluded. None when nothing can be scored.
    """
    h, w = flow.shape[:2]
    errs = []
    for (u, v), (pu, pv) in zip(points1, points2):
        u0, v0 = int(math.floor(u)), int(math.floor(v))
        fu, fv = u - u0, v - v0
        acc = np.zeros(2)
        wsum = 0.0
        for dv, du, wgt in (
            (0, 0, (1 - fu) * (1 - fv)),
            (0, 1, fu * (1 - fv)),
            (1, 0, (1 - fu) * fv),
            (1, 1, fu * fv),
        ):
            uu, vv = u0 + du, v0 + dv
            if 0 <= uu < w and 0 <= vv < h and np.isfinite(flow[vv, uu]).all() and wgt > 0:
                acc += wgt * flow[vv, uu]
                wsum += wgt
        if wsum <= 0:
            continue
        gt_target = np.array([u, v]) + acc / wsum
        errs.append(float(np.hypot(pu - gt_target[0], pv - gt_target[1])))
    if not errs:
        return None
    return float(np.mean(errs))


def random_assignment_aepe(points1, flow, seed: int = 0, grid: int = None, patch_size: int = None):
    """Baseline: match every source token to a uniformly random target
    token center."""
    rng = np.random.default_rng(seed)
    n = points1.shape[0]
    idx = rng.integers(0, n, size=n)
    gy, gx = np.divmod(idx, grid)
    half = (patch_size - 1) / 2.0
    points2 = np.stack([gx * patch_size + half, gy * patch_size + half], axis=1)
    return aepe(points1, points2, flow)
