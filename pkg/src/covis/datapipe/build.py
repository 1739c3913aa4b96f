"""Pair annotation at dataset scale: filter, sample, perturb, summarize."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..covisibility import (
    CovisMap,
    InvalidTargetPolicy,
    OcclusionTolerance,
    annotate_pair,
)
from ..pairmetrics import CriteriaBins, PairCriteria, bin_index, compute_criteria
from .formats import write_covis
from .manifest import SceneManifest, enumerate_pairs, load_frame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetVariant:
    """A named minimum-overlap filter. The two standard variants keep
    pairs with at least 50% / at least 5% overlap."""

    name: str
    min_overlap: float

    def __post_init__(self):
        if not 0.0 <= self.min_overlap <= 1.0:
            raise ValueError(f"min_overlap must be in [0, 1], got {self.min_overlap}")


VARIANT_HIGH_OVERLAP = DatasetVariant("overlap50", 0.50)
VARIANT_ALL = DatasetVariant("all", 0.05)


@dataclass
class PairRecord:
    scene_id: str
    i: int
    j: int
    frame_i: str
    frame_j: str
    criteria: PairCriteria
    map_ab: str  # path of the i->j covisibility map
    map_ba: str  # path of the j->i covisibility map

    def __post_init__(self):
        if self.i >= self.j:
            raise ValueError(f"pair indices must satisfy i < j, got ({self.i}, {self.j})")

    def to_dict(self) -> dict:
        return {
            "scene": self.scene_id,
            "i": self.i,
            "j": self.j,
            "frame_i": self.frame_i,
            "frame_j": self.frame_j,
            "criteria": self.criteria.to_dict(),
            "map_ab": self.map_ab,
            "map_ba": self.map_ba,
        }

    @staticmethod
    def from_dict(d: dict) -> "PairRecord":
        return PairRecord(
            scene_id=d["scene"],
            i=d["i"],
            j=d["j"],
            frame_i=d["frame_i"],
            frame_j=d["frame_j"],
            criteria=PairCriteria.from_dict(d["criteria"]),
            map_ab=d["map_ab"],
            map_ba=d["map_ba"],
        )


def write_pair_index(records: list[PairRecord], path) -> Path:
    """One JSON record per line, in (scene, i, j) order."""
    path = Path(path)
    ordered = sorted(records, key=lambda r: (r.scene_id, r.i, r.j))
    with open(path, "w") as f:
        for rec in ordered:
            f.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    return path


def read_pair_index(path) -> list[PairRecord]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(PairRecord.from_dict(json.loads(line)))
    return records


def _annotate_job(manifest: SceneManifest, i: int, j: int, tol, policy):
    """Annotate both directions of one pair; runs inside worker processes."""
    src = load_frame(manifest, i)
    tgt = load_frame(manifest, j)
    ids = (manifest.frames[i].frame_id, manifest.frames[j].frame_id)
    map_ab = annotate_pair(src, tgt, tol, policy, direction=ids)
    map_ba = annotate_pair(tgt, src, tol, policy, direction=(ids[1], ids[0]))
    criteria = compute_criteria(src, tgt, map_ab, map_ba)
    return i, j, criteria, map_ab, map_ba


def annotate_all_pairs(
    manifest: SceneManifest,
    tol: OcclusionTolerance = OcclusionTolerance(),
    policy: InvalidTargetPolicy = InvalidTargetPolicy.OCCLUDED,
    workers: int = 1,
    pairs: list[tuple[int, int]] | None = None,
):
    """Annotate every (or the selected) pair of a scene.

    Per-pair failures are skipped and logged, never fatal. Returns
    (results, skipped): results sorted by (i, j) regardless of worker
    scheduling; skipped is a list of (i, j, reason).
    """
    pairs = enumerate_pairs(manifest) if pairs is None else pairs
    results = []
    skipped = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_annotate_job, manifest, i, j, tol, policy): (i, j)
                for i, j in pairs
            }
            for fut, (i, j) in futures.items():
                try:
                    results.append(fut.result())
                except Exception as e:
                    logger.warning("pair (%d, %d) skipped: %s", i, j, e)
                    skipped.append((i, j, str(e)))
    else:
        for i, j in pairs:
            try:
                results.append(_annotate_job(manifest, i, j, tol, policy))
            except Exception as e:
                logger.warning("pair (%d, %d) skipped: %s", i, j, e)
                skipped.append((i, j, str(e)))
    results.sort(key=lambda r: (r[0], r[1]))
    return results, skipped


def build_variant(
    manifest: SceneManifest,
    variant: DatasetVariant,
    out_dir,
    tol: OcclusionTolerance = OcclusionTolerance(),
    seed: int = 0,
    max_pairs: int | None = None,
    workers: int = 1,
    policy: InvalidTargetPolicy = InvalidTargetPolicy.OCCLUDED,
):
    """Annotate, filter by minimum overlap, subsample, and serialize.

    Subsampling is uniform without replacement, seeded; the surviving
    records are written in (scene, i, j) order so the output does not
    depend on worker scheduling. Returns (records, skipped).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    annotated, skipped = annotate_all_pairs(manifest, tol=tol, workers=workers, policy=policy)

    kept = [
        (i, j, crit, m_ab, m_ba)
        for i, j, crit, m_ab, m_ba in annotated
        if crit.overlap is not None and crit.overlap >= variant.min_overlap
    ]
    if max_pairs is not None and len(kept) > max_pairs:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(kept), size=max_pairs, replace=False)
        kept = [kept[k] for k in sorted(idx)]

    records = []
    for i, j, crit, m_ab, m_ba in kept:
        stem = f"{manifest.scene_id}_{i:04d}_{j:04d}"
        path_ab = f"{stem}_ab.cub3"
        path_ba = f"{stem}_ba.cub3"
        write_covis(out_dir / path_ab, m_ab)
        write_covis(out_dir / path_ba, m_ba)
        records.append(
            PairRecord(
                scene_id=manifest.scene_id,
                i=i,
                j=j,
                frame_i=manifest.frames[i].frame_id,
                frame_j=manifest.frames[j].frame_id,
                criteria=crit,
                map_ab=path_ab,
                map_ba=path_ba,
            )
        )
    return records, skipped


def inject_label_noise(covis_map: CovisMap, p: float, seed: int) -> CovisMap:
    """Independently replace each non-ignore label with probability p by a
    label drawn uniformly from the other classes. Seeded, deterministic;
    ignore pixels are never touched."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"noise probability must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    labels = covis_map.labels.copy()
    k = covis_map.class_count()
    flip = (rng.random(labels.shape) < p) & (labels != 255)
    # an offset in 1..k-1 is uniform over the other classes and never zero
    offsets = rng.integers(1, k, size=labels.shape, dtype=np.uint8)
    labels[flip] = (labels[flip] + offsets[flip]) % k
    return CovisMap(labels, direction=covis_map.direction, scheme=covis_map.scheme)


def criteria_histograms(records: list[PairRecord], bins: CriteriaBins = CriteriaBins()) -> dict:
    """Bin counts for the three criteria over the records whose value is
    defined; each histogram's counts sum to its defined-record count."""
    hists = {}
    for key, edges, labels in (
        ("overlap", bins.overlap_edges, bins.overlap_labels),
        ("scale_ratio", bins.scale_edges, bins.scale_labels),
        ("viewpoint_angle", bins.angle_edges, bins.angle_labels),
    ):
        counts = [0] * (len(edges) - 1)
        defined = 0
        for rec in records:
            value = getattr(rec.criteria, key)
            if value is None:
                continue
            defined += 1
            counts[bin_index(value, edges)] += 1
        hists[key] = {"labels": labels, "counts": counts, "defined": defined}
    return hists
