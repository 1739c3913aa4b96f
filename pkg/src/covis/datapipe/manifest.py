"""Scene manifests: JSON schema, frame loading, pair enumeration, splits.

Schema of ``scene.json`` (UTF-8 JSON, one scene per file):

    {
      "scene": "<unique scene id>",
      "split": "train" | "test",
      "frames": [
        {
          "id": "<unique frame id>",
          "intrinsics": {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..},
          "pose": {"q": [w, x, y, z], "t": [x, y, z]},   // world-from-camera
          "depth": "<path to PFM, relative to the manifest>"
        }, ...
      ],
      "synth": { ... }   // optional: the generating SceneSpec, for replay
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geom3d import CameraFrame, CameraIntrinsics, DepthMap, RigidPose
from .formats import read_pfm, write_pfm

SPLITS = ("train", "test")


@dataclass
class FrameRecord:
    frame_id: str
    intrinsics: CameraIntrinsics
    pose: RigidPose
    depth_path: str

    def to_dict(self) -> dict:
        k = self.intrinsics
        return {
            "id": self.frame_id,
            "intrinsics": {
                "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                "width": k.width, "height": k.height,
            },
            "pose": {
                "q": [float(x) for x in self.pose.rotation],
                "t": [float(x) for x in self.pose.translation],
            },
            "depth": self.depth_path,
        }

    @staticmethod
    def from_dict(d: dict) -> "FrameRecord":
        return FrameRecord(
            frame_id=str(d["id"]),
            intrinsics=CameraIntrinsics(**d["intrinsics"]),
            pose=RigidPose(np.array(d["pose"]["q"]), np.array(d["pose"]["t"])),
            depth_path=str(d["depth"]),
        )


@dataclass
class SceneManifest:
    scene_id: str
    split: str
    frames: list[FrameRecord]
    base_dir: Path = field(default_factory=Path)
    synth: dict | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        ids = [f.frame_id for f in self.frames]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate frame ids in scene {self.scene_id}")

    def to_dict(self) -> dict:
        d = {
            "scene": self.scene_id,
            "split": self.split,
            "frames": [f.to_dict() for f in self.frames],
        }
        if self.synth is not None:
            d["synth"] = self.synth
        return d


def save_manifest(manifest: SceneManifest, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    d = json.loads(path.read_text())
    known = {"scene", "split", "frames", "synth"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
    return SceneManifest(
        scene_id=str(d["scene"]),
        split=str(d["split"]),
        frames=[FrameRecord.from_dict(f) for f in d["frames"]],
        base_dir=path.parent,
        synth=d.get("synth"),
    )


def load_frame(manifest: SceneManifest, index: int) -> CameraFrame:
    """Materialize one frame, reading its depth PFM relative to the manifest."""
    rec = manifest.frames[index]
    depth = read_pfm(manifest.base_dir / rec.depth_path)
    return CameraFrame(rec.intrinsics, rec.pose, DepthMap(depth))


def enumerate_pairs(manifest: SceneManifest) -> list[tuple[int, int]]:
    """All unordered frame-index pairs within the scene, i < j."""
    n = len(manifest.frames)
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def split_check(manifests: list[SceneManifest]) -> list[str]:
    """Scene ids that appear in both train and test. Empty list = clean."""
    by_split: dict[str, set[str]] = {s: set() for s in SPLITS}
    for m in manifests:
        by_split[m.split].add(m.scene_id)
    return sorted(by_split["train"] & by_split["test"])


def scene_to_manifest(scene, scene_id: str, split: str, out_dir) -> SceneManifest:
    """Serialize a synthetic scene: one PFM per camera plus scene.json.

    The generating spec is embedded under "synth" so the scene can be
    replayed exactly.
    """
    from ..synthscene import SceneSpec, render_depth

    assert isinstance(scene, SceneSpec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    for i in range(2):
        depth = render_depth(scene, i)
        name = f"{scene_id}_cam{i}.pfm"
        write_pfm(out_dir / name, depth.values)
        frames.append(
            FrameRecord(
                frame_id=f"cam{i}",
                intrinsics=scene.intrinsics,
                pose=scene.poses[i],
                depth_path=name,
            )
        )
    manifest = SceneManifest(
        scene_id=scene_id, split=split, frames=frames, base_dir=out_dir, synth=scene.to_dict()
    )
    save_manifest(manifest, out_dir / f"{scene_id}.json")
    return manifest
