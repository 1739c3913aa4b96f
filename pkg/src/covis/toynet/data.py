"""Synthetic training data: a separable per-patch classification task, and
scene pairs with geometric annotations for pose fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..covisibility import OcclusionTolerance, annotate_pair
from ..geom3d import CameraFrame, quat_normalize, relative_pose
from .model import ModelConfig


@dataclass
class SegSample:
    image1: np.ndarray  # (3, H, W)
    image2: np.ndarray
    labels1: np.ndarray  # (H, W) uint8, 255 = ignore
    labels2: np.ndarray


@dataclass
class PoseSample(SegSample):
    t_gt: np.ndarray = None  # (3,)
    q_gt: np.ndarray = None  # (4,), canonical w >= 0


def _separable_image(rng, config: ModelConfig, ignore_frac: float):
    """Per-patch class painted into the matching channel, plus noise.

    A linear readout of patch content suffices to recover the class, so
    a tiny model can exceed 90% pixel accuracy quickly.
    """
    g, p, k = config.grid, config.patch_size, config.classes
    cls = rng.integers(0, k, size=(g, g)).astype(np.uint8)
    image = rng.normal(0.0, 0.05, size=(3, config.image_size, config.image_size))
    pix = np.kron(cls, np.ones((p, p), dtype=np.uint8))
    for c in range(k):
        image[c][pix == c] += 1.0
    labels = pix.copy()
    if ignore_frac > 0:
        labels[rng.random(labels.shape) < ignore_frac] = 255
    return image, labels


def separable_seg_dataset(
    config: ModelConfig, n_pairs: int, seed: int = 0, ignore_frac: float = 0.02
) -> list[SegSample]:
    """Pairs for the separable covisibility-style segmentation task."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_pairs):
        i1, l1 = _separable_image(rng, config, ignore_frac)
        i2, l2 = _separable_image(rng, config, ignore_frac)
        out.append(SegSample(i1, i2, l1, l2))
    return out


def depth_to_image(frame: CameraFrame) -> np.ndarray:
    """3-channel encoding of a depth map: inverse depth plus gradients.

    Gives the network scene structure when no photometric images exist.
    Invalid depth maps to zeros in all channels.
    """
    d = frame.depth.values
    valid = frame.depth.valid_mask
    inv = np.where(valid, 1.0 / np.where(valid, d, 1.0), 0.0)
    gx = np.zeros_like(inv)
    gy = np.zeros_like(inv)
    gx[:, 1:] = np.diff(inv, axis=1)
    gy[1:, :] = np.diff(inv, axis=0)
    return np.stack([inv, 5.0 * gx, 5.0 * gy])


def scene_pose_dataset(
    config: ModelConfig,
    n_pairs: int,
    seed: int = 0,
    tol: OcclusionTolerance = OcclusionTolerance(),
) -> list[PoseSample]:
    """Synthetic scene pairs with images, labels, and ground-truth poses."""
    from ..synthscene import sample_scene, scene_frames

    out = []
    for k in range(n_pairs):
        scene = sample_scene(seed + k, size=config.image_size)
        f1, f2 = scene_frames(scene)
        rel = relative_pose(f1.pose, f2.pose)
        m12 = annotate_pair(f1, f2, tol)
        m21 = annotate_pair(f2, f1, tol)
        out.append(
            PoseSample(
                image1=depth_to_image(f1),
                image2=depth_to_image(f2),
                labels1=m12.labels,
                labels2=m21.labels,
                t_gt=rel.translation.copy(),
                q_gt=quat_normalize(rel.rotation),
            )
        )
    return out


def pixel_accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of non-ignore pixels predicted correctly."""
    mask = labels != 255
    if not mask.any():
        return float("nan")
    return float((pred[mask] == labels[mask]).mean())
