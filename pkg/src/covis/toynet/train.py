"""Pretraining on the segmentation objective and two-phase pose fine-tuning.

Phase 1 freezes everything except the pose head and its two
log-variances and trains with the pose loss alone; phase 2 unfreezes the
whole network and optimizes the joint objective. Every step appends one
JSON-able record to the training log.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, add, backward, mul, zero_grads
from .data import PoseSample, SegSample
from .losses import joint_loss, pose_loss, segmentation_loss
from .model import TwoViewModel, parameter_group, pose_head
from .optim import AdamW, WarmupCosineSchedule


@dataclass
class PretrainConfig:
    peak_lr: float = 1.5e-4
    weight_decay: float = 0.05
    batch_size: int = 8
    total_steps: int = 200
    warmup_steps: int = 16
    seed: int = 0
    log_path: str | None = None


@dataclass
class FinetuneConfig:
    phase1_epochs: int = 5
    phase2_epochs: int = 10
    phase1_lr: float = 1e-4
    phase2_lr: float = 5e-5
    weight_decay: float = 0.05
    batch_size: int = 8
    seed: int = 0
    sign_align: bool = False
    log_path: str | None = None


def _append_log(log: list[dict], record: dict, path: str | None):
    log.append(record)
    if path:
        with open(path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def _batch_indices(rng, n: int, batch_size: int) -> np.ndarray:
    if n <= batch_size:
        return np.arange(n)  # full batch: no sampling noise
    return rng.integers(0, n, size=batch_size)


def pretrain_step(
    model: TwoViewModel,
    batch: list[SegSample],
    optimizer: AdamW,
    lr: float,
) -> float:
    """One segmentation update over a batch of annotated pairs; returns
    the batch cross-entropy."""
    zero_grads(model.params)
    total = None
    for sample in batch:
        bundle = model.forward_pair(sample.image1, sample.image2)
        l_ce = segmentation_loss(
            bundle.out1, bundle.out2, sample.labels1, sample.labels2, model.params, model.config
        )
        total = l_ce if total is None else add(total, l_ce)
    loss = mul(total, 1.0 / len(batch))
    backward(loss)
    optimizer.step(model.params, lr)
    return loss.item()


def pretrain(
    model: TwoViewModel, dataset: list[SegSample], config: PretrainConfig
) -> list[dict]:
    """Seeded pretraining loop; bit-deterministic for a fixed seed."""
    rng = np.random.default_rng(config.seed)
    optimizer = AdamW(weight_decay=config.weight_decay)
    schedule = WarmupCosineSchedule(config.peak_lr, config.warmup_steps, config.total_steps)
    log: list[dict] = []
    for step in range(config.total_steps):
        idx = _batch_indices(rng, len(dataset), config.batch_size)
        batch = [dataset[i] for i in idx]
        lr = schedule.lr(step)
        l_ce = pretrain_step(model, batch, optimizer, lr)
        _append_log(
            log,
            {
                "step": step,
                "phase": "pretrain",
                "lr": lr,
                "L_ce": l_ce,
                "L_pose": None,
                "L_joint": None,
                "s_t": model.params["s_t"].item(),
                "s_q": model.params["s_q"].item(),
                "s_seg": model.params["s_seg"].item(),
            },
            config.log_path,
        )
    return log


PHASE1_TRAINABLE_GROUPS = ("pose_head",)
PHASE1_TRAINABLE_SCALARS = ("s_t", "s_q")


def phase1_trainable(params: dict[str, Tensor]) -> set[str]:
    """Pose head weights plus the two pose log-variances."""
    names = {n for n in params if parameter_group(n) in PHASE1_TRAINABLE_GROUPS}
    names.update(PHASE1_TRAINABLE_SCALARS)
    return names


def _finetune_losses(model: TwoViewModel, sample: PoseSample, sign_align: bool):
    bundle = model.forward_pair(sample.image1, sample.image2)
    po = pose_head(bundle.out1, bundle.out2, model.params)
    l_pose = pose_loss(
        sample.t_gt,
        sample.q_gt,
        po.t_hat,
        po.q_hat,
        model.params["s_t"],
        model.params["s_q"],
        sign_align=sign_align,
    )
    l_ce = segmentation_loss(
        bundle.out1, bundle.out2, sample.labels1, sample.labels2, model.params, model.config
    )
    return l_pose, l_ce


def finetune(
    model: TwoViewModel, dataset: list[PoseSample], config: FinetuneConfig
) -> list[dict]:
    """Two-phase fine-tuning. Phase 1 leaves the backbone, segmentation
    head, and s_seg bit-identical; phase 2 optimizes the joint loss over
    all parameters with a fresh optimizer state."""
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = max(1, -(-len(dataset) // config.batch_size))
    log: list[dict] = []
    step = 0
    for phase, epochs, lr, trainable in (
        (1, config.phase1_epochs, config.phase1_lr, phase1_trainable(model.params)),
        (2, config.phase2_epochs, config.phase2_lr, None),
    ):
        optimizer = AdamW(weight_decay=config.weight_decay)
        for _ in range(epochs * steps_per_epoch):
            idx = _batch_indices(rng, len(dataset), config.batch_size)
            batch = [dataset[i] for i in idx]
            zero_grads(model.params)
            total_pose = total_ce = None
            if phase == 1:
                ce_vals = []
                for sample in batch:
                    l_pose, l_ce = _finetune_losses(model, sample, config.sign_align)
                    total_pose = l_pose if total_pose is None else add(total_pose, l_pose)
                    ce_vals.append(l_ce.item())  # logged only; not optimized in phase 1
                loss = mul(total_pose, 1.0 / len(batch))
                l_pose_val = loss.item()
                l_ce_val = float(np.mean(ce_vals))
                l_joint_val = None
            else:
                for sample in batch:
                    l_pose, l_ce = _finetune_losses(model, sample, config.sign_align)
                    total_pose = l_pose if total_pose is None else add(total_pose, l_pose)
                    total_ce = l_ce if total_ce is None else add(total_ce, l_ce)
                mean_pose = mul(total_pose, 1.0 / len(batch))
                mean_ce = mul(total_ce, 1.0 / len(batch))
                loss = joint_loss(mean_pose, mean_ce, model.params["s_seg"])
                l_pose_val = mean_pose.item()
                l_ce_val = mean_ce.item()
                l_joint_val = loss.item()
            backward(loss)
            optimizer.step(model.params, lr, trainable=trainable)
            _append_log(
                log,
                {
                    "step": step,
                    "phase": phase,
                    "lr": lr,
                    "L_ce": l_ce_val,
                    "L_pose": l_pose_val,
                    "L_joint": l_joint_val,
                    "s_t": model.params["s_t"].item(),
                    "s_q": model.params["s_q"].item(),
                    "s_seg": model.params["s_seg"].item(),
                },
                config.log_path,
            )
            step += 1
    return log
