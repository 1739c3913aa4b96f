"""Desk-scale two-view network: tensor engine, model, losses, training."""

from .autograd import Tensor, backward, gradcheck, no_grad, zero_grads
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    PoseSample,
    SegSample,
    depth_to_image,
    pixel_accuracy,
    scene_pose_dataset,
    separable_seg_dataset,
)
from .losses import (
    cross_entropy,
    cross_entropy_from_logits,
    joint_loss,
    pose_loss,
    segmentation_loss,
)
from .model import (
    ActivationBundle,
    ModelConfig,
    PoseOutputs,
    TwoViewModel,
    init_parameters,
    labels_to_patches,
    parameter_group,
    patches_to_image,
    patchify,
    pose_head,
    seg_logits,
    seg_probabilities,
    unpatchify,
)
from .optim import AdamW, WarmupCosineSchedule
from .train import (
    FinetuneConfig,
    PretrainConfig,
    finetune,
    phase1_trainable,
    pretrain,
    pretrain_step,
)

__all__ = [
    "ActivationBundle",
    "AdamW",
    "FinetuneConfig",
    "ModelConfig",
    "PoseOutputs",
    "PoseSample",
    "PretrainConfig",
    "SegSample",
    "Tensor",
    "TwoViewModel",
    "WarmupCosineSchedule",
    "backward",
    "cross_entropy",
    "cross_entropy_from_logits",
    "depth_to_image",
    "finetune",
    "gradcheck",
    "init_parameters",
    "joint_loss",
    "labels_to_patches",
    "load_checkpoint",
    "no_grad",
    "parameter_group",
    "patches_to_image",
    "patchify",
    "phase1_trainable",
    "pixel_accuracy",
    "pose_head",
    "pose_loss",
    "pretrain",
    "pretrain_step",
    "save_checkpoint",
    "scene_pose_dataset",
    "seg_logits",
    "seg_probabilities",
    "segmentation_loss",
    "separable_seg_dataset",
    "unpatchify",
    "zero_grads",
]
