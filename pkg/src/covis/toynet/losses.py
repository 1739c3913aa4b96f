"""Training objectives: segmentation cross-entropy, pose regression with
learned homoscedastic weighting, and their joint combination.

The per-task uncertainties are stored as log-variances s = 2*log(sigma),
so each weighted term reads 0.5*exp(-s)*residual + 0.5*s. That is
algebraically the usual 1/(2*sigma^2)*residual + log(sigma) form with an
unconstrained, numerically stable parameterization.
"""

from __future__ import annotations

import numpy as np

from ..geom3d import quat_normalize
from .autograd import Tensor, add, exp, log, log_softmax, mul, nll_select, squared_error
from .model import ModelConfig, labels_to_patches, seg_logits

IGNORE_LABEL = 255


def cross_entropy(probabilities: Tensor, labels: np.ndarray, ignore: int = IGNORE_LABEL) -> Tensor:
    """Mean negative log of the probability at the true class.

    `probabilities` has shape (..., k); `labels` the matching integer
    array. Ignore pixels are excluded from the sum and the normalizer.
    """
    return nll_select(log(probabilities), labels, ignore=ignore)


def cross_entropy_from_logits(
    logits: Tensor, labels: np.ndarray, ignore: int = IGNORE_LABEL
) -> Tensor:
    """Numerically stable cross-entropy via log-softmax."""
    return nll_select(log_softmax(logits, axis=-1), labels, ignore=ignore)


def segmentation_loss(
    out1: Tensor,
    out2: Tensor,
    labels1: np.ndarray,
    labels2: np.ndarray,
    params: dict[str, Tensor],
    config: ModelConfig,
) -> Tensor:
    """Per-image cross-entropy summed over both views."""
    p = config.patch_size
    l1 = cross_entropy_from_logits(seg_logits(out1, params, config), labels_to_patches(labels1, p))
    l2 = cross_entropy_from_logits(seg_logits(out2, params, config), labels_to_patches(labels2, p))
    return add(l1, l2)


def pose_loss(
    t_gt: np.ndarray,
    q_gt: np.ndarray,
    t_hat: Tensor,
    q_hat: Tensor,
    s_t: Tensor,
    s_q: Tensor,
    sign_align: bool = False,
) -> Tensor:
    """0.5*exp(-s_t)*||t - t_hat||^2 + 0.5*exp(-s_q)*||q - q_hat||^2
    + 0.5*s_t + 0.5*s_q.

    The ground-truth quaternion is canonicalized to w >= 0; the predicted
    one is treated as a plain 4-vector. With sign_align=True the target is
    instead flipped to the half-sphere of the prediction before the MSE
    (not the default: the literal reading treats quaternions as 4-D
    vectors).
    """
    q_gt = quat_normalize(q_gt)
    if sign_align and float(np.dot(q_gt, q_hat.data)) < 0.0:
        q_gt = -q_gt
    lt = mul(mul(exp(mul(s_t, -1.0)), 0.5), squared_error(t_hat, np.asarray(t_gt, dtype=np.float64)))
    lq = mul(mul(exp(mul(s_q, -1.0)), 0.5), squared_error(q_hat, q_gt))
    return add(add(lt, lq), add(mul(s_t, 0.5), mul(s_q, 0.5)))


def joint_loss(pose_term: Tensor, ce_term: Tensor, s_seg: Tensor) -> Tensor:
    """pose + 0.5*exp(-s_seg)*ce + 0.5*s_seg."""
    weighted = mul(mul(exp(mul(s_seg, -1.0)), 0.5), ce_term)
    return add(add(pose_term, weighted), mul(s_seg, 0.5))
