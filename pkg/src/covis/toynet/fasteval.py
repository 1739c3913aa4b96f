"""Plain-numpy loss evaluation, written independently of the tape engine.

Used as the finite-difference oracle's forward (and for fast inference):
no Tensor boxing, no graph construction. Stage entry points let a
finite-difference sweep reuse activations that provably do not depend on
the perturbed parameter (encoder outputs while perturbing decoder
weights, and so on); the reused values are bit-identical to a full
recomputation, so the differences stay exact.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..geom3d import quat_normalize
from .model import ModelConfig, labels_to_patches, patchify

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


def _gelu(x):
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def _ln(p, prefix, x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return p[f"{prefix}.g"] * (x - mu) / np.sqrt(var + eps) + p[f"{prefix}.b"]


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _attention(p, prefix, q_in, kv_in, heads):
    d = q_in.shape[-1]
    dh = d // heads
    nq, nk = q_in.shape[0], kv_in.shape[0]
    q = (q_in @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]).reshape(nq, heads, dh).transpose(1, 0, 2)
    k = (kv_in @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"]).reshape(nk, heads, dh).transpose(1, 0, 2)
    v = (kv_in @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"]).reshape(nk, heads, dh).transpose(1, 0, 2)
    attn = _softmax(q @ k.transpose(0, 2, 1) / math.sqrt(dh))
    out = (attn @ v).transpose(1, 0, 2).reshape(nq, d)
    return out @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]


def _mlp(p, prefix, x):
    return _gelu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]) @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]


def encode_np(tokens: np.ndarray, p: dict, config: ModelConfig) -> np.ndarray:
    x = tokens @ p["patch_embed.w"] + p["patch_embed.b"] + p["pos_enc"]
    for i in range(config.enc_layers):
        y = _ln(p, f"enc{i}.ln1", x)
        x = x + _attention(p, f"enc{i}.attn", y, y, config.heads)
        x = x + _mlp(p, f"enc{i}.mlp", _ln(p, f"enc{i}.ln2", x))
    return _ln(p, "enc_ln", x)


def decode_np(feats_self, feats_other, p: dict, config: ModelConfig) -> np.ndarray:
    x = feats_self
    for i in range(config.dec_layers):
        y = _ln(p, f"dec{i}.ln1", x)
        x = x + _attention(p, f"dec{i}.self", y, y, config.heads)
        x = x + _attention(p, f"dec{i}.cross", _ln(p, f"dec{i}.ln2", x), feats_other, config.heads)
        x = x + _mlp(p, f"dec{i}.mlp", _ln(p, f"dec{i}.ln3", x))
    return _ln(p, "dec_ln", x)


def _masked_ce(logits, labels):
    """Mean NLL over non-ignore labels; logits (..., k)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    flat_lp = logp.reshape(-1, logp.shape[-1])
    flat_lab = labels.reshape(-1)
    mask = flat_lab != 255
    if not mask.any():
        return 0.0
    rows = np.nonzero(mask)[0]
    return -flat_lp[rows, flat_lab[rows]].mean()


def seg_ce_np(out, labels_patch, p: dict, config: ModelConfig) -> float:
    pp = config.patch_size * config.patch_size
    logits = (out @ p["seg.w"] + p["seg.b"]).reshape(config.n_tokens, pp, config.classes)
    return float(_masked_ce(logits, labels_patch))


def pose_np(out1, out2, p: dict):
    f = np.concatenate([out1.mean(axis=0), out2.mean(axis=0)])[None, :]
    f_shared = _gelu(f @ p["pose.trunk.w1"] + p["pose.trunk.b1"]) @ p["pose.trunk.w2"] + p[
        "pose.trunk.b2"
    ]
    t_hat = (_gelu(f_shared @ p["pose.t.w1"] + p["pose.t.b1"]) @ p["pose.t.w2"] + p["pose.t.b2"])[0]
    q_raw = (_gelu(f_shared @ p["pose.q.w1"] + p["pose.q.b1"]) @ p["pose.q.w2"] + p["pose.q.b2"])[0]
    q_hat = q_raw / (np.sqrt((q_raw * q_raw).sum()) + 1e-12)
    return t_hat, q_hat


class LossEvaluator:
    """Stage-cached evaluation of (L_ce, L_pose, L_joint) for one sample."""

    def __init__(self, config: ModelConfig, sample):
        self.config = config
        self.tokens1 = patchify(sample.image1, config.patch_size)
        self.tokens2 = patchify(sample.image2, config.patch_size)
        self.labels1 = labels_to_patches(sample.labels1, config.patch_size)
        self.labels2 = labels_to_patches(sample.labels2, config.patch_size)
        self.t_gt = np.asarray(sample.t_gt, dtype=np.float64)
        self.q_gt = quat_normalize(sample.q_gt)

    @staticmethod
    def raw(p: dict) -> dict:
        """Unwrap a tape-parameter dict to plain arrays; pass raw dicts through."""
        first = next(iter(p.values()))
        return p if isinstance(first, np.ndarray) else {k: v.data for k, v in p.items()}

    def encode(self, p):
        p = self.raw(p)
        return encode_np(self.tokens1, p, self.config), encode_np(self.tokens2, p, self.config)

    def decode(self, p, feats):
        p = self.raw(p)
        f1, f2 = feats
        return decode_np(f1, f2, p, self.config), decode_np(f2, f1, p, self.config)

    def seg_ce(self, p, outs) -> float:
        p = self.raw(p)
        o1, o2 = outs
        return seg_ce_np(o1, self.labels1, p, self.config) + seg_ce_np(
            o2, self.labels2, p, self.config
        )

    def pose_loss(self, p, outs) -> float:
        p = self.raw(p)
        t_hat, q_hat = pose_np(outs[0], outs[1], p)
        rt = float(((self.t_gt - t_hat) ** 2).sum())
        rq = float(((self.q_gt - q_hat) ** 2).sum())
        s_t = float(p["s_t"])
        s_q = float(p["s_q"])
        return 0.5 * math.exp(-s_t) * rt + 0.5 * math.exp(-s_q) * rq + 0.5 * s_t + 0.5 * s_q

    def joint(self, ce: float, pose: float, s_seg: float) -> float:
        return pose + 0.5 * math.exp(-s_seg) * ce + 0.5 * s_seg

    def all_losses(self, p, feats=None, outs=None, ce=None, pose=None):
        """(L_ce, L_pose, L_joint), recomputing only what is not supplied."""
        raw = self.raw(p)
        if outs is None:
            if feats is None:
                feats = self.encode(raw)
            outs = self.decode(raw, feats)
        if ce is None:
            ce = self.seg_ce(raw, outs)
        if pose is None:
            pose = self.pose_loss(raw, outs)
        return ce, pose, self.joint(ce, pose, float(raw["s_seg"]))


def staged_gradcheck(model, sample, h: float = 1e-4, floor: float = 1e-6):
    """Central-difference check of every parameter gradient of the
    segmentation, pose, and joint losses.

    Analytic gradients come from the tape engine; finite differences
    come from this module's independent forward. Stages whose inputs a
    perturbation cannot reach are served from bit-identical caches, so
    the differences are exactly those of a full recomputation.

    Returns (worst_rel_err, per_param) with the relative error measured
    against max(|analytic|, |numeric|, floor), maximized over the three
    losses.
    """
    from .autograd import backward, zero_grads
    from .losses import joint_loss, pose_loss, segmentation_loss
    from .model import parameter_group, pose_head

    cfg, params = model.config, model.params
    ev = LossEvaluator(cfg, sample)

    def tape_losses():
        b = model.forward_pair(sample.image1, sample.image2)
        po = pose_head(b.out1, b.out2, params)
        lp = pose_loss(sample.t_gt, sample.q_gt, po.t_hat, po.q_hat, params["s_t"], params["s_q"])
        lc = segmentation_loss(
            b.out1, b.out2, sample.labels1, sample.labels2, params, cfg
        )
        return lc, lp, joint_loss(lp, lc, params["s_seg"])

    analytic = {}
    for which in (0, 1, 2):
        zero_grads(params)
        backward(tape_losses()[which])
        analytic[which] = {
            k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for k, p in params.items()
        }

    raw = {k: p.data for k, p in params.items()}
    feats0 = ev.encode(raw)
    outs0 = ev.decode(raw, feats0)
    ce0 = ev.seg_ce(raw, outs0)
    pose0 = ev.pose_loss(raw, outs0)

    def evaluate(name: str):
        group = parameter_group(name)
        if group == "backbone":
            if name.startswith("dec"):
                return ev.all_losses(raw, feats=feats0)
            return ev.all_losses(raw)
        if group == "seg_head":
            ce = ev.seg_ce(raw, outs0)
            return ce, pose0, ev.joint(ce, pose0, float(raw["s_seg"]))
        if group == "pose_head":
            pose = ev.pose_loss(raw, outs0)
            return ce0, pose, ev.joint(ce0, pose, float(raw["s_seg"]))
        if name in ("s_t", "s_q"):
            pose = ev.pose_loss(raw, outs0)
            return ce0, pose, ev.joint(ce0, pose, float(raw["s_seg"]))
        return ce0, pose0, ev.joint(ce0, pose0, float(raw["s_seg"]))  # s_seg

    worst = 0.0
    per_param = {}
    for name, p in params.items():
        flat = p.data.ravel()
        a_flat = [analytic[w][name].ravel() for w in (0, 1, 2)]
        err = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            plus = evaluate(name)
            flat[idx] = orig - h
            minus = evaluate(name)
            flat[idx] = orig
            for w in (0, 1, 2):
                fd = (plus[w] - minus[w]) / (2.0 * h)
                a = a_flat[w][idx]
                err = max(err, abs(fd - a) / max(abs(fd), abs(a), floor))
        per_param[name] = err
        worst = max(worst, err)
    return worst, per_param
