"""Symmetric two-view encoder/decoder with segmentation and pose heads.

Both images go through a shared ViT-style encoder independently; a
decoder with cross-attention then processes each view's features with
the other view's as keys/values (no masking anywhere). A per-token
linear head expands to per-pixel class logits; a pooled MLP head
regresses relative translation and an L2-normalized quaternion.

Decoder blocks run self-attention, then cross-attention, then the
feed-forward, each with a pre-norm residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor,
    add,
    concat,
    gelu,
    l2_normalize,
    layer_norm,
    matmul,
    mean,
    reshape,
    softmax,
    transpose,
)


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    patch_size: int = 8
    dim: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    classes: int = 3
    mlp_ratio: float = 2.0

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.classes not in (2, 3):
            raise ValueError("classes must be 2 or 3")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def token_len(self) -> int:
        return 3 * self.patch_size * self.patch_size

    @staticmethod
    def full_scale() -> "ModelConfig":
        """The documented full-scale configuration (24 encoder and 12
        decoder layers). Not the default; desk-scale runs use the toy
        defaults above."""
        return ModelConfig(
            image_size=224, patch_size=16, dim=768, enc_layers=24, dec_layers=12, heads=12
        )

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "dim": self.dim,
            "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers,
            "heads": self.heads,
            "classes": self.classes,
            "mlp_ratio": self.mlp_ratio,
        }


@dataclass
class ActivationBundle:
    """Intermediate features of one pair forward pass."""

    tokens1: np.ndarray
    tokens2: np.ndarray
    feats1: Tensor
    feats2: Tensor
    out1: Tensor
    out2: Tensor


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """(3, H, W) image to (N, 3*p*p) tokens in row-major patch order."""
    c, h, w = image.shape
    if c != 3 or h % patch_size or w % patch_size:
        raise ValueError(f"bad image shape {image.shape} for patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = image.reshape(c, gh, patch_size, gw, patch_size)
    # (gh, gw, c, py, px) -> row-major tokens with channel-major content
    x = x.transpose(1, 3, 0, 2, 4)
    return x.reshape(gh * gw, c * patch_size * patch_size)


def unpatchify(tokens: np.ndarray, patch_size: int, height: int, width: int) -> np.ndarray:
    """Inverse of patchify."""
    gh, gw = height // patch_size, width // patch_size
    x = tokens.reshape(gh, gw, 3, patch_size, patch_size)
    return x.transpose(2, 0, 3, 1, 4).reshape(3, height, width)


def labels_to_patches(labels: np.ndarray, patch_size: int) -> np.ndarray:
    """(H, W) per-pixel labels to (N, p*p) matching the token order."""
    h, w = labels.shape
    gh, gw = h // patch_size, w // patch_size
    x = labels.reshape(gh, patch_size, gw, patch_size)
    return x.transpose(0, 2, 1, 3).reshape(gh * gw, patch_size * patch_size)


def patches_to_image(patch_values: np.ndarray, patch_size: int, height: int, width: int):
    """(N, p*p, ...) per-pixel values back to (H, W, ...) image layout."""
    gh, gw = height // patch_size, width // patch_size
    trailing = patch_values.shape[2:]
    x = patch_values.reshape(gh, gw, patch_size, patch_size, *trailing)
    x = np.moveaxis(x, 2, 1).reshape(gh * patch_size, gw * patch_size, *trailing)
    return x


def _init_linear(rng, fan_in, fan_out, scale=0.02):
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


def init_parameters(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """All learnable quantities, seeded. Keys group into the backbone
    (patch embed, positions, encoder, decoder), the segmentation head,
    the pose head, and the three log-variance scalars."""
    rng = np.random.default_rng(seed)
    d = config.dim
    p: dict[str, np.ndarray] = {}

    p["patch_embed.w"] = _init_linear(rng, config.token_len, d)
    p["patch_embed.b"] = np.zeros(d)
    # a healthy signal scale entering the first layer norm keeps its
    # curvature (and thus finite-difference conditioning) benign
    p["pos_enc"] = rng.normal(0.0, 0.2, size=(config.n_tokens, d))

    def attn_block(prefix, kv_dim=None):
        kv_dim_ = kv_dim or d
        p[f"{prefix}.wq"] = _init_linear(rng, d, d)
        p[f"{prefix}.bq"] = np.zeros(d)
        p[f"{prefix}.wk"] = _init_linear(rng, kv_dim_, d)
        p[f"{prefix}.bk"] = np.zeros(d)
        p[f"{prefix}.wv"] = _init_linear(rng, kv_dim_, d)
        p[f"{prefix}.bv"] = np.zeros(d)
        p[f"{prefix}.wo"] = _init_linear(rng, d, d)
        p[f"{prefix}.bo"] = np.zeros(d)

    def norm(prefix):
        p[f"{prefix}.g"] = np.ones(d)
        p[f"{prefix}.b"] = np.zeros(d)

    def mlp(prefix):
        hidden = int(d * config.mlp_ratio)
        p[f"{prefix}.w1"] = _init_linear(rng, d, hidden)
        p[f"{prefix}.b1"] = np.zeros(hidden)
        p[f"{prefix}.w2"] = _init_linear(rng, hidden, d)
        p[f"{prefix}.b2"] = np.zeros(d)

    for i in range(config.enc_layers):
        norm(f"enc{i}.ln1")
        attn_block(f"enc{i}.attn")
        norm(f"enc{i}.ln2")
        mlp(f"enc{i}.mlp")
    norm("enc_ln")

    for i in range(config.dec_layers):
        norm(f"dec{i}.ln1")
        attn_block(f"dec{i}.self")
        norm(f"dec{i}.ln2")
        attn_block(f"dec{i}.cross")
        norm(f"dec{i}.ln3")
        mlp(f"dec{i}.mlp")
    norm("dec_ln")

    pp = config.patch_size * config.patch_size
    p["seg.w"] = _init_linear(rng, d, pp * config.classes)
    p["seg.b"] = np.zeros(pp * config.classes)

    hidden = 2 * d
    p["pose.trunk.w1"] = _init_linear(rng, 2 * d, hidden)
    p["pose.trunk.b1"] = np.zeros(hidden)
    p["pose.trunk.w2"] = _init_linear(rng, hidden, hidden)
    p["pose.trunk.b2"] = np.zeros(hidden)
    for head, out in (("t", 3), ("q", 4)):
        p[f"pose.{head}.w1"] = _init_linear(rng, hidden, hidden)
        p[f"pose.{head}.b1"] = np.zeros(hidden)
        p[f"pose.{head}.w2"] = _init_linear(rng, hidden, out)
        p[f"pose.{head}.b2"] = np.zeros(out)
    # start at the identity rotation: keeps the raw quaternion away from
    # the origin where L2 normalization is ill-conditioned
    p["pose.q.b2"] = np.array([1.0, 0.0, 0.0, 0.0])

    p["s_t"] = np.array(0.0)
    p["s_q"] = np.array(0.0)
    p["s_seg"] = np.array(0.0)

    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


BACKBONE_PREFIXES = ("patch_embed.", "pos_enc", "enc", "dec")
SEG_HEAD_PREFIXES = ("seg.",)
POSE_HEAD_PREFIXES = ("pose.",)


def parameter_group(name: str) -> str:
    """One of backbone / seg_head / pose_head / uncertainty."""
    if name.startswith(POSE_HEAD_PREFIXES):
        return "pose_head"
    if name.startswith(SEG_HEAD_PREFIXES):
        return "seg_head"
    if name in ("s_t", "s_q", "s_seg"):
        return "uncertainty"
    return "backbone"


def _attention(p, prefix, q_in: Tensor, kv_in: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention, exact (no approximation)."""
    d = q_in.shape[-1]
    dh = d // heads
    nq = q_in.shape[0]
    nk = kv_in.shape[0]

    q = add(matmul(q_in, p[f"{prefix}.wq"]), p[f"{prefix}.bq"])
    k = add(matmul(kv_in, p[f"{prefix}.wk"]), p[f"{prefix}.bk"])
    v = add(matmul(kv_in, p[f"{prefix}.wv"]), p[f"{prefix}.bv"])

    q = transpose(reshape(q, (nq, heads, dh)), (1, 0, 2))  # (h, nq, dh)
    k = transpose(reshape(k, (nk, heads, dh)), (1, 0, 2))
    v = transpose(reshape(v, (nk, heads, dh)), (1, 0, 2))

    scores = matmul(q, transpose(k, (0, 2, 1)))  # (h, nq, nk)
    scores = scores * (1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    out = matmul(attn, v)  # (h, nq, dh)
    out = reshape(transpose(out, (1, 0, 2)), (nq, d))
    return add(matmul(out, p[f"{prefix}.wo"]), p[f"{prefix}.bo"])


def _mlp(p, prefix, x: Tensor) -> Tensor:
    h = gelu(add(matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    return add(matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])


def _ln(p, prefix, x: Tensor) -> Tensor:
    return layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def encode(tokens: np.ndarray, params: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Shared encoder applied to one image's tokens: (N, token_len) -> (N, d)."""
    x = add(matmul(Tensor(tokens), params["patch_embed.w"]), params["patch_embed.b"])
    x = add(x, params["pos_enc"])
    for i in range(config.enc_layers):
        y = _ln(params, f"enc{i}.ln1", x)
        x = add(x, _attention(params, f"enc{i}.attn", y, y, config.heads))
        x = add(x, _mlp(params, f"enc{i}.mlp", _ln(params, f"enc{i}.ln2", x)))
    return _ln(params, "enc_ln", x)


def decode(
    feats_self: Tensor, feats_other: Tensor, params: dict[str, Tensor], config: ModelConfig
) -> Tensor:
    """Decoder stream for one view; keys/values come from the other view."""
    x = feats_self
    for i in range(config.dec_layers):
        y = _ln(params, f"dec{i}.ln1", x)
        x = add(x, _attention(params, f"dec{i}.self", y, y, config.heads))
        x = add(
            x,
            _attention(
                params, f"dec{i}.cross", _ln(params, f"dec{i}.ln2", x), feats_other, config.heads
            ),
        )
        x = add(x, _mlp(params, f"dec{i}.mlp", _ln(params, f"dec{i}.ln3", x)))
    return _ln(params, "dec_ln", x)


def seg_logits(decoder_out: Tensor, params: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Per-pixel class logits (N, p*p, k) from per-token features."""
    pp = config.patch_size * config.patch_size
    x = add(matmul(decoder_out, params["seg.w"]), params["seg.b"])
    return reshape(x, (config.n_tokens, pp, config.classes))


def seg_probabilities(decoder_out: Tensor, params: dict[str, Tensor], config: ModelConfig):
    """Per-pixel softmax probabilities (N, p*p, k); rows sum to 1."""
    return softmax(seg_logits(decoder_out, params, config), axis=-1)


@dataclass
class PoseOutputs:
    t_hat: Tensor  # (3,) metric translation
    q_hat: Tensor  # (4,) unit quaternion
    f1: Tensor  # pooled view-1 feature
    f2: Tensor
    f_shared: Tensor


def pose_head(out1: Tensor, out2: Tensor, params: dict[str, Tensor]) -> PoseOutputs:
    """Pooled two-view pose regression.

    Mean-pools both decoder outputs, concatenates (order matters),
    runs the shared MLP, then the separate translation and quaternion
    heads; the quaternion is L2-normalized.
    """
    f1 = mean(out1, axis=0)
    f2 = mean(out2, axis=0)
    f = reshape(concat([f1, f2], axis=0), (1, f1.shape[0] * 2))

    h = gelu(add(matmul(f, params["pose.trunk.w1"]), params["pose.trunk.b1"]))
    f_shared = add(matmul(h, params["pose.trunk.w2"]), params["pose.trunk.b2"])

    ht = gelu(add(matmul(f_shared, params["pose.t.w1"]), params["pose.t.b1"]))
    t_hat = reshape(add(matmul(ht, params["pose.t.w2"]), params["pose.t.b2"]), (3,))

    hq = gelu(add(matmul(f_shared, params["pose.q.w1"]), params["pose.q.b1"]))
    q_raw = reshape(add(matmul(hq, params["pose.q.w2"]), params["pose.q.b2"]), (4,))
    q_hat = l2_normalize(q_raw)
    return PoseOutputs(t_hat=t_hat, q_hat=q_hat, f1=f1, f2=f2, f_shared=f_shared)


class TwoViewModel:
    """Config plus parameters, with the pair forward pass."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_parameters(config, seed)

    def forward_pair(self, image1: np.ndarray, image2: np.ndarray) -> ActivationBundle:
        p = self.config.patch_size
        t1 = patchify(image1, p)
        t2 = patchify(image2, p)
        f1 = encode(t1, self.params, self.config)
        f2 = encode(t2, self.params, self.config)
        o1 = decode(f1, f2, self.params, self.config)
        o2 = decode(f2, f1, self.params, self.config)
        return ActivationBundle(t1, t2, f1, f2, o1, o2)

    def predict_segmentation(self, bundle: ActivationBundle):
        """Per-pixel (H, W) argmax labels for both views."""
        cfg = self.config
        out = []
        for o in (bundle.out1, bundle.out2):
            probs = seg_probabilities(o, self.params, cfg).data
            lab = patches_to_image(
                probs.argmax(axis=-1).astype(np.uint8), cfg.patch_size, cfg.image_size,
                cfg.image_size,
            )
            out.append(lab)
        return out[0], out[1]

    def predict_pose(self, bundle: ActivationBundle):
        po = pose_head(bundle.out1, bundle.out2, self.params)
        return po.t_hat.data.copy(), po.q_hat.data.copy()
