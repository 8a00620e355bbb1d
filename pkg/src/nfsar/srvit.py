"""Mobile super-resolution network: inverted-residual convolution blocks
alternating with hybrid conv/transformer blocks, assembled as a stride-1
fully convolutional image-to-image model.

Each hybrid block runs local 3x3/1x1 convolutions, unfolds the feature map
into 2x2 patch tokens, applies pre-norm transformer layers across patches
(giving the block a global receptive field), folds back, and fuses with the
block input through a 3x3 convolution. Channel width doubles at the last
hybrid block; the token dim is always twice the channel width.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError
from .scene import ReflectivityImage


@dataclass
class ModelConfig:
    """Architecture constants; `paper()` is the reference configuration."""

    base_channels: int = 8
    last_channels: int = 16
    depths: tuple[int, int, int] = (2, 4, 3)
    patch: int = 2
    heads: int = 2
    ffn_ratio: int = 4
    expansion: int = 2
    in_channels: int = 1

    def __post_init__(self):
        self.depths = tuple(self.depths)
        for c in (self.base_channels, self.last_channels):
            if (2 * c) % self.heads:
                raise ValidationError(
                    f"token dim {2 * c} must be divisible by heads={self.heads}"
                )
        if self.patch < 1:
            raise ValidationError("patch side must be >= 1")
        if len(self.depths) != 3:
            raise ValidationError("exactly three transformer depths are expected")

    @classmethod
    def paper(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """Width-reduced variant for overfit runs and gradient checks."""
        return cls(base_channels=4, last_channels=8)

    def to_json(self) -> str:
        doc = {"schema": "nfsar.model/1"}
        doc.update(asdict(self))
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        doc = json.loads(text)
        if doc.pop("schema", None) != "nfsar.model/1":
            raise ValidationError("unsupported model config schema")
        doc["depths"] = tuple(doc["depths"])
        return cls(**doc)


class ModelWeights:
    """Named parameter tensors plus normalization buffers."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor],
                 buffers: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.buffers = buffers

    @property
    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in self.params.items():
            if k not in arrays:
                raise ValidationError(f"checkpoint is missing parameter {k!r}")
            if tuple(arrays[k].shape) != p.data.shape:
                raise ValidationError(
                    f"parameter {k!r}: checkpoint shape {arrays[k].shape} "
                    f"vs model shape {p.data.shape}"
                )
            p.data = arrays[k].astype(p.data.dtype)
        for k in self.buffers:
            if k in arrays:
                self.buffers[k] = arrays[k].astype(self.buffers[k].dtype)


# ---------------------------------------------------------------------------
# construction


def _add_conv(params, buffers, rng, name, cin, cout, k, groups=1, norm=True,
              bias=False, dtype=np.float32):
    fan_in = (cin // groups) * k * k
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin // groups, k, k))
    params[f"{name}.w"] = Tensor(w.astype(dtype), requires_grad=True, name=f"{name}.w")
    if bias:
        params[f"{name}.b"] = Tensor(np.zeros(cout, dtype), requires_grad=True,
                                     name=f"{name}.b")
    if norm:
        params[f"{name}.bn.g"] = Tensor(np.ones(cout, dtype), requires_grad=True)
        params[f"{name}.bn.b"] = Tensor(np.zeros(cout, dtype), requires_grad=True)
        buffers[f"{name}.bn.mean"] = np.zeros(cout, dtype)
        buffers[f"{name}.bn.var"] = np.ones(cout, dtype)


def _add_linear(params, rng, name, din, dout, dtype=np.float32):
    w = rng.normal(0.0, np.sqrt(1.0 / din), (din, dout))
    params[f"{name}.w"] = Tensor(w.astype(dtype), requires_grad=True, name=f"{name}.w")
    params[f"{name}.b"] = Tensor(np.zeros(dout, dtype), requires_grad=True,
                                 name=f"{name}.b")


def _add_norm(params, name, d, dtype=np.float32):
    params[f"{name}.g"] = Tensor(np.ones(d, dtype), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(d, dtype), requires_grad=True)


def _add_mv2(params, buffers, rng, name, cin, cout, expansion, dtype):
    hidden = cin * expansion
    _add_conv(params, buffers, rng, f"{name}.expand", cin, hidden, 1, dtype=dtype)
    _add_conv(params, buffers, rng, f"{name}.dw", hidden, hidden, 3, groups=hidden,
              dtype=dtype)
    _add_conv(params, buffers, rng, f"{name}.proj", hidden, cout, 1, dtype=dtype)


def _add_mobilevit(params, buffers, rng, name, c, depth, config, dtype):
    d = 2 * c
    _add_conv(params, buffers, rng, f"{name}.local", c, c, 3, dtype=dtype)
    _add_linear(params, rng, f"{name}.proj_in", c, d, dtype=dtype)
    for i in range(depth):
        t = f"{name}.tr{i}"
        _add_norm(params, f"{t}.ln1", d, dtype)
        for proj in ("q", "k", "v", "o"):
            _add_linear(params, rng, f"{t}.{proj}", d, d, dtype=dtype)
        _add_norm(params, f"{t}.ln2", d, dtype)
        _add_linear(params, rng, f"{t}.ffn1", d, config.ffn_ratio * d, dtype=dtype)
        _add_linear(params, rng, f"{t}.ffn2", config.ffn_ratio * d, d, dtype=dtype)
    _add_norm(params, f"{name}.norm", d, dtype)
    _add_linear(params, rng, f"{name}.proj_out", d, c, dtype=dtype)
    _add_conv(params, buffers, rng, f"{name}.fuse", 2 * c, c, 3, dtype=dtype)


def build_model(config: ModelConfig, seed=0, dtype=np.float32) -> ModelWeights:
    """Create the full parameter set; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    c = config.base_channels
    cl = config.last_channels

    _add_conv(params, buffers, rng, "stem1", config.in_channels, c, 3, dtype=dtype)
    _add_conv(params, buffers, rng, "stem2", c, c, 3, dtype=dtype)
    for i in range(3):
        _add_mv2(params, buffers, rng, f"mv2_{i}", c, c, config.expansion, dtype)
    _add_mobilevit(params, buffers, rng, "mvit_0", c, config.depths[0], config, dtype)
    _add_mv2(params, buffers, rng, "mv2_3", c, c, config.expansion, dtype)
    _add_mobilevit(params, buffers, rng, "mvit_1", c, config.depths[1], config, dtype)
    _add_mv2(params, buffers, rng, "mv2_4", c, cl, config.expansion, dtype)
    _add_mobilevit(params, buffers, rng, "mvit_2", cl, config.depths[2], config, dtype)
    _add_conv(params, buffers, rng, "head1", cl, c, 3, dtype=dtype)
    _add_conv(params, buffers, rng, "head2", c, 1, 3, norm=False, bias=True, dtype=dtype)
    return ModelWeights(config, params, buffers)


# ---------------------------------------------------------------------------
# forward pieces


def _conv_bn_silu(x: Tensor, w: ModelWeights, name: str, training: bool,
                  stride: int = 1, padding: int = 1, groups: int = 1) -> Tensor:
    x = ad.conv2d(x, w.params[f"{name}.w"], None, stride=stride, padding=padding,
                  groups=groups)
    x = ad.batch_norm2d(x, w.params[f"{name}.bn.g"], w.params[f"{name}.bn.b"],
                        w.buffers[f"{name}.bn.mean"], w.buffers[f"{name}.bn.var"],
                        training)
    return ad.silu(x)


def mv2_block(x: Tensor, w: ModelWeights, name: str, stride: int = 1,
              training: bool = False) -> Tensor:
    """Inverted residual: expand 1x1, depthwise 3x3, project 1x1.

    The skip connection applies iff stride == 1 and the channel count is
    preserved.
    """
    if stride not in (1, 2):
        raise ValidationError(f"stride must be 1 or 2, got {stride}")
    cin = x.shape[1]
    hidden = w.params[f"{name}.expand.w"].shape[0]
    h = _conv_bn_silu(x, w, f"{name}.expand", training, padding=0)
    h = _conv_bn_silu(h, w, f"{name}.dw", training, stride=stride, padding=1,
                      groups=hidden)
    h = ad.conv2d(h, w.params[f"{name}.proj.w"], None, padding=0)
    h = ad.batch_norm2d(h, w.params[f"{name}.proj.bn.g"], w.params[f"{name}.proj.bn.b"],
                        w.buffers[f"{name}.proj.bn.mean"],
                        w.buffers[f"{name}.proj.bn.var"], training)
    if stride == 1 and h.shape[1] == cin:
        return ad.add(h, x)
    return h


def _transformer_layer(x: Tensor, w: ModelWeights, name: str, heads: int) -> Tensor:
    p = w.params
    h = ad.layer_norm(x, p[f"{name}.ln1.g"], p[f"{name}.ln1.b"])
    h = ad.multi_head_self_attention(
        h, heads,
        p[f"{name}.q.w"], p[f"{name}.q.b"], p[f"{name}.k.w"], p[f"{name}.k.b"],
        p[f"{name}.v.w"], p[f"{name}.v.b"], p[f"{name}.o.w"], p[f"{name}.o.b"])
    x = ad.add(x, h)
    h = ad.layer_norm(x, p[f"{name}.ln2.g"], p[f"{name}.ln2.b"])
    h = ad.linear(h, p[f"{name}.ffn1.w"], p[f"{name}.ffn1.b"])
    h = ad.silu(h)
    h = ad.linear(h, p[f"{name}.ffn2.w"], p[f"{name}.ffn2.b"])
    return ad.add(x, h)


def mobilevit_block(x: Tensor, w: ModelWeights, name: str, depth: int,
                    patch: int, heads: int, training: bool = False) -> Tensor:
    """Local convs, patch-token transformer, fold, fuse; output shape == input."""
    _, c, height, width = x.shape
    if height % patch or width % patch:
        raise ValidationError(
            f"feature map {height}x{width} not divisible by patch={patch}"
        )
    p = w.params
    h = _conv_bn_silu(x, w, f"{name}.local", training)
    # Token projection is pointwise, so run it in token layout.
    tokens = ad.unfold_patches(h, patch)
    tokens = ad.linear(tokens, p[f"{name}.proj_in.w"], p[f"{name}.proj_in.b"])
    for i in range(depth):
        tokens = _transformer_layer(tokens, w, f"{name}.tr{i}", heads)
    tokens = ad.layer_norm(tokens, p[f"{name}.norm.g"], p[f"{name}.norm.b"])
    tokens = ad.linear(tokens, p[f"{name}.proj_out.w"], p[f"{name}.proj_out.b"])
    folded = ad.fold_patches(tokens, patch, height, width)
    merged = ad.concat([x, folded], axis=1)
    return _conv_bn_silu(merged, w, f"{name}.fuse", training)


def forward(weights: ModelWeights, x, training: bool = False) -> Tensor:
    """Full network pass on a (B, 1, H, W) tensor; H, W divisible by the patch."""
    cfg = weights.config
    x = ad.as_tensor(x)
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ValidationError(
            f"input must be (B, {cfg.in_channels}, H, W), got {x.shape}"
        )
    if x.shape[2] % cfg.patch or x.shape[3] % cfg.patch:
        raise ValidationError(
            f"input {x.shape[2]}x{x.shape[3]} not divisible by patch={cfg.patch}"
        )
    h = _conv_bn_silu(x, weights, "stem1", training)
    h = _conv_bn_silu(h, weights, "stem2", training)
    for i in range(3):
        h = mv2_block(h, weights, f"mv2_{i}", training=training)
    h = mobilevit_block(h, weights, "mvit_0", cfg.depths[0], cfg.patch, cfg.heads,
                        training)
    h = mv2_block(h, weights, "mv2_3", training=training)
    h = mobilevit_block(h, weights, "mvit_1", cfg.depths[1], cfg.patch, cfg.heads,
                        training)
    h = mv2_block(h, weights, "mv2_4", training=training)
    h = mobilevit_block(h, weights, "mvit_2", cfg.depths[2], cfg.patch, cfg.heads,
                        training)
    h = _conv_bn_silu(h, weights, "head1", training)
    w2 = weights.params
    return ad.conv2d(h, w2["head2.w"], w2["head2.b"], padding=1)


def srvit_forward(image, weights: ModelWeights):
    """Deterministic eval-mode pass; output clamped to [0, 1].

    Accepts and returns a ReflectivityImage, or a bare 2-D array.
    """
    is_refl = isinstance(image, ReflectivityImage)
    pixels = image.pixels if is_refl else np.asarray(image)
    x = pixels.astype(np.float32)[None, None, :, :]
    with ad.no_grad():
        out = forward(weights, x, training=False)
    restored = np.clip(out.data[0, 0].astype(np.float64), 0.0, 1.0)
    if is_refl:
        return ReflectivityImage(pixels=restored, grid=image.grid)
    return restored


def l1_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute pixel difference (mean keeps it resolution-independent)."""
    if sr.shape != hr.shape:
        raise ValidationError(f"loss shapes differ: {sr.shape} vs {hr.shape}")
    return ad.mean_(ad.abs_(ad.sub(sr, hr)))


def save_model(weights: ModelWeights, path, config_path=None):
    arrays: dict[str, np.ndarray] = {k: v.data for k, v in weights.params.items()}
    arrays.update(weights.buffers)
    ad.save_checkpoint(arrays, path)
    if config_path is not None:
        with open(config_path, "w", encoding="utf-8") as fh:
            fh.write(weights.config.to_json())


def load_model(path, config: ModelConfig) -> ModelWeights:
    weights = build_model(config, seed=0)
    weights.load_arrays(ad.load_checkpoint(path))
    return weights
