"""Per-pixel linear regressor and the two U-Net variants.

Every model maps an (N, 39, H, W) input to an (N, 1, H, W) temperature map.
Parameters live in a flat ``name -> Tensor`` dict. The U-Net forward pass
also defines the parameter set: :func:`build_model` runs it once on a dummy
input and creates each parameter the first time it is requested.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad
from .tensor import ops as F

MODEL_KINDS = ("linear", "resnet-style", "convnext-style")
BACKBONE_OF_KIND = {"resnet-style": "residual", "convnext-style": "convnext"}
N_INPUT_CHANNELS = 39


@dataclass
class ArchConfig:
    backbone: str = "residual"  # residual | convnext
    widths: tuple[int, ...] = (32, 64, 128, 256)
    blocks: int = 2
    stem_stride: int = 2
    head_width: int = 32
    in_channels: int = N_INPUT_CHANNELS
    gn_groups: int = 8
    expansion: int = 4
    dw_kernel: int = 7

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.backbone not in ("residual", "convnext"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if len(self.widths) < 2 or min(self.widths) <= 0:
            raise ValueError("need at least two stages with positive widths")
        if self.stem_stride not in (1, 2) or self.blocks < 1 or self.head_width <= 0:
            raise ValueError("invalid stem stride / blocks / head width")

    @property
    def pad_multiple(self) -> int:
        """Inputs are mirror-padded to a multiple of this (2**(stages+1) with the default stem)."""
        return self.stem_stride * 2 ** len(self.widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class ModelParams:
    kind: str
    tensors: dict[str, Tensor]
    arch: ArchConfig | None = None
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self):
        return self.tensors.items()

    def astype(self, dtype) -> "ModelParams":
        tensors = {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad) for k, v in self.tensors.items()}
        return ModelParams(self.kind, tensors, self.arch, dict(self.meta))

    def copy(self) -> "ModelParams":
        return self.astype(next(iter(self.tensors.values())).dtype)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}


def param_count(params: ModelParams) -> int:
    return sum(int(t.data.size) for t in params.tensors.values())


# --------------------------------------------------------------------------
# parameter source
# --------------------------------------------------------------------------

class _Source:
    """Hands out parameters by name, creating them (seeded) while building."""

    def __init__(self, tensors: dict[str, Tensor], rng: np.random.Generator | None = None, dtype=np.float32):
        self.tensors = tensors
        self.rng = rng
        self.dtype = dtype

    def __call__(self, name: str, shape: tuple[int, ...], init: str) -> Tensor:
        t = self.tensors.get(name)
        if t is None:
            if self.rng is None:
                raise KeyError(f"missing parameter {name}")
            if init == "he":
                fan_in = int(np.prod(shape[1:]))
                data = self.rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
            elif init == "ones":
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
            t = self.tensors[name] = Tensor(data.astype(self.dtype), requires_grad=True)
        elif t.shape != tuple(shape):
            raise ValueError(f"parameter {name} has shape {t.shape}, architecture expects {shape}")
        return t


def _conv(p: _Source, name: str, x: Tensor, cout: int, k: int, stride: int = 1,
          groups: int = 1, bias: bool = True) -> Tensor:
    cin = x.shape[1]
    w = p(f"{name}.weight", (cout, cin // groups, k, k), "he")
    b = p(f"{name}.bias", (cout,), "zeros") if bias else None
    # "same" padding, except patchify convs (k == stride) which tile the input exactly
    padding = 0 if k == stride > 1 else (k - 1) // 2
    return F.conv2d(x, w, b, stride=stride, padding=padding, groups=groups)


def _gn(p: _Source, name: str, x: Tensor, groups: int) -> Tensor:
    c = x.shape[1]
    g = math.gcd(groups, c)
    return F.group_norm(x, g, p(f"{name}.weight", (c,), "ones"), p(f"{name}.bias", (c,), "zeros"))


def _ln(p: _Source, name: str, x: Tensor) -> Tensor:
    c = x.shape[1]
    return F.layer_norm_channels(x, p(f"{name}.weight", (c,), "ones"), p(f"{name}.bias", (c,), "zeros"))


def residual_block(p: _Source, name: str, x: Tensor, cfg: ArchConfig) -> Tensor:
    c = x.shape[1]
    h = _conv(p, f"{name}.conv1", x, c, 3, bias=False)
    h = F.relu(_gn(p, f"{name}.norm1", h, cfg.gn_groups))
    h = _conv(p, f"{name}.conv2", h, c, 3, bias=False)
    h = _gn(p, f"{name}.norm2", h, cfg.gn_groups)
    return F.relu(F.add(x, h))


def convnext_block(p: _Source, name: str, x: Tensor, cfg: ArchConfig) -> Tensor:
    c = x.shape[1]
    h = _conv(p, f"{name}.dwconv", x, c, cfg.dw_kernel, groups=c)
    h = _ln(p, f"{name}.norm", h)
    h = F.gelu(_conv(p, f"{name}.pw1", h, cfg.expansion * c, 1))
    h = _conv(p, f"{name}.pw2", h, c, 1)
    return F.add(x, h)


def _block(p, name, x, cfg):
    fn = residual_block if cfg.backbone == "residual" else convnext_block
    return fn(p, name, x, cfg)


def _transition(p: _Source, name: str, x: Tensor, cout: int, cfg: ArchConfig, k: int, stride: int) -> Tensor:
    """Channel change (optionally strided): conv + GN + ReLU, or LN + conv for ConvNeXt."""
    if cfg.backbone == "residual":
        h = _conv(p, f"{name}.conv", x, cout, k, stride=stride, bias=False)
        return F.relu(_gn(p, f"{name}.norm", h, cfg.gn_groups))
    if stride == 1:
        return _ln(p, f"{name}.norm", _conv(p, f"{name}.conv", x, cout, k))
    return _conv(p, f"{name}.conv", _ln(p, f"{name}.norm", x), cout, stride, stride=stride)


def _stem(p: _Source, x: Tensor, cfg: ArchConfig) -> Tensor:
    w0, s = cfg.widths[0], cfg.stem_stride
    if cfg.backbone == "residual":
        h = _conv(p, "stem.conv", x, w0, 3, stride=s, bias=False)
        return F.relu(_gn(p, "stem.norm", h, cfg.gn_groups))
    k = s if s > 1 else 1
    return _ln(p, "stem.norm", _conv(p, "stem.conv", x, w0, k, stride=s))


def _unet_body(p: _Source, x: Tensor, cfg: ArchConfig) -> Tensor:
    skips = []
    h = _stem(p, x, cfg)
    for i, width in enumerate(cfg.widths):
        if i > 0:
            h = _transition(p, f"enc{i}.down", h, width, cfg, 3 if cfg.backbone == "residual" else 2, 2)
        for j in range(cfg.blocks):
            h = _block(p, f"enc{i}.block{j}", h, cfg)
        skips.append(h)
    for i in range(len(cfg.widths) - 2, -1, -1):
        h = F.upsample2x_nearest(h)
        h = F.concat_channels(h, skips[i])
        h = _transition(p, f"dec{i}.fuse", h, cfg.widths[i], cfg, 1, 1)
        h = _block(p, f"dec{i}.block", h, cfg)
    if cfg.stem_stride > 1:
        h = F.upsample2x_nearest(h)
    h = F.concat_channels(h, x)
    h = _transition(p, "head.fuse", h, cfg.head_width, cfg, 1, 1)
    h = _block(p, "head.block", h, cfg)
    return _conv(p, "head.out", h, 1, 1)


def padded_size(n: int, multiple: int) -> int:
    return -(-n // multiple) * multiple


def unet_forward(x, params: ModelParams) -> Tensor:
    """(N, C, H, W) -> (N, 1, H, W). Mirror-pads to the architecture multiple and crops back."""
    cfg = params.arch
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if x.ndim == 3:
        x = Tensor(x.data[None]) if not x.requires_grad else F.reshape(x, (1, *x.shape))
    h, w = x.shape[-2:]
    mult = cfg.pad_multiple
    ph, pw = padded_size(h, mult), padded_size(w, mult)
    if (ph, pw) != (h, w):
        try:
            x = F.mirror_pad(x, ph, pw)
        except ValueError as exc:
            raise ValueError(f"image {h}x{w} too small to mirror-pad to {ph}x{pw}: {exc}") from None
    out = _unet_body(_Source(params.tensors), x, cfg)
    if (ph, pw) != (h, w):
        rs, cs = F.crop_window(ph, pw, h, w)
        out = F.getitem(out, (slice(None), slice(None), rs, cs))
    return out


def linear_forward(x, params: ModelParams) -> Tensor:
    """Shared per-pixel affine map: y = w . x + b."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if x.ndim == 3:
        x = Tensor(x.data[None])
    c = x.shape[1]
    w = params["weight"]
    if w.shape[1] != c:
        raise ValueError(f"model expects {w.shape[1]} channels, input has {c}")
    return F.conv2d(x, w, params["bias"])


def forward(params: ModelParams, x) -> Tensor:
    return linear_forward(x, params) if params.kind == "linear" else unet_forward(x, params)


def build_model(kind: str, arch: ArchConfig | None = None, seed: int = 0,
                in_channels: int = N_INPUT_CHANNELS, dtype=np.float32) -> ModelParams:
    """Fresh parameters: He fan-in normal conv weights, zero biases, unit norm scales."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    if kind == "linear":
        src = _Source(tensors, rng, dtype)
        src("weight", (1, in_channels, 1, 1), "he")
        src("bias", (1,), "zeros")
        return ModelParams(kind, tensors)
    arch = arch or ArchConfig()
    if arch.backbone != BACKBONE_OF_KIND[kind]:
        arch = ArchConfig(**{**arch.to_dict(), "backbone": BACKBONE_OF_KIND[kind]})
    arch.in_channels = in_channels
    size = arch.pad_multiple
    with no_grad():
        _unet_body(_Source(tensors, rng, dtype), Tensor(np.zeros((1, in_channels, size, size), dtype=dtype)), arch)
    return ModelParams(kind, tensors, arch)


def predictor(params: ModelParams) -> Callable[[np.ndarray], np.ndarray]:
    def run(x: np.ndarray) -> np.ndarray:
        with no_grad():
            return forward(params, x).data
    return run
