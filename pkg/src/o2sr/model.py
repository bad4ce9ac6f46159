"""O2Former: conv stem, orientation-fusion encoder, window-attention decoder,
long skip and pixel-shuffle upsampler for single-channel images."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError
from .fusion import BRANCHES, FUSION_MODES, Conv, FusionBlock
from .imaging import UNIT, Image, reflect_index

ENCODER_VARIANTS = ("none", "plain_cnn", "attention", "ours")
SCALES = (2, 4)


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 4
    channels: int = 32
    encoder_variant: str = "ours"
    fusion_branches: tuple = BRANCHES
    fusion_mode: str = "sum"
    fusion_blocks: int = 1
    n_blocks: int = 4
    n_heads: int = 4
    window_size: int = 8
    mlp_ratio: float = 2.0
    skip_enabled: bool = True
    relative_bias: bool = False
    attention_reduction: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fusion_branches", tuple(self.fusion_branches))
        if self.scale not in SCALES:
            raise ConfigurationError(f"model.scale must be one of {SCALES}, got {self.scale}")
        if self.channels < 1:
            raise ConfigurationError(f"model.channels must be positive, got {self.channels}")
        if self.n_heads < 1 or self.channels % self.n_heads:
            raise ConfigurationError(
                f"model.channels ({self.channels}) must be divisible by model.n_heads ({self.n_heads})"
            )
        if self.encoder_variant not in ENCODER_VARIANTS:
            raise ConfigurationError(f"unknown model.encoder_variant {self.encoder_variant!r}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(f"unknown model.fusion_mode {self.fusion_mode!r}")
        if not self.fusion_branches or set(self.fusion_branches) - set(BRANCHES):
            raise ConfigurationError(f"bad model.fusion_branches {self.fusion_branches!r}")
        if self.window_size < 1 or self.n_blocks < 0 or self.fusion_blocks < 1:
            raise ConfigurationError("window_size, n_blocks and fusion_blocks must be positive")
        if self.mlp_ratio <= 0 or self.attention_reduction < 1:
            raise ConfigurationError("mlp_ratio and attention_reduction must be positive")

    @property
    def mlp_hidden(self) -> int:
        return max(1, int(round(self.channels * self.mlp_ratio)))

    @property
    def attention_hidden(self) -> int:
        return max(1, self.channels // self.attention_reduction)

    @property
    def active_branches(self) -> tuple:
        if self.fusion_mode == "concat_3_5":
            return ("conv3", "conv5")
        return tuple(b for b in BRANCHES if b in self.fusion_branches)

    def replace(self, **changes) -> "ModelConfig":
        d = asdict(self)
        d.update(changes)
        return ModelConfig(**d)


def mirror_pad(x: torch.Tensor, bottom: int, right: int) -> torch.Tensor:
    """Reflect-pad the last two dims on the bottom/right edge. Works for pads
    of any size, reflecting repeatedly when the pad exceeds the image."""
    h, w = x.shape[-2:]
    if bottom:
        rows = torch.as_tensor(reflect_index(np.arange(h + bottom), h), device=x.device)
        x = x.index_select(-2, rows)
    if right:
        cols = torch.as_tensor(reflect_index(np.arange(w + right), w), device=x.device)
        x = x.index_select(-1, cols)
    return x


def pixel_shuffle(m: torch.Tensor, d: int) -> torch.Tensor:
    """Depth-to-space: ``out[c, h*d + i, w*d + j] = in[c*d*d + i*d + j, h, w]``."""
    *lead, cin, h, w = m.shape
    if cin % (d * d):
        raise ShapeError(f"{cin} channels not divisible by {d}^2")
    c = cin // (d * d)
    out = m.reshape(*lead, c, d, d, h, w)
    n = len(lead)
    out = out.permute(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return out.reshape(*lead, c, h * d, w * d)


def pixel_unshuffle(m: torch.Tensor, d: int) -> torch.Tensor:
    """Inverse of ``pixel_shuffle``."""
    *lead, c, hd, wd = m.shape
    if hd % d or wd % d:
        raise ShapeError(f"spatial dims {hd}x{wd} not divisible by {d}")
    h, w = hd // d, wd // d
    n = len(lead)
    out = m.reshape(*lead, c, h, d, w, d)
    out = out.permute(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return out.reshape(*lead, c * d * d, h, w)


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nWindows, ws*ws, C), windows in row-major order."""
    b, h, w, c = x.shape
    x = x.view(b, h // ws, ws, w // ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, c)


def window_reverse(windows: torch.Tensor, ws: int, b: int, h: int, w: int) -> torch.Tensor:
    c = windows.shape[-1]
    x = windows.view(b, h // ws, w // ws, ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


def relative_position_index(ws: int) -> torch.Tensor:
    coords = torch.stack(torch.meshgrid(torch.arange(ws), torch.arange(ws), indexing="ij"))
    flat = coords.flatten(1)
    rel = (flat[:, :, None] - flat[:, None, :]).permute(1, 2, 0) + (ws - 1)
    return rel[..., 0] * (2 * ws - 1) + rel[..., 1]


def window_attention(
    m: torch.Tensor,
    qkv_weight: torch.Tensor,
    qkv_bias: torch.Tensor | None,
    proj_weight: torch.Tensor,
    proj_bias: torch.Tensor | None,
    n_heads: int,
    window_size: int,
    rel_bias: torch.Tensor | None = None,
    return_attn: bool = False,
):
    """Multi-head self-attention inside non-overlapping windows.

    Args:
        m: feature map ``(B, C, H, W)``; H and W must be multiples of
            ``window_size``.
        qkv_weight: ``(3C, C)`` stacked query/key/value projection.
        rel_bias: optional ``(n_heads, N, N)`` additive logit bias with
            ``N = window_size ** 2``.

    Returns:
        ``(B, C, H, W)`` map, plus the ``(B * nWindows, heads, N, N)``
        attention weights when ``return_attn`` is set.
    """
    b, c, h, w = m.shape
    ws = window_size
    if h % ws or w % ws:
        raise ShapeError(f"map {h}x{w} not divisible by window size {ws}")
    if c % n_heads:
        raise ConfigurationError(f"{c} channels not divisible by {n_heads} heads")
    dh = c // n_heads
    tokens = window_partition(m.permute(0, 2, 3, 1), ws)
    nwb, n, _ = tokens.shape
    qkv = F.linear(tokens, qkv_weight, qkv_bias).reshape(nwb, n, 3, n_heads, dh)
    q, k, v = qkv.permute(2, 0, 3, 1, 4)
    logits = (q @ k.transpose(-2, -1)) / math.sqrt(dh)
    if rel_bias is not None:
        logits = logits + rel_bias.unsqueeze(0)
    attn = logits.softmax(dim=-1)
    out = (attn @ v).transpose(1, 2).reshape(nwb, n, c)
    out = F.linear(out, proj_weight, proj_bias)
    out = window_reverse(out, ws, b, h, w).permute(0, 3, 1, 2)
    return (out, attn) if return_attn else out


class WindowAttention(nn.Module):
    def __init__(self, dim, n_heads, window_size, relative_bias=False):
        super().__init__()
        self.n_heads = n_heads
        self.window_size = window_size
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        if relative_bias:
            self.rel_bias_table = nn.Parameter(torch.zeros((2 * window_size - 1) ** 2, n_heads))
            self.register_buffer("rel_index", relative_position_index(window_size), persistent=False)
        else:
            self.rel_bias_table = None

    def relative_bias(self):
        if self.rel_bias_table is None:
            return None
        n = self.window_size**2
        return self.rel_bias_table[self.rel_index.reshape(-1)].reshape(n, n, -1).permute(2, 0, 1)

    def forward(self, m):
        return window_attention(
            m, self.qkv.weight, self.qkv.bias, self.proj.weight, self.proj.bias,
            self.n_heads, self.window_size, self.relative_bias(),
        )


class MLP(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm block: x + WMSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim, n_heads, window_size, hidden, relative_bias=False):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, n_heads, window_size, relative_bias)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, hidden)

    def forward(self, x):
        # x: (B, C, H, W); LayerNorm and MLP act on the channel axis
        t = x.permute(0, 2, 3, 1)
        t = t + self.attn(self.norm1(t).permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        t = t + self.mlp(self.norm2(t))
        return t.permute(0, 3, 1, 2)


class PlainCNNEncoder(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = Conv(channels, channels, 3)
        self.conv2 = Conv(channels, channels, 3)

    def forward(self, x):
        return self.conv2(F.gelu(self.conv1(x)))


class ChannelAttentionEncoder(nn.Module):
    """Squeeze-style gate: global average pool, two 1x1 convs, sigmoid."""

    def __init__(self, channels, hidden):
        super().__init__()
        self.reduce = Conv(channels, hidden, 1)
        self.expand = Conv(hidden, channels, 1)

    def forward(self, x):
        s = x.mean(dim=(-2, -1), keepdim=True)
        return x * torch.sigmoid(self.expand(F.relu(self.reduce(s))))


class OrientationEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            FusionBlock(cfg.channels, cfg.fusion_branches, cfg.fusion_mode)
            for _ in range(cfg.fusion_blocks)
        )

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


def icnr_(conv: Conv, d: int) -> None:
    """ICNR init: the d*d sub-pixel outputs of each channel start with the
    same kernel, so the shuffled output has no checkerboard at step 0."""
    with torch.no_grad():
        c = conv.weight.shape[0] // (d * d)
        conv.weight.copy_(conv.weight[:c].repeat_interleave(d * d, dim=0))
        conv.bias.copy_(conv.bias[:c].repeat_interleave(d * d))


class O2Former(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.stem = Conv(1, c, 3)
        if cfg.encoder_variant == "none":
            self.encoder = nn.Identity()
        elif cfg.encoder_variant == "plain_cnn":
            self.encoder = PlainCNNEncoder(c)
        elif cfg.encoder_variant == "attention":
            self.encoder = ChannelAttentionEncoder(c, cfg.attention_hidden)
        else:
            self.encoder = OrientationEncoder(cfg)
        self.decoder = nn.ModuleList(
            TransformerBlock(c, cfg.n_heads, cfg.window_size, cfg.mlp_hidden, cfg.relative_bias)
            for _ in range(cfg.n_blocks)
        )
        self.upsample = Conv(c, c * cfg.scale**2, 3)
        icnr_(self.upsample, cfg.scale)
        self.tail = Conv(c, 1, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, 1, h, w)`` LR batch to ``(B, 1, h*d, w*d)`` SR batch (unclipped)."""
        if x.dim() != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected (B, 1, h, w) input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        ws, d = self.cfg.window_size, self.cfg.scale
        x = mirror_pad(x, (-h) % ws, (-w) % ws)
        shallow = self.stem(x)
        feat = self.encoder(shallow)
        for block in self.decoder:
            feat = block(feat)
        if self.cfg.skip_enabled:
            feat = feat + shallow
        out = self.tail(pixel_shuffle(self.upsample(feat), d))
        return out[..., : h * d, : w * d]


def _conv_shapes(prefix, cin, cout, k):
    return [(f"{prefix}.weight", (cout, cin, k, k)), (f"{prefix}.bias", (cout,))]


def _encoder_chart(cfg: ModelConfig):
    c = cfg.channels
    if cfg.encoder_variant == "none":
        return []
    if cfg.encoder_variant == "plain_cnn":
        return _conv_shapes("encoder.conv1", c, c, 3) + _conv_shapes("encoder.conv2", c, c, 3)
    if cfg.encoder_variant == "attention":
        r = cfg.attention_hidden
        return _conv_shapes("encoder.reduce", c, r, 1) + _conv_shapes("encoder.expand", r, c, 1)
    chart = []
    branches = cfg.active_branches
    for i in range(cfg.fusion_blocks):
        p = f"encoder.blocks.{i}"
        for b in branches:
            k = {"conv3": 3, "conv5": 5, "shift": 1}[b]
            chart += _conv_shapes(f"{p}.convs.{b}", c, c, k)
        if cfg.fusion_mode == "sum":
            for b in branches:
                chart += _conv_shapes(f"{p}.proj.{b}", c, c, 1)
        else:
            chart += _conv_shapes(f"{p}.proj.cat", c * len(branches), c, 1)
    return chart


def shape_chart(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    """Closed-form name -> shape map of every learnable tensor, in
    registration order. Independent of module construction, so it can be
    used to check ``build_model``."""
    c, d = cfg.channels, cfg.scale
    chart = _conv_shapes("stem", 1, c, 3) + _encoder_chart(cfg)
    hidden = cfg.mlp_hidden
    for i in range(cfg.n_blocks):
        p = f"decoder.{i}"
        chart += [(f"{p}.norm1.weight", (c,)), (f"{p}.norm1.bias", (c,))]
        if cfg.relative_bias:
            chart += [(f"{p}.attn.rel_bias_table", ((2 * cfg.window_size - 1) ** 2, cfg.n_heads))]
        chart += [(f"{p}.attn.qkv.weight", (3 * c, c)), (f"{p}.attn.qkv.bias", (3 * c,))]
        chart += [(f"{p}.attn.proj.weight", (c, c)), (f"{p}.attn.proj.bias", (c,))]
        chart += [(f"{p}.norm2.weight", (c,)), (f"{p}.norm2.bias", (c,))]
        chart += [(f"{p}.mlp.fc1.weight", (hidden, c)), (f"{p}.mlp.fc1.bias", (hidden,))]
        chart += [(f"{p}.mlp.fc2.weight", (c, hidden)), (f"{p}.mlp.fc2.bias", (c,))]
    chart += _conv_shapes("upsample", c, c * d * d, 3) + _conv_shapes("tail", c, 1, 3)
    return OrderedDict(chart)


def parameter_count(chart) -> int:
    return sum(math.prod(s) for s in chart.values())


def build_model(cfg: ModelConfig, dtype=torch.float32) -> O2Former:
    """Instantiate and initialize the network; identical seeds give
    bitwise-identical parameters without touching the global RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = O2Former(cfg)
    return model.to(dtype)


def super_resolve(model: O2Former, lr: Image) -> Image:
    """Run the model on a single-channel image; output is clipped to [0, 1]."""
    if lr.channels != 1:
        raise ShapeError(f"{lr.id or 'input'}: model expects a single-channel image, got {lr.channels}")
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(lr.to_unit().pixels, dtype=dtype)[None, None]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            y = model(x)[0, 0].double().numpy()
    finally:
        model.train(was_training)
    if not np.all(np.isfinite(y)):
        raise ShapeError(f"{lr.id or 'input'}: model produced non-finite output")
    return Image(np.clip(y, 0.0, 1.0), UNIT, lr.id)


CONFIG_FIELDS = tuple(f.name for f in fields(ModelConfig))
