"""Multi-scale orientation-aware feature fusion.

Three parallel branches (3x3 conv, 5x5 conv, shift conv) are each gated by
their own orientation descriptor, projected by a per-branch 1x1 conv and
squashed by a sigmoid. In ``sum`` mode the results are added to the block
input; the ``concat_*`` modes reproduce the ablation alternatives.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError
from .orientation import modulate, orientation_operator

BRANCHES = ("conv3", "conv5", "shift")
FUSION_MODES = ("sum", "concat_all", "concat_all_skip", "concat_3_5")
SHIFT_GROUPS = ("left", "right", "up", "down", "identity")


def conv2d_feature(m: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None):
    """Cross-correlation with reflect padding so that H x W is preserved.

    ``m`` is ``(C, H, W)`` or ``(B, C, H, W)``.
    """
    squeeze = m.dim() == 3
    if squeeze:
        m = m.unsqueeze(0)
    if m.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv expects {weight.shape[1]} input channels, got {m.shape[1]}")
    kh, kw = weight.shape[-2:]
    ph, pw = kh // 2, kw // 2
    if ph or pw:
        m = F.pad(m, (pw, pw, ph, ph), mode="reflect")
    out = F.conv2d(m, weight, bias)
    return out.squeeze(0) if squeeze else out


class Conv(nn.Module):
    """Square conv with reflect padding; thin wrapper over ``conv2d_feature``."""

    def __init__(self, in_ch, out_ch, k):
        super().__init__()
        proto = nn.Conv2d(in_ch, out_ch, k)
        self.weight = proto.weight
        self.bias = proto.bias

    def forward(self, x):
        return conv2d_feature(x, self.weight, self.bias)


def shift_groups(channels: int):
    """Channel slices for the left/right/up/down/identity groups, split as
    evenly as possible with earlier groups taking the remainder."""
    base, extra = divmod(channels, len(SHIFT_GROUPS))
    out, start = [], 0
    for g in range(len(SHIFT_GROUPS)):
        n = base + (1 if g < extra else 0)
        out.append(slice(start, start + n))
        start += n
    return out


def spatial_shift(m: torch.Tensor) -> torch.Tensor:
    """Shift channel groups by one pixel with zero fill. "left" moves content
    from column j+1 to column j."""
    out = torch.zeros_like(m)
    left, right, up, down, ident = shift_groups(m.shape[-3])
    out[..., left, :, :-1] = m[..., left, :, 1:]
    out[..., right, :, 1:] = m[..., right, :, :-1]
    out[..., up, :-1, :] = m[..., up, 1:, :]
    out[..., down, 1:, :] = m[..., down, :-1, :]
    out[..., ident, :, :] = m[..., ident, :, :]
    return out


def shift_conv(m: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None):
    if weight.shape[-2:] != (1, 1):
        raise ShapeError("shift conv uses a pointwise (1x1) kernel")
    return conv2d_feature(spatial_shift(m), weight, bias)


class ShiftConv(Conv):
    def __init__(self, in_ch, out_ch):
        super().__init__(in_ch, out_ch, 1)

    def forward(self, x):
        return shift_conv(x, self.weight, self.bias)


def orientation_gate(m: torch.Tensor) -> torch.Tensor:
    return modulate(m, orientation_operator(m))


class FusionBlock(nn.Module):
    """One fusion block over a ``(B, C, H, W)`` map.

    Args:
        channels: common channel count C.
        branches: subset of ``("conv3", "conv5", "shift")``.
        mode: one of ``FUSION_MODES``. ``concat_3_5`` always uses exactly
            the 3x3 and 5x5 branches.
    """

    def __init__(self, channels: int, branches=BRANCHES, mode: str = "sum"):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ConfigurationError(f"unknown fusion mode {mode!r}")
        if mode == "concat_3_5":
            branches = ("conv3", "conv5")
        unknown = set(branches) - set(BRANCHES)
        if unknown:
            raise ConfigurationError(f"unknown fusion branches {sorted(unknown)}")
        branches = tuple(b for b in BRANCHES if b in set(branches))
        if not branches:
            raise ConfigurationError("fusion block needs at least one branch")
        self.channels = channels
        self.branches = branches
        self.mode = mode

        self.convs = nn.ModuleDict()
        for b in branches:
            if b == "conv3":
                self.convs[b] = Conv(channels, channels, 3)
            elif b == "conv5":
                self.convs[b] = Conv(channels, channels, 5)
            else:
                self.convs[b] = ShiftConv(channels, channels)
        if mode == "sum":
            self.proj = nn.ModuleDict({b: Conv(channels, channels, 1) for b in branches})
        else:
            self.proj = nn.ModuleDict({"cat": Conv(channels * len(branches), channels, 1)})

    def forward(self, z: torch.Tensor, x: torch.Tensor | None = None) -> torch.Tensor:
        x = z if x is None else x
        if x.shape != z.shape:
            raise ShapeError(f"fusion inputs differ in shape: {tuple(z.shape)} vs {tuple(x.shape)}")
        gated = [orientation_gate(self.convs[b](z)) for b in self.branches]
        if self.mode == "sum":
            out = x
            for b, g in zip(self.branches, gated):
                out = out + torch.sigmoid(self.proj[b](g))
            return out
        fused = torch.sigmoid(self.proj["cat"](torch.cat(gated, dim=-3)))
        if self.mode == "concat_all_skip":
            return x + fused
        return fused


def fuse(z, x, block: FusionBlock):
    """Functional entry point: ``block`` holds the branch parameters."""
    return block(z, x)
