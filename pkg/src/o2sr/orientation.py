"""Directional strip statistics of feature maps.

All functions accept tensors shaped ``(..., C, H, W)``; leading batch
dimensions pass through untouched.

For each channel the width-pooled strip (one mean per row) and the
height-pooled strip (one mean per column) are reduced to their population
variance. The vertical statistic is large when rows differ from each other
(horizontal structures); the horizontal statistic reacts to columns that
differ (vertical structures).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeError


def _check_map(z: torch.Tensor):
    if z.dim() < 3:
        raise ShapeError(f"feature map must be (..., C, H, W), got shape {tuple(z.shape)}")


def strip_mean_width(z: torch.Tensor) -> torch.Tensor:
    """Mean over the width axis: ``(..., C, H, W) -> (..., C, H)``."""
    _check_map(z)
    return z.mean(dim=-1)


def strip_mean_height(z: torch.Tensor) -> torch.Tensor:
    """Mean over the height axis: ``(..., C, H, W) -> (..., C, W)``."""
    _check_map(z)
    return z.mean(dim=-2)


def _population_var(strip: torch.Tensor) -> torch.Tensor:
    centered = strip - strip.mean(dim=-1, keepdim=True)
    return (centered * centered).mean(dim=-1)


def orientation_v(z: torch.Tensor) -> torch.Tensor:
    return _population_var(strip_mean_width(z))


def orientation_h(z: torch.Tensor) -> torch.Tensor:
    return _population_var(strip_mean_height(z))


@dataclass
class OrientationDescriptor:
    v_stats: torch.Tensor
    h_stats: torch.Tensor

    @property
    def gate(self) -> torch.Tensor:
        return self.v_stats + self.h_stats


def orientation_operator(z: torch.Tensor) -> OrientationDescriptor:
    return OrientationDescriptor(orientation_v(z), orientation_h(z))


def modulate(m: torch.Tensor, desc: OrientationDescriptor) -> torch.Tensor:
    """Scale each channel of ``m`` by ``v_stats + h_stats``."""
    _check_map(m)
    gate = desc.gate
    if gate.shape != m.shape[:-2]:
        raise ShapeError(
            f"descriptor shape {tuple(gate.shape)} does not match map channels {tuple(m.shape[:-2])}"
        )
    return m * gate[..., None, None]
