"""Pixel-wise audio-visual fusion.

Each stage updates visual features v with a non-local residual driven by the
spatially duplicated audio embedding a_hat:

    z = v + mu( theta(v) . phi(a_hat)^T / (H*W) . omega(v) )

where theta/phi/omega/mu are per-stage 1x1 projections, pixels index the rows
of the flattened operands, and the (HW x HW) similarity matrix S is divided by
H*W at construction. Because a_hat is spatially constant, every row of S is a
copy of the same per-pixel gate (rank-1 structure); mu is zero-initialized so
a stage starts as the identity.
"""

from __future__ import annotations

import torch
from torch import nn

from .backbone import duplicate_audio
from .config import ModelConfig


class FusionStage(nn.Module):
    def __init__(self, D: int, softmax: bool = False):
        super().__init__()
        self.D = D
        self.softmax = softmax
        self.theta = nn.Conv2d(D, D, kernel_size=1)
        self.phi = nn.Conv2d(D, D, kernel_size=1)
        self.omega = nn.Conv2d(D, D, kernel_size=1)
        self.mu = nn.Conv2d(D, D, kernel_size=1)
        nn.init.zeros_(self.mu.weight)
        nn.init.zeros_(self.mu.bias)

    def forward(
        self, v: torch.Tensor, a: torch.Tensor, return_similarity: bool = False
    ):
        """(D, H, W) + (D,) -> (D, H, W); batched (B, ...) forms likewise."""
        squeeze = v.dim() == 3
        if squeeze:
            v = v.unsqueeze(0)
            if a.dim() != 1:
                raise ValueError("unbatched visual input needs an unbatched (D,) audio input")
            a = a.unsqueeze(0)
        B, D, H, W = v.shape
        if D != self.D or a.shape != (B, D):
            raise ValueError(
                f"dimension mismatch: v {tuple(v.shape)}, a {tuple(a.shape)}, D={self.D}"
            )
        hw = H * W
        a_hat = duplicate_audio(a, H, W)
        q = self.theta(v).flatten(2).transpose(1, 2)  # (B, HW, D) pixel rows
        k = self.phi(a_hat).flatten(2).transpose(1, 2)
        val = self.omega(v).flatten(2).transpose(1, 2)
        sim = torch.bmm(q, k.transpose(1, 2)) / hw  # (B, HW, HW)
        if self.softmax:
            sim = torch.softmax(sim, dim=-1)
        mixed = torch.bmm(sim, val)  # (B, HW, D)
        update = self.mu(mixed.transpose(1, 2).reshape(B, D, H, W))
        out = v + update
        if squeeze:
            out = out.squeeze(0)
            sim = sim.squeeze(0)
        return (out, sim) if return_similarity else out


class PyramidFusion(nn.Module):
    """Applies an independent FusionStage to each pyramid stage."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.stages = nn.ModuleList(
            FusionStage(cfg.D, softmax=cfg.fusion_softmax) for _ in range(cfg.S)
        )

    def forward(self, pyramid: list[torch.Tensor], a: torch.Tensor) -> list[torch.Tensor]:
        if len(pyramid) != len(self.stages):
            raise ValueError(
                f"pyramid has {len(pyramid)} stages, fusion configured for {len(self.stages)}"
            )
        return [stage(v, a) for stage, v in zip(self.stages, pyramid)]


def fusion_param_count(cfg: ModelConfig) -> int:
    return cfg.S * 4 * (cfg.D * cfg.D + cfg.D)
