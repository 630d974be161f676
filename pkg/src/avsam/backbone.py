"""Dual-stream encoders: global audio embedding and multi-scale visual pyramid."""

from __future__ import annotations

import torch
from torch import nn

from .config import ModelConfig

# Fixed affine applied to log spectrograms before the conv stack; maps the
# silence floor (~-23) and tone peaks (~+5) into a sane activation range.
SPEC_SHIFT = 5.0
SPEC_SCALE = 10.0


def duplicate_audio(a: torch.Tensor, H: int, W: int) -> torch.Tensor:
    """Repeat a global audio embedding at every spatial position.

    Accepts (D,) or (B, D); returns (D, H, W) or (B, D, H, W).
    """
    if H < 1 or W < 1:
        raise ValueError(f"spatial dims must be positive, got ({H}, {W})")
    if a.dim() == 1:
        return a.view(-1, 1, 1).expand(a.shape[0], H, W)
    if a.dim() == 2:
        return a.view(a.shape[0], a.shape[1], 1, 1).expand(a.shape[0], a.shape[1], H, W)
    raise ValueError(f"expected (D,) or (B, D) audio embedding, got shape {tuple(a.shape)}")


class AudioEncoder(nn.Module):
    """Strided conv stack + global average pool + linear projection to (D,).

    Stands in for a lightweight spectrogram CNN; strides (4, 4, 2) keep the
    per-sample cost low on the 257x300 default input.
    """

    STRIDES = (4, 4, 2)
    KERNELS = (5, 3, 3)

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.audio_channels
        if len(widths) != len(self.STRIDES):
            raise ValueError(
                f"model.audio_channels needs {len(self.STRIDES)} entries, got {len(widths)}"
            )
        layers = []
        in_ch = 1
        for w, k, s in zip(widths, self.KERNELS, self.STRIDES):
            layers += [nn.Conv2d(in_ch, w, kernel_size=k, stride=s, padding=k // 2), nn.ReLU()]
            in_ch = w
        self.conv = nn.Sequential(*layers)
        self.proj = nn.Linear(in_ch, cfg.D)

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        """(F, T), (B, F, T) or (B, 1, F, T) log spectrogram -> (B, D) or (D,)."""
        squeeze = spec.dim() == 2
        if squeeze:
            spec = spec.unsqueeze(0)
        if spec.dim() == 3:
            spec = spec.unsqueeze(1)
        expected = (self.cfg.spec_bins, self.cfg.spec_frames)
        if tuple(spec.shape[-2:]) != expected:
            raise ValueError(
                f"spectrogram shape {tuple(spec.shape[-2:])} does not match config {expected}"
            )
        x = (spec + SPEC_SHIFT) / SPEC_SCALE
        x = self.conv(x)
        x = x.mean(dim=(2, 3))
        out = self.proj(x)
        return out.squeeze(0) if squeeze else out


class ImageEncoder(nn.Module):
    """Conv stem (/4) plus strided stage blocks; 1x1 projections per stage.

    Produces S feature maps of shared channel width D at image_size/4, /8, ...,
    finest first.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.D
        self.stem = nn.Sequential(
            nn.Conv2d(3, D, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(D, D, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
        )
        self.stage_blocks = nn.ModuleList(
            nn.Sequential(nn.Conv2d(D, D, kernel_size=3, stride=2, padding=1), nn.ReLU())
            for _ in range(cfg.S - 1)
        )
        self.stage_proj = nn.ModuleList(nn.Conv2d(D, D, kernel_size=1) for _ in range(cfg.S))

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        """(3, H, W) or (B, 3, H, W) -> list of S stage tensors, coarsest last."""
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        if tuple(image.shape[-2:]) != (self.cfg.image_size, self.cfg.image_size):
            raise ValueError(
                f"image shape {tuple(image.shape[-2:])} does not match configured "
                f"size {self.cfg.image_size}"
            )
        x = self.stem(image)
        trunk = [x]
        for block in self.stage_blocks:
            x = block(x)
            trunk.append(x)
        stages = [proj(t) for proj, t in zip(self.stage_proj, trunk)]
        if squeeze:
            stages = [s.squeeze(0) for s in stages]
        return stages


def audio_encoder_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; asserted against the module in tests."""
    total = 0
    in_ch = 1
    for w, k in zip(cfg.audio_channels, AudioEncoder.KERNELS):
        total += w * in_ch * k * k + w
        in_ch = w
    total += cfg.D * in_ch + cfg.D
    return total


def image_encoder_param_count(cfg: ModelConfig) -> int:
    D = cfg.D
    conv3 = lambda cin, cout: cout * cin * 9 + cout
    total = conv3(3, D) + conv3(D, D)  # stem
    total += (cfg.S - 1) * conv3(D, D)  # stage blocks
    total += cfg.S * (D * D + D)  # 1x1 projections
    return total
