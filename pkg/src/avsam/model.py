"""The assembled audio-visual segmentation model.

Submodule attribute names double as the canonical parameter-name prefixes used
by freeze plans and checkpoints: audio_encoder, image_encoder, fusion,
prompt_encoder, mask_decoder.
"""

from __future__ import annotations

import torch
from torch import nn

from .backbone import AudioEncoder, ImageEncoder
from .config import ModelConfig
from .fusion import PyramidFusion
from .seg_head import MaskDecoder, PromptEncoder, PromptSet

FREEZE_MODULES = (
    "image_encoder",
    "prompt_encoder",
    "mask_decoder",
    "fusion",
    "audio_encoder",
)


class AvSegModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.audio_encoder = AudioEncoder(cfg)
        self.image_encoder = ImageEncoder(cfg)
        self.fusion = PyramidFusion(cfg)
        self.prompt_encoder = PromptEncoder(cfg)
        self.mask_decoder = MaskDecoder(cfg)

    def forward(
        self,
        spec: torch.Tensor,
        image: torch.Tensor,
        prompts: PromptSet | None = None,
        zero_audio: bool = False,
    ) -> torch.Tensor:
        """(B, F, T) spectrograms + (B, 3, H, W) images -> (B, H, W) mask logits.

        ``zero_audio`` replaces the audio embedding with zeros at inference time
        (the audio-ablated control); everything downstream runs unchanged.
        """
        a = self.audio_encoder(spec)
        if zero_audio:
            a = torch.zeros_like(a)
        pyramid = self.image_encoder(image)
        fused = self.fusion(pyramid, a)
        sparse, dense = self.prompt_encoder(prompts)
        return self.mask_decoder(fused, sparse, dense)


def build_model(cfg: ModelConfig) -> AvSegModel:
    """Construct a model with seeded, reproducible initialization."""
    torch.manual_seed(cfg.seed)
    return AvSegModel(cfg)


def module_of(param_name: str) -> str:
    """Map a canonical parameter name to its freeze-plan module."""
    head = param_name.split(".", 1)[0]
    if head not in FREEZE_MODULES:
        raise ValueError(f"parameter {param_name!r} belongs to no known module")
    return head
