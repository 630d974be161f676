"""Promptable segmentation head: sparse/dense prompt encoding, a small two-way
transformer mask decoder, and the binary cross entropy objective.

Point/box prompts become tokens of a sinusoidal positional code plus a learned
type embedding; an empty prompt set yields a single learned default token. The
decoder runs token self-attention, token->pixel and pixel->token cross-attention
over the coarsest fused stage, upsamples with transposed convs and skip
connections from the finer fused stages, and reads out per-pixel logits as the
dot product between the mask token and the upsampled pixel embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig


class SegHeadError(ValueError):
    """Bad prompts, shape mismatches, non-binary supervision."""


@dataclass
class PromptSet:
    points: list[tuple[float, float, str]] = field(default_factory=list)  # (x, y, "fg"/"bg")
    boxes: list[tuple[float, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        for x, y, label in self.points:
            if label not in ("fg", "bg"):
                raise SegHeadError(f"point label must be 'fg' or 'bg', got {label!r}")

    @property
    def is_empty(self) -> bool:
        return not self.points and not self.boxes

    def validate_bounds(self, image_size: int) -> None:
        for x, y, _ in self.points:
            if not (0 <= x <= image_size and 0 <= y <= image_size):
                raise SegHeadError(f"point ({x}, {y}) outside image bounds [0, {image_size}]")
        for x0, y0, x1, y1 in self.boxes:
            for c in (x0, y0, x1, y1):
                if not (0 <= c <= image_size):
                    raise SegHeadError(f"box corner {c} outside image bounds [0, {image_size}]")


def positional_encoding(nx: float, ny: float, D: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal code of normalized coords in [0, 1].

    Layout: for q = D//4 bands with angular frequency 2*pi*2^i,
    [sin(w_i nx), cos(w_i nx)]_i then [sin(w_i ny), cos(w_i ny)]_i.
    """
    q = D // 4
    out = torch.empty(D, dtype=dtype)
    for i in range(q):
        w = 2.0 * math.pi * (2.0**i)
        out[2 * i] = math.sin(w * nx)
        out[2 * i + 1] = math.cos(w * nx)
        out[2 * q + 2 * i] = math.sin(w * ny)
        out[2 * q + 2 * i + 1] = math.cos(w * ny)
    return out


class PromptEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.D
        self.label_embed = nn.Parameter(torch.empty(2, D))  # fg, bg
        self.corner_embed = nn.Parameter(torch.empty(2, D))  # top-left, bottom-right
        self.no_prompt_token = nn.Parameter(torch.empty(1, D))
        self.dense_vec = nn.Parameter(torch.empty(D))
        for p in (self.label_embed, self.corner_embed, self.no_prompt_token):
            nn.init.normal_(p, std=0.02)
        nn.init.normal_(self.dense_vec, std=0.02)

    def forward(self, prompts: PromptSet | None) -> tuple[torch.Tensor, torch.Tensor]:
        """PromptSet -> (sparse (K, D), dense (D, Hc, Wc))."""
        cfg = self.cfg
        prompts = prompts or PromptSet()
        prompts.validate_bounds(cfg.image_size)
        dtype = self.dense_vec.dtype
        tokens = []
        for x, y, label in prompts.points:
            pe = positional_encoding(x / cfg.image_size, y / cfg.image_size, cfg.D, dtype)
            offset = self.label_embed[0] if label == "fg" else self.label_embed[1]
            tokens.append(pe.to(self.dense_vec.device) + offset)
        for x0, y0, x1, y1 in prompts.boxes:
            for i, (cx, cy) in enumerate(((x0, y0), (x1, y1))):
                pe = positional_encoding(cx / cfg.image_size, cy / cfg.image_size, cfg.D, dtype)
                tokens.append(pe.to(self.dense_vec.device) + self.corner_embed[i])
        sparse = torch.stack(tokens) if tokens else self.no_prompt_token
        coarse = cfg.stage_sizes[-1]
        dense = self.dense_vec.view(-1, 1, 1).expand(cfg.D, coarse, coarse)
        return sparse, dense


class Attention(nn.Module):
    """Plain multi-head attention; explicit so it runs identically in f32/f64."""

    def __init__(self, D: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = D // heads
        self.q_proj = nn.Linear(D, D)
        self.k_proj = nn.Linear(D, D)
        self.v_proj = nn.Linear(D, D)
        self.out_proj = nn.Linear(D, D)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        B, Lq, D = q.shape
        Lk = k.shape[1]
        h, hd = self.heads, self.head_dim
        qh = self.q_proj(q).view(B, Lq, h, hd).transpose(1, 2)
        kh = self.k_proj(k).view(B, Lk, h, hd).transpose(1, 2)
        vh = self.v_proj(v).view(B, Lk, h, hd).transpose(1, 2)
        attn = torch.softmax(qh @ kh.transpose(-2, -1) / math.sqrt(hd), dim=-1)
        out = (attn @ vh).transpose(1, 2).reshape(B, Lq, D)
        return self.out_proj(out)


class DecoderBlock(nn.Module):
    def __init__(self, D: int, heads: int):
        super().__init__()
        self.self_attn = Attention(D, heads)
        self.cross_t2p = Attention(D, heads)
        self.cross_p2t = Attention(D, heads)
        self.mlp = nn.Sequential(nn.Linear(D, D * 4), nn.ReLU(), nn.Linear(D * 4, D))
        self.norm1 = nn.LayerNorm(D)
        self.norm2 = nn.LayerNorm(D)
        self.norm3 = nn.LayerNorm(D)
        self.norm4 = nn.LayerNorm(D)

    def forward(self, tokens, pixels, pos):
        tokens = self.norm1(tokens + self.self_attn(tokens, tokens, tokens))
        tokens = self.norm2(tokens + self.cross_t2p(tokens, pixels + pos, pixels))
        tokens = self.norm3(tokens + self.mlp(tokens))
        pixels = self.norm4(pixels + self.cross_p2t(pixels + pos, tokens, tokens))
        return tokens, pixels


class MaskDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.D
        coarse = cfg.stage_sizes[-1]
        self.mask_token = nn.Parameter(torch.empty(1, D))
        nn.init.normal_(self.mask_token, std=0.02)
        self.pixel_pos = nn.Parameter(torch.zeros(D, coarse, coarse))
        self.blocks = nn.ModuleList(
            DecoderBlock(D, cfg.decoder_heads) for _ in range(cfg.decoder_blocks)
        )
        # One transposed conv per finer stage, walking coarsest -> finest.
        self.upsample = nn.ModuleList(
            nn.ConvTranspose2d(D, D, kernel_size=2, stride=2) for _ in range(cfg.S - 1)
        )
        self.skip_proj = nn.ModuleList(nn.Conv2d(D, D, kernel_size=1) for _ in range(cfg.S - 1))
        self.out_proj = nn.Conv2d(D, D, kernel_size=1)
        self.token_mlp = nn.Sequential(nn.Linear(D, D), nn.ReLU(), nn.Linear(D, D))

    def forward(
        self,
        fused: list[torch.Tensor],
        sparse: torch.Tensor,
        dense: torch.Tensor,
    ) -> torch.Tensor:
        """Fused pyramid (+ prompt embeddings) -> (B, H, W) logits.

        ``fused`` stages are (B, D, Hs, Ws) coarsest last; ``sparse`` is (K, D)
        shared across the batch or (B, K, D); ``dense`` is (D, Hc, Wc).
        """
        cfg = self.cfg
        if len(fused) != cfg.S:
            raise SegHeadError(f"expected {cfg.S} fused stages, got {len(fused)}")
        coarse = fused[-1]
        squeeze = coarse.dim() == 3
        if squeeze:
            fused = [f.unsqueeze(0) for f in fused]
            coarse = fused[-1]
        B, D, Hc, Wc = coarse.shape
        if D != cfg.D:
            raise SegHeadError(f"channel dim {D} does not match config D={cfg.D}")

        if sparse.dim() == 2:
            sparse = sparse.unsqueeze(0).expand(B, *sparse.shape)
        tokens = torch.cat([self.mask_token.unsqueeze(0).expand(B, 1, D), sparse], dim=1)
        pixels = (coarse + dense.unsqueeze(0)).flatten(2).transpose(1, 2)  # (B, HW, D)
        pos = self.pixel_pos.flatten(1).transpose(0, 1).unsqueeze(0)  # (1, HW, D)
        for block in self.blocks:
            tokens, pixels = block(tokens, pixels, pos)

        x = pixels.transpose(1, 2).reshape(B, D, Hc, Wc)
        for i, (up, proj) in enumerate(zip(self.upsample, self.skip_proj)):
            skip = fused[cfg.S - 2 - i]
            x = F.relu(up(x) + proj(skip))
        x = self.out_proj(x)
        m = self.token_mlp(tokens[:, 0])  # (B, D)
        logits = torch.einsum("bd,bdhw->bhw", m, x)
        logits = F.interpolate(
            logits.unsqueeze(1), size=(cfg.image_size, cfg.image_size), mode="bilinear",
            align_corners=False,
        ).squeeze(1)
        return logits.squeeze(0) if squeeze else logits


def bce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    if logits.shape != target.shape:
        raise SegHeadError(f"shape mismatch: logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    uniq = torch.unique(target)
    if not bool(((uniq == 0) | (uniq == 1)).all()):
        raise SegHeadError("target mask must be binary")
    t = target.to(logits.dtype)
    p = torch.sigmoid(logits).clamp(1e-7, 1.0 - 1e-7)
    return -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).mean()


def seg_head_param_count(cfg: ModelConfig) -> int:
    D = cfg.D
    lin = lambda i, o: i * o + o
    attn = 4 * lin(D, D)
    block = 3 * attn + lin(D, 4 * D) + lin(4 * D, D) + 4 * 2 * D  # + LayerNorms
    prompt = 2 * D + 2 * D + D + D
    coarse = cfg.stage_sizes[-1]
    decoder = (
        D  # mask token
        + D * coarse * coarse  # pixel positional embedding
        + cfg.decoder_blocks * block
        + (cfg.S - 1) * (D * D * 4 + D)  # transposed convs
        + (cfg.S - 1) * lin(D, D)  # skip projections
        + lin(D, D)  # out projection
        + 2 * lin(D, D)  # token MLP
    )
    return prompt + decoder
