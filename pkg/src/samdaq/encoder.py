"""Parallel adapter-based multi-modal image encoder.

A frozen four-stage attention hierarchy (a randomly initialised stand-in with
Hiera's stage/stride layout) encodes RGB and depth separately.  Trainable
adapters sit in skip connections around each frozen stage:

* depth:  ``F_D^i   = H_i(F_D^{i-1})   + DS(Adapter(F_D^{i-1}))``
* rgb:    ``F_RGB^i = H_i(F_RGB^{i-1}) + DS(Adapter(Cat(F_RGB^{i-1}, F_D^{i-1})))``, i >= 2

followed by an FPN over the RGB stages 2-4 and 1x1 sigmoid heads.  The
``sequential`` and ``lora`` topologies are the comparison baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import Config, ConfigError
from .layers import MLP, Attention, from_tokens, resize, to_tokens
from .peft import LoRALinear, inject_lora


class ShapeError(ValueError):
    """Input tensors do not match the configured layout."""


@dataclass(frozen=True)
class StageSpec:
    index: int
    in_channels: int
    out_channels: int
    spatial_stride: int
    block_count: int
    heads: int


def stage_specs(cfg: Config) -> list[StageSpec]:
    ch = cfg.stage_channels
    return [
        StageSpec(i + 1, ch[max(i - 1, 0)], ch[i], 2 ** (i + 1), cfg.stage_blocks[i], cfg.stage_heads[i])
        for i in range(4)
    ]


@dataclass
class RGBDFramePair:
    rgb: torch.Tensor    # B x 3 x S x S in [0, 1]
    depth: torch.Tensor  # B x 1 x S x S in [0, 1]

    def __post_init__(self):
        if self.rgb.dim() == 3:
            self.rgb = self.rgb[None]
        if self.depth.dim() == 3:
            self.depth = self.depth[None]
        if self.rgb.shape[-2:] != self.depth.shape[-2:]:
            raise ShapeError(f"rgb {tuple(self.rgb.shape)} and depth {tuple(self.depth.shape)} not aligned")
        if self.rgb.shape[1] != 3 or self.depth.shape[1] != 1:
            raise ShapeError("expected 3-channel rgb and 1-channel depth")


@dataclass
class EncoderOutput:
    pyramid: list[torch.Tensor]               # [E2, E3, E4], finest first
    intermediate_logits: dict[int, torch.Tensor]
    intermediate_preds: dict[int, torch.Tensor]  # at input resolution, in [0, 1]


# --------------------------------------------------------------------------- frozen backbone


class Block(nn.Module):
    """Pre-norm global self-attention + MLP over the flattened grid."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, 4 * dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.norm1(x)
        x = x + self.attn(y, y, y)
        return x + self.mlp(self.norm2(x))


class Stage(nn.Module):
    """One hierarchy stage; stages after the first halve the grid first."""

    def __init__(self, spec: StageSpec):
        super().__init__()
        self.spec = spec
        self.downsample = spec.index > 1
        self.proj = nn.Conv2d(spec.in_channels, spec.out_channels, 1) if self.downsample else None
        self.blocks = nn.ModuleList(Block(spec.out_channels, spec.heads) for _ in range(spec.block_count))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.downsample:
            x = F.avg_pool2d(self.proj(x), 2)
        h, w = x.shape[-2:]
        t = to_tokens(x)
        for blk in self.blocks:
            t = blk(t)
        return from_tokens(t, h, w)


class Backbone(nn.Module):
    """Patch embedding (stride 2) + four stages at strides 2, 4, 8, 16."""

    def __init__(self, cfg: Config):
        super().__init__()
        specs = stage_specs(cfg)
        self.patch_embed = nn.Conv2d(3, specs[0].in_channels, 3, stride=2, padding=1)
        self.stages = nn.ModuleList(Stage(s) for s in specs)

    def embed(self, image: torch.Tensor) -> torch.Tensor:
        return self.patch_embed(image)

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        x = self.embed(image)
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return outs


# --------------------------------------------------------------------------- adapters


class Adapter(nn.Module):
    """Per-position down-projection, GELU, up-projection (1x1 convolutions).

    The up-projection is zero-initialised, so a fresh adapter outputs exactly 0.
    """

    def __init__(self, in_width: int, rank: int, out_width: int, modality: str):
        super().__init__()
        self.modality = modality
        self.rank = rank
        self.down = nn.Conv2d(in_width, rank, 1)
        self.up = nn.Conv2d(rank, out_width, 1)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.down.in_channels:
            raise ConfigError(
                f"{self.modality} adapter expects {self.down.in_channels} channels, got {x.shape[1]}")
        return self.up(F.gelu(self.down(x)))


class DepthProjector(nn.Conv2d):
    """1x1 linear map of the depth patch embedding into the RGB feature space."""

    def __init__(self, channels: int):
        super().__init__(channels, channels, 1)
        with torch.no_grad():
            self.weight.copy_(torch.eye(channels).view(channels, channels, 1, 1))
            self.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ConfigError(f"depth projector expects {self.in_channels} channels, got {x.shape[1]}")
        return super().forward(x)


# --------------------------------------------------------------------------- encoder


class PAMIE(nn.Module):
    def __init__(self, cfg: Config):
        super().__init__()
        self.cfg = cfg
        self.specs = stage_specs(cfg)
        ch = cfg.stage_channels
        c0 = ch[0]
        r = cfg.adapter_rank

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.backbone_seed)
            self.backbone = Backbone(cfg)
        if cfg.freeze_backbone:
            self.backbone.requires_grad_(False)

        self.depth_projector = DepthProjector(c0) if cfg.use_depth_projector else None
        self.topology = cfg.peft
        # The depth branch feeds stage i of the RGB branch with F_D^{i-1}, so only
        # depth stages 1-3 are ever consumed.
        if self.topology == "parallel":
            self.depth_adapters = nn.ModuleList(
                Adapter(([c0] + list(ch))[i], r, ch[i], "depth") for i in range(3))
            self.rgb_adapters = nn.ModuleList(
                Adapter(2 * ch[i - 1], r, ch[i], "rgb_dpa") for i in range(1, 4))
        elif self.topology == "sequential":
            self.depth_adapters = nn.ModuleList(Adapter(ch[i], r, ch[i], "depth") for i in range(3))
            self.rgb_adapters = nn.ModuleList(
                Adapter(ch[i] + ch[i - 1], r, ch[i], "rgb_dpa") for i in range(1, 4))
        else:
            self.lora_layers = inject_lora(self.backbone, cfg.lora_rank, cfg.lora_alpha)
            self.depth_fuse = nn.ModuleList(nn.Conv2d(ch[i - 1], ch[i], 1) for i in range(1, 4))
            for conv in self.depth_fuse:
                nn.init.zeros_(conv.weight)
                nn.init.zeros_(conv.bias)

        w = cfg.fpn_width
        self.lateral = nn.ModuleList(nn.Conv2d(ch[i], w, 1) for i in range(1, 4))
        self.heads = nn.ModuleList(nn.Conv2d(w, 1, 1) for _ in range(3))
        for head in self.heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    # -- single operations --------------------------------------------------

    def depth_project(self, depth_embedding: torch.Tensor) -> torch.Tensor:
        if self.depth_projector is None:
            return depth_embedding
        return self.depth_projector(depth_embedding)

    @staticmethod
    def adapter_apply(adapter: Adapter, features: torch.Tensor) -> torch.Tensor:
        return adapter(features)

    def _frozen(self, i: int, x: torch.Tensor) -> torch.Tensor:
        stage = self.backbone.stages[i - 1]
        if self.topology == "parallel" and self.cfg.gradient_bypass and self.cfg.freeze_backbone:
            # Gradients reach earlier adapters through the adapter chain only,
            # never through the frozen stage, so no stage activations are kept.
            with torch.no_grad():
                return stage(x.detach())
        return stage(x)

    def encode_depth_stage(self, i: int, f_d_prev: torch.Tensor) -> torch.Tensor:
        if not 1 <= i <= 3:
            raise ValueError(f"depth stage index {i} outside 1..3")
        main = self._frozen(i, f_d_prev)
        if self.topology == "parallel":
            side = self.depth_adapters[i - 1](f_d_prev)
            return main + resize(side, main.shape[-2:])
        if self.topology == "sequential":
            return main + self.depth_adapters[i - 1](main)
        return main

    def encode_rgb_stage(self, i: int, f_rgb_prev: torch.Tensor,
                         f_d_prev: torch.Tensor | None = None) -> torch.Tensor:
        if i == 1:
            return self._frozen(1, f_rgb_prev)
        if not 2 <= i <= 4:
            raise ValueError(f"rgb stage index {i} outside 1..4")
        if f_d_prev is None:
            raise ValueError("stages 2-4 need the previous depth features")
        if f_rgb_prev.shape[-2:] != f_d_prev.shape[-2:]:
            raise ShapeError(
                f"stage {i}: rgb {tuple(f_rgb_prev.shape[-2:])} and depth "
                f"{tuple(f_d_prev.shape[-2:])} features are not aligned")
        main = self._frozen(i, f_rgb_prev)
        if self.topology == "parallel":
            side = self.rgb_adapters[i - 2](torch.cat([f_rgb_prev, f_d_prev], dim=1))
            return main + resize(side, main.shape[-2:])
        if self.topology == "sequential":
            fused = torch.cat([main, resize(f_d_prev, main.shape[-2:])], dim=1)
            return main + self.rgb_adapters[i - 2](fused)
        return main + resize(self.depth_fuse[i - 2](f_d_prev), main.shape[-2:])

    def intermediate_predict(self, level: int, e: torch.Tensor) -> torch.Tensor:
        """Logit map of pyramid level ``level`` (2..4) from its 1x1 head."""
        return self.heads[level - 2](e)

    def fpn(self, feats: list[torch.Tensor]) -> list[torch.Tensor]:
        """Lateral 1x1 + nearest top-down fusion over RGB stages 2-4."""
        lat = [conv(f) for conv, f in zip(self.lateral, feats)]
        out = [lat[2]]
        for x in (lat[1], lat[0]):
            out.insert(0, x + F.interpolate(out[0], size=x.shape[-2:], mode="nearest"))
        return out

    # -- full pass -----------------------------------------------------------

    def encode_pair(self, pair: RGBDFramePair) -> EncoderOutput:
        s = self.cfg.input_size
        if tuple(pair.rgb.shape[-2:]) != (s, s):
            raise ShapeError(f"expected {s}x{s} input, got {tuple(pair.rgb.shape[-2:])}")
        f_rgb = self.backbone.embed(pair.rgb)
        if self.cfg.use_depth:
            f_d = self.depth_project(self.backbone.embed(pair.depth.expand(-1, 3, -1, -1)))
        else:
            f_d = torch.zeros_like(f_rgb)

        depth_feats = [f_d]
        for i in (1, 2, 3):
            if self.cfg.use_depth:
                depth_feats.append(self.encode_depth_stage(i, depth_feats[-1]))
            else:
                spec = self.specs[i - 1]
                h = s // spec.spatial_stride
                depth_feats.append(f_rgb.new_zeros(f_rgb.shape[0], spec.out_channels, h, h))

        rgb_feats = [self.encode_rgb_stage(1, f_rgb)]
        for i in (2, 3, 4):
            rgb_feats.append(self.encode_rgb_stage(i, rgb_feats[-1], depth_feats[i - 1]))

        pyramid = self.fpn(rgb_feats[1:])
        logits, preds = {}, {}
        for level, e in zip((2, 3, 4), pyramid):
            lg = resize(self.intermediate_predict(level, e), (s, s))
            logits[level] = lg
            preds[level] = torch.sigmoid(lg)
        return EncoderOutput(pyramid, logits, preds)

    def forward(self, rgb: torch.Tensor, depth: torch.Tensor) -> EncoderOutput:
        return self.encode_pair(RGBDFramePair(rgb, depth))

    def frozen_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.backbone.parameters() if not p.requires_grad]

    def lora_modules(self) -> list[LoRALinear]:
        return [m for m in self.modules() if isinstance(m, LoRALinear)]
