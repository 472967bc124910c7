"""Prompt-free two-way mask decoder.

A single mask token plus the learnable embeddings form the token set.  Each
round runs tokens->image cross-attention, token self-attention, a token MLP
and image->tokens cross-attention over E4 (with a fixed sinusoidal position
encoding).  The decoded grid is upsampled twice with skip additions from E3
and E2; the mask token, passed through a small MLP, is dotted with every
upsampled pixel embedding to give the mask logit.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import Config
from .layers import MLP, Attention, from_tokens, resize, sinusoidal_encoding, to_tokens


class TwoWayBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm_t2i = nn.LayerNorm(dim)
        self.t2i = Attention(dim, heads)
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = MLP(dim, 2 * dim)
        self.norm_i2t = nn.LayerNorm(dim)
        self.i2t = Attention(dim, heads)

    def forward(self, tokens, image, pe):
        keys = image + pe
        tokens = tokens + self.t2i(self.norm_t2i(tokens), keys, image)
        n = self.norm_self(tokens)
        tokens = tokens + self.self_attn(n, n, n)
        tokens = tokens + self.mlp(self.norm_mlp(tokens))
        n = self.norm_i2t(tokens)
        image = image + self.i2t(image + pe, n, n)
        return tokens, image


class MaskDecoder(nn.Module):
    def __init__(self, cfg: Config):
        super().__init__()
        c = cfg.query_hidden_dim
        self.dim = c
        self.mode = cfg.embedding_mode
        self.input_size = cfg.input_size
        self.level_proj = nn.ModuleList(nn.Conv2d(cfg.fpn_width, c, 1) for _ in range(3))
        self.mask_token = nn.Parameter(torch.randn(1, c) * 0.02)
        if self.mode != "sparse":
            self.dense_proj = nn.Linear(c, c)
        if self.mode == "dense":
            self.no_prompt = nn.Parameter(torch.zeros(1, c))
        self.blocks = nn.ModuleList(TwoWayBlock(c, cfg.query_heads) for _ in range(cfg.decoder_rounds))
        self.up1 = nn.ConvTranspose2d(c, c, 2, stride=2)
        self.up2 = nn.ConvTranspose2d(c, c, 2, stride=2)
        self.hyper = MLP(c, c)
        # Zero-initialised hypernetwork output: every pixel starts at logit 0.
        nn.init.zeros_(self.hyper[-1].weight)
        nn.init.zeros_(self.hyper[-1].bias)

    def tokens_and_dense(self, e_l: torch.Tensor):
        b = e_l.shape[0]
        mask = self.mask_token.unsqueeze(0).expand(b, -1, -1)
        if self.mode == "sparse":
            return torch.cat([mask, e_l], dim=1), None
        dense = self.dense_proj(e_l.mean(dim=1))                       # B x c
        if self.mode == "dense":
            prompt = self.no_prompt.unsqueeze(0).expand(b, -1, -1)
            return torch.cat([mask, prompt], dim=1), dense
        return torch.cat([mask, e_l], dim=1), dense

    def decode_logits(self, pyramid: list[torch.Tensor], e_l: torch.Tensor) -> torch.Tensor:
        e2, e3, e4 = (proj(e) for proj, e in zip(self.level_proj, pyramid))
        tokens, dense = self.tokens_and_dense(e_l)
        if dense is not None:
            e4 = e4 + dense[:, :, None, None]
        h, w = e4.shape[-2:]
        pe = to_tokens(sinusoidal_encoding(h, w, self.dim, e4.dtype, e4.device)[None])
        image = to_tokens(e4)
        for blk in self.blocks:
            tokens, image = blk(tokens, image, pe)
        x = from_tokens(image, h, w)
        x = F.gelu(self.up1(x) + e3)
        x = F.gelu(self.up2(x) + e2)
        kernel = self.hyper(tokens[:, 0])                               # B x c
        logits = torch.einsum("bc,bchw->bhw", kernel, x).unsqueeze(1)
        return resize(logits, (self.input_size, self.input_size))

    def decode_mask(self, pyramid: list[torch.Tensor], e_l: torch.Tensor) -> torch.Tensor:
        """Saliency probability map, B x 1 x S x S in [0, 1]."""
        return torch.sigmoid(self.decode_logits(pyramid, e_l))

    forward = decode_mask
