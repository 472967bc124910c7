"""Query-driven temporal memory.

Static frame-level queries pool saliency-relevant content from the highest
pyramid level each frame.  Video-level queries carry temporal context: they
attend to the pooled frame embeddings to produce the decoder's learnable
embeddings, and after the frame is decoded they are refined from a memory
encoding of (image embedding, prediction).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import UPDATE_STRATEGIES, Config, ConfigError
from .layers import MLP, Attention, to_tokens


@dataclass
class VideoQueryState:
    queries: torch.Tensor          # B x N_v x c
    t: int = 0
    bank: list[torch.Tensor] = field(default_factory=list)  # sam2_bank only, each B x L x c


class MemoryEncoder(nn.Module):
    """Two 3x3 convolutions over Cat(E4, downsampled prediction)."""

    def __init__(self, in_width: int, dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_width + 1, dim, 3, padding=1)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, e4: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
        p = F.interpolate(pred, size=e4.shape[-2:], mode="bilinear", align_corners=False)
        return self.conv2(F.gelu(self.conv1(torch.cat([e4, p], dim=1))))


class UpdateBlock(nn.Module):
    """Cross-attention to memory, self-attention over the queries, then an FFN.

    Pre-norm on each sub-block; the residual onto the incoming queries is
    applied by the caller so that the additive and multiplicative update
    strategies share this block.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.cross = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = MLP(dim, 4 * dim)

    def forward(self, q: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        h = self.cross(self.norm1(q), memory, memory)
        n = self.norm2(h)
        h = self.self_attn(n, n, n)
        return self.ffn(self.norm3(h))

    @property
    def final_layer(self) -> nn.Linear:
        return self.ffn[-1]


class QTM(nn.Module):
    def __init__(self, cfg: Config):
        super().__init__()
        c = cfg.query_hidden_dim
        self.dim = c
        self.strategy = cfg.update_strategy
        self.bank_size = cfg.bank_size
        self.frame_queries = nn.Parameter(torch.randn(cfg.num_frame_queries, c) * 0.02)
        self.video_queries = nn.Parameter(torch.randn(cfg.num_video_queries, c) * 0.02)
        self.query_embed = nn.Linear(c, c)
        self.e4_proj = nn.Conv2d(cfg.fpn_width, c, 1)
        self.pool_linear = nn.Linear(c, c)
        self.enhance_norm = nn.LayerNorm(c)
        self.enhance_attn = Attention(c, cfg.query_heads)
        self.memory_encoder = MemoryEncoder(cfg.fpn_width, c)
        self.memory_linear = nn.Linear(c, c)
        if self.strategy == "sam2_bank":
            self.bank_norm = nn.LayerNorm(cfg.fpn_width)
            self.bank_attn = Attention(c, cfg.query_heads, q_dim=cfg.fpn_width, kv_dim=c,
                                       out_dim=cfg.fpn_width)
        else:
            self.update_block = UpdateBlock(c, cfg.query_heads)

    # -- per-frame query path --------------------------------------------------

    def initial_state(self, batch: int = 1) -> VideoQueryState:
        q = self.query_embed(self.video_queries)
        return VideoQueryState(q.unsqueeze(0).expand(batch, -1, -1), t=0)

    def projected_frame_queries(self, batch: int = 1) -> torch.Tensor:
        return self.query_embed(self.frame_queries).unsqueeze(0).expand(batch, -1, -1)

    def pool_frame_queries(self, qf_proj: torch.Tensor, e4: torch.Tensor) -> torch.Tensor:
        """Softmax-over-space attention pooling of ``e4`` (B x c x h x w) by each query, then Linear."""
        x = to_tokens(e4)                                            # B x hw x c
        scores = qf_proj @ x.transpose(1, 2) / self.dim ** 0.5       # B x N_f x hw
        pooled = torch.softmax(scores, dim=-1) @ x
        return self.pool_linear(pooled)

    def enhance_video_queries(self, qv: torch.Tensor, e_f: torch.Tensor) -> torch.Tensor:
        return qv + self.enhance_attn(self.enhance_norm(qv), e_f, e_f)

    @staticmethod
    def form_learnable_embeddings(qv_enhanced: torch.Tensor, e4: torch.Tensor) -> torch.Tensor:
        g = e4.mean(dim=(-2, -1))                                    # B x c
        return qv_enhanced * g.unsqueeze(1)

    def project_e4(self, e4: torch.Tensor) -> torch.Tensor:
        return self.e4_proj(e4)

    def learnable_embeddings(self, state: VideoQueryState, e4: torch.Tensor) -> torch.Tensor:
        """E_L for the current frame from the current video-query state and raw E4."""
        e4c = self.project_e4(e4)
        b = e4.shape[0]
        e_f = self.pool_frame_queries(self.projected_frame_queries(b), e4c)
        enhanced = self.enhance_video_queries(state.queries, e_f)
        return self.form_learnable_embeddings(enhanced, e4c)

    # -- memory and update ------------------------------------------------------

    def encode_memory(self, e4: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
        """F_m (B x hw x c) from the raw E4 and the frame's final prediction."""
        return self.memory_linear(to_tokens(self.memory_encoder(e4, pred)))

    def update_video_queries(self, state: VideoQueryState, f_m: torch.Tensor) -> VideoQueryState:
        q = state.queries
        return VideoQueryState(q + self.update_block(q, f_m), state.t + 1)

    def update_variant(self, state: VideoQueryState, f_m: torch.Tensor,
                       strategy: str | None = None) -> VideoQueryState:
        strategy = strategy or self.strategy
        if strategy not in UPDATE_STRATEGIES:
            raise ConfigError(f"unknown update strategy {strategy!r}")
        q = state.queries
        if strategy == "addition":
            return self.update_video_queries(state, f_m)
        if strategy == "multiply":
            return VideoQueryState(q * self.update_block(q, f_m), state.t + 1)
        if strategy == "none":
            return VideoQueryState(q, state.t + 1)
        bank = (state.bank + [f_m])[-self.bank_size:]
        return VideoQueryState(q, state.t + 1, bank)

    def read_bank(self, state: VideoQueryState, e4: torch.Tensor) -> torch.Tensor:
        """sam2_bank variant: let E4 attend to the stored memories before decoding."""
        if self.strategy != "sam2_bank" or not state.bank:
            return e4
        h, w = e4.shape[-2:]
        tokens = to_tokens(e4)
        memory = torch.cat(state.bank, dim=1)
        out = tokens + self.bank_attn(self.bank_norm(tokens), memory, memory)
        return out.transpose(1, 2).reshape(e4.shape[0], -1, h, w)
