"""Small building blocks shared by the encoder, temporal memory and decoder."""

from __future__ import annotations

import contextlib
import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class Attention(nn.Module):
    """Multi-head scaled dot-product attention with separate q/k/v/out projections.

    Keeping the four projections as distinct ``nn.Linear`` modules lets the
    low-rank baseline wrap ``q`` and ``v`` in place.  ``kv_dim``/``out_dim``
    allow queries and keys to live in different widths.
    """

    def __init__(self, dim: int, heads: int = 1, kv_dim: int | None = None,
                 out_dim: int | None = None, q_dim: int | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = nn.Linear(q_dim or dim, dim)
        self.k = nn.Linear(kv_dim or dim, dim)
        self.v = nn.Linear(kv_dim or dim, dim)
        self.out = nn.Linear(dim, out_dim or dim)
        self.record = False
        self.last_weights: torch.Tensor | None = None

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        # q: B x Nq x Dq, k/v: B x Nk x Dkv
        b, nq, _ = q.shape
        nk = k.shape[1]
        h, d = self.heads, self.dim // self.heads
        qh = self.q(q).view(b, nq, h, d).transpose(1, 2)
        kh = self.k(k).view(b, nk, h, d).transpose(1, 2)
        vh = self.v(v).view(b, nk, h, d).transpose(1, 2)
        weights = torch.softmax(qh @ kh.transpose(-2, -1) / math.sqrt(d), dim=-1)
        if self.record:
            self.last_weights = weights.detach()
        out = (weights @ vh).transpose(1, 2).reshape(b, nq, self.dim)
        return self.out(out)


class MLP(nn.Sequential):
    def __init__(self, dim: int, hidden: int, out: int | None = None):
        super().__init__(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, out or dim))


@contextlib.contextmanager
def record_attention(module: nn.Module):
    """Make every ``Attention`` under ``module`` keep its last softmax weights."""
    attns = [m for m in module.modules() if isinstance(m, Attention)]
    for a in attns:
        a.record = True
    try:
        yield attns
    finally:
        for a in attns:
            a.record = False


def to_tokens(x: torch.Tensor) -> torch.Tensor:
    """B x C x H x W -> B x HW x C."""
    return x.flatten(2).transpose(1, 2)


def from_tokens(t: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """B x HW x C -> B x C x H x W."""
    return t.transpose(1, 2).reshape(t.shape[0], t.shape[2], h, w)


def resize(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear resize with align_corners disabled; a no-op when the size already matches."""
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def sinusoidal_encoding(h: int, w: int, dim: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Fixed 2-D sine/cosine positional encoding, returned as dim x h x w.

    Half of the channels encode the row, the other half the column.
    """
    if dim % 4:
        raise ValueError("positional encoding width must be divisible by 4")
    quarter = dim // 4
    freqs = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    ys = torch.arange(h, dtype=torch.float64)[:, None] * freqs  # h x q
    xs = torch.arange(w, dtype=torch.float64)[:, None] * freqs  # w x q
    row = torch.cat([ys.sin(), ys.cos()], dim=1).T[:, :, None].expand(-1, h, w)
    col = torch.cat([xs.sin(), xs.cos()], dim=1).T[:, None, :].expand(-1, h, w)
    return torch.cat([row, col], dim=0).to(dtype=dtype, device=device)
