"""Full model: encoder -> temporal queries -> mask decoder, rolled over a clip."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import Config
from .decoder import MaskDecoder
from .encoder import PAMIE, EncoderOutput, RGBDFramePair
from .losses import total_loss
from .qtm import QTM, VideoQueryState


@dataclass
class FrameOutput:
    pred: torch.Tensor                      # B x 1 x S x S
    intermediate: dict[int, torch.Tensor]   # level -> B x 1 x S x S
    learnable_embeddings: torch.Tensor      # B x N_v x c


class SamDaq(nn.Module):
    def __init__(self, cfg: Config):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.encoder = PAMIE(cfg)
            self.qtm = QTM(cfg)
            self.decoder = MaskDecoder(cfg)
        if cfg.float64:
            self.double()

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.cfg.float64 else torch.float32

    def initial_state(self, batch: int = 1) -> VideoQueryState:
        return self.qtm.initial_state(batch)

    def frame_step(self, state: VideoQueryState, rgb: torch.Tensor, depth: torch.Tensor
                   ) -> tuple[FrameOutput, VideoQueryState]:
        enc: EncoderOutput = self.encoder.encode_pair(RGBDFramePair(rgb, depth))
        e2, e3, e4 = enc.pyramid
        e4_dec = self.qtm.read_bank(state, e4)
        e_l = self.qtm.learnable_embeddings(state, e4_dec)
        pred = self.decoder.decode_mask([e2, e3, e4_dec], e_l)
        f_m = self.qtm.encode_memory(e4, pred)
        new_state = self.qtm.update_variant(state, f_m)
        return FrameOutput(pred, enc.intermediate_preds, e_l), new_state

    def forward(self, rgb: torch.Tensor, depth: torch.Tensor,
                state: VideoQueryState | None = None) -> list[FrameOutput]:
        """Run a clip frame by frame.  ``rgb``: B x T x 3 x S x S, ``depth``: B x T x 1 x S x S."""
        if state is None:
            state = self.initial_state(rgb.shape[0])
        outs = []
        for t in range(rgb.shape[1]):
            out, state = self.frame_step(state, rgb[:, t], depth[:, t])
            outs.append(out)
        return outs

    def clip_loss(self, rgb: torch.Tensor, depth: torch.Tensor, gt: torch.Tensor):
        """Mean over the clip's frames of ``(L_total, L_pred, L_inter)``."""
        outs = self(rgb, depth)
        totals, preds, inters = [], [], []
        for t, out in enumerate(outs):
            lt, lp, li = total_loss(out.pred, out.intermediate, gt[:, t], self.cfg.loss_alpha,
                                    self.cfg.supervised_levels)
            totals.append(lt)
            preds.append(lp)
            inters.append(li)
        return torch.stack(totals).mean(), torch.stack(preds).mean(), torch.stack(inters).mean()

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def frozen_state(self) -> dict[str, torch.Tensor]:
        names = {id(p): n for n, p in self.named_parameters()}
        return {names[id(p)]: p for p in self.parameters() if not p.requires_grad}


def tensor_digest(tensors: dict[str, torch.Tensor]) -> str:
    """SHA-256 over names and raw bytes, in name order."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()
