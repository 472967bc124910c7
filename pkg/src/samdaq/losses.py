"""Binary cross-entropy and the combined prediction + intermediate objective."""

from __future__ import annotations

from typing import Iterable, Mapping

import torch

EPS = 1e-7


def binarize_gt(gt: torch.Tensor) -> torch.Tensor:
    """Soft annotation values are thresholded at 0.5."""
    return (gt >= 0.5).to(gt.dtype)


def bce(pred: torch.Tensor, gt: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and ground truth {tuple(gt.shape)} differ")
    p = pred.clamp(eps, 1 - eps)
    g = binarize_gt(gt)
    return -(g * torch.log(p) + (1 - g) * torch.log(1 - p)).mean()


def total_loss(pred: torch.Tensor, inter: Mapping[int, torch.Tensor], gt: torch.Tensor,
               alpha: float, levels: Iterable[int] = (4,)):
    """Return ``(L_total, L_pred, L_inter)`` with ``L_total = L_pred + alpha * L_inter``.

    ``L_inter`` averages the BCE over the supervised levels and is 0 when
    none are supervised.
    """
    l_pred = bce(pred, gt)
    levels = sorted(set(levels))
    if levels:
        l_inter = torch.stack([bce(inter[lv], gt) for lv in levels]).mean()
    else:
        l_inter = torch.zeros((), dtype=pred.dtype, device=pred.device)
    return l_pred + alpha * l_inter, l_pred, l_inter
