"""Low-rank injection, parameter accounting and peak training-memory measurement.

The parallel and sequential adapter topologies live in :mod:`samdaq.encoder`
(they differ only in where the adapter sits relative to the frozen stage);
this module holds the pieces that are independent of the encoder layout.
"""

from __future__ import annotations

import gc
import weakref
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn
from torch.utils._python_dispatch import TorchDispatchMode
from torch.utils._pytree import tree_flatten

from .layers import Attention


class LoRALinear(nn.Module):
    """``W x + (alpha / r) * B A x`` around a frozen ``nn.Linear``.

    ``A`` gets a small random init and ``B`` starts at zero, so the wrapped
    layer is initially the frozen layer.
    """

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        for p in base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.scale = alpha / rank
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features, dtype=base.weight.dtype))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank, dtype=base.weight.dtype))
        nn.init.normal_(self.lora_a, std=1.0 / rank)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scale * (x @ self.lora_a.T) @ self.lora_b.T

    def merged_weight(self) -> torch.Tensor:
        return self.base.weight + self.scale * self.lora_b @ self.lora_a

    def merged(self) -> nn.Linear:
        """A plain ``nn.Linear`` computing the same function in one matmul."""
        lin = nn.Linear(self.base.in_features, self.base.out_features,
                        dtype=self.base.weight.dtype)
        with torch.no_grad():
            lin.weight.copy_(self.merged_weight())
            lin.bias.copy_(self.base.bias)
        return lin


def inject_lora(module: nn.Module, rank: int, alpha: float) -> list[LoRALinear]:
    """Wrap the query and value projections of every attention layer under ``module``."""
    wrapped = []
    for attn in [m for m in module.modules() if isinstance(m, Attention)]:
        for name in ("q", "v"):
            layer = LoRALinear(getattr(attn, name), rank, alpha)
            setattr(attn, name, layer)
            wrapped.append(layer)
    return wrapped


def count_params(model: nn.Module) -> tuple[int, int]:
    """(trainable, total) parameter counts, each shared tensor counted once."""
    seen: set[int] = set()
    trainable = total = 0
    for p in model.parameters():
        if id(p) in seen:
            continue
        seen.add(id(p))
        total += p.numel()
        if p.requires_grad:
            trainable += p.numel()
    return trainable, total


def trainable_ratio(model: nn.Module) -> float:
    trainable, total = count_params(model)
    return trainable / total if total else 0.0


def adapter_param_count(in_width: int, rank: int, out_width: int) -> int:
    """Down projection + bias, up projection + bias."""
    return in_width * rank + rank + rank * out_width + out_width


def lora_param_count(in_features: int, out_features: int, rank: int) -> int:
    return rank * in_features + out_features * rank


# --------------------------------------------------------------------------- memory


@dataclass(frozen=True)
class PeakMemory:
    peak_bytes: int | None
    method: str

    @property
    def supported(self) -> bool:
        return self.peak_bytes is not None


class LiveTensorTracker(TorchDispatchMode):
    """High-water mark of tensor storage created while the mode is active.

    Every op output is intercepted at the dispatcher; a storage is counted when
    first seen and released through a weakref finalizer when it is freed.
    Storages alive before entry (weights, existing grads) are not counted.
    """

    def __init__(self) -> None:
        super().__init__()
        self.live = 0
        self.peak = 0
        self._sizes: dict[int, int] = {}

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        for t in tree_flatten(out)[0]:
            if not isinstance(t, torch.Tensor) or t.device.type == "meta":
                continue
            storage = t.untyped_storage()
            key = storage.data_ptr()
            nbytes = storage.nbytes()
            if nbytes == 0 or key in self._sizes:
                continue
            self._sizes[key] = nbytes
            self.live += nbytes
            self.peak = max(self.peak, self.live)
            weakref.finalize(storage, self._release, key)
        return out

    def _release(self, key: int) -> None:
        self.live -= self._sizes.pop(key, 0)


def measure_peak_memory(step: Callable[[], object], device: str | torch.device = "cpu",
                        baseline: nn.Module | None = None) -> PeakMemory:
    """Peak memory of one call to ``step`` (forward + backward + optimizer update).

    On CUDA the allocator's peak counter is reset and read.  Elsewhere the
    dispatcher-level tracker above is used.  ``baseline`` adds the bytes of a
    model's parameters, which exist before the step starts.
    """
    device = torch.device(device)
    base = 0
    if baseline is not None:
        base = sum(p.numel() * p.element_size() for p in baseline.parameters())
    gc.collect()
    if device.type == "cuda":
        if not torch.cuda.is_available():
            return PeakMemory(None, "unsupported")
        torch.cuda.synchronize(device)
        torch.cuda.reset_peak_memory_stats(device)
        start = torch.cuda.memory_allocated(device)
        step()
        torch.cuda.synchronize(device)
        return PeakMemory(torch.cuda.max_memory_allocated(device) - start + base, "cuda_allocator")
    if device.type != "cpu":
        return PeakMemory(None, "unsupported")
    tracker = LiveTensorTracker()
    with tracker:
        step()
    gc.collect()
    return PeakMemory(tracker.peak + base, "dispatch_tracker")
