"""Ablation runner and the PEFT memory benchmark."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, ConfigError
from .data import SynthSceneSpec, VideoClip, VideoHandle, load_video_dataset, render_scene
from .metrics import EvalResult
from .model import SamDaq
from .peft import count_params, measure_peak_memory
from .train import evaluate_model, train, train_step_closure

# axis -> [(row label, config overrides)], in reporting order
AXES: dict[str, list[tuple[str, dict]]] = {
    "peft_topology": [
        ("w/o depth projector", {"use_depth_projector": False}),
        ("w/o parallel (sequential adapter)", {"peft": "sequential"}),
        ("w/o parallel (LoRA)", {"peft": "lora"}),
        ("w/o multi-modal", {"use_depth": False}),
        ("parallel DPA", {}),
    ],
    "embedding_mode": [
        ("sparse only", {"embedding_mode": "sparse"}),
        ("dense only", {"embedding_mode": "dense"}),
        ("both", {"embedding_mode": "both"}),
    ],
    "query_counts": [
        ("N_v=5, N_f=30", {"num_video_queries": 5, "num_frame_queries": 30}),
        ("N_v=8, N_f=30", {"num_video_queries": 8, "num_frame_queries": 30}),
        ("N_v=10, N_f=30", {"num_video_queries": 10, "num_frame_queries": 30}),
        ("N_v=8, N_f=10", {"num_video_queries": 8, "num_frame_queries": 10}),
        ("N_v=8, N_f=20", {"num_video_queries": 8, "num_frame_queries": 20}),
        ("N_v=8, N_f=40", {"num_video_queries": 8, "num_frame_queries": 40}),
    ],
    "hidden_dim": [(str(c), {"query_hidden_dim": c}) for c in (32, 64, 128, 256)],
    "update_strategy": [(s, {"update_strategy": s}) for s in ("none", "sam2_bank", "multiply", "addition")],
    "supervised_levels": [
        ("E2", {"supervised_levels": (2,)}),
        ("E3", {"supervised_levels": (3,)}),
        ("E4", {"supervised_levels": (4,)}),
        ("E3+E4", {"supervised_levels": (3, 4)}),
        ("E2+E3+E4", {"supervised_levels": (2, 3, 4)}),
    ],
}

FIRST_COLUMN = {
    "peft_topology": "Methods",
    "embedding_mode": "Strategies",
    "query_counts": "Queries",
    "hidden_dim": "Dimensions",
    "update_strategy": "Methods",
    "supervised_levels": "Supervised Levels",
}


@dataclass
class AblationRow:
    name: str
    result: EvalResult
    trainable: int
    total: int
    peak_bytes: int | None = None


@dataclass
class AblationTable:
    axis: str
    rows: list[AblationRow] = field(default_factory=list)

    @property
    def with_cost(self) -> bool:
        return self.axis == "peft_topology"

    def markdown(self) -> str:
        head = [FIRST_COLUMN[self.axis]]
        if self.with_cost:
            head += ["Trainable/Total (M)", "Memory (MiB)"]
        head += ["E_xi ↑", "S_alpha ↑", "F_beta ↑", "M ↓"]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in self.rows:
            cells = [r.name]
            if self.with_cost:
                mem = "n/a" if r.peak_bytes is None else f"{r.peak_bytes / 2 ** 20:.1f}"
                cells += [f"{r.trainable / 1e6:.3f}/{r.total / 1e6:.3f}", mem]
            cells += [f"{v:.3f}" for v in r.result.row()]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "trainable", "total", "peak_bytes", "E_xi", "S_alpha", "F_beta", "MAE"])
            for r in self.rows:
                w.writerow([r.name, r.trainable, r.total, "" if r.peak_bytes is None else r.peak_bytes]
                           + [f"{v:.6f}" for v in r.result.row()])


def probe_clip(cfg: Config) -> VideoClip:
    """A fixed in-memory synthetic clip at the configured size and clip length."""
    spec = SynthSceneSpec(seed=cfg.seed, num_frames=cfg.clip_length, size=cfg.input_size)
    rgb, depth, gt = render_scene(spec)
    return VideoClip(
        "probe", list(range(cfg.clip_length)),
        rgb.transpose(0, 3, 1, 2).astype(np.float32),
        depth[:, None].astype(np.float32),
        gt[:, None].astype(np.float32),
    )


def peak_train_memory(cfg: Config, clip: VideoClip | None = None) -> int | None:
    """Peak bytes (parameters included) of one optimizer step on a fresh model."""
    model = SamDaq(cfg)
    model.train()
    step = train_step_closure(model, clip if clip is not None else probe_clip(cfg))
    return measure_peak_memory(step, baseline=model).peak_bytes


def bench_memory(cfg: Config) -> list[tuple[str, int, int, int | None]]:
    """(variant, trainable, total, peak_bytes) for the three PEFT topologies at equal rank."""
    clip = probe_clip(cfg)
    rows = []
    for variant in ("parallel", "sequential", "lora"):
        vcfg = cfg.replace(peft=variant)
        trainable, total = count_params(SamDaq(vcfg))
        rows.append((variant, trainable, total, peak_train_memory(vcfg, clip)))
    return rows


def write_memory_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "trainable", "total", "peak_bytes"])
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def depth_ablated(model: SamDaq) -> SamDaq:
    """The same trained weights with the depth branch zeroed (RGB-only inference)."""
    ablated = SamDaq(model.cfg.replace(use_depth=False))
    ablated.load_state_dict(model.state_dict())
    ablated.eval()
    return ablated


def axis_variants(axis: str, cfg: Config) -> list[tuple[str, Config]]:
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {', '.join(AXES)}")
    return [(name, cfg.replace(**overrides)) for name, overrides in AXES[axis]]


def run_ablation(axis: str, cfg: Config, out_dir: str | Path | None = None,
                 train_videos: list[VideoHandle] | None = None,
                 eval_videos: list[VideoHandle] | None = None) -> AblationTable:
    """Train and evaluate every variant of ``axis`` under the same seed and data."""
    variants = axis_variants(axis, cfg)
    out = Path(out_dir or cfg.out_dir)
    if train_videos is None:
        train_videos = load_video_dataset(cfg.data_root, cfg.input_size)
    if eval_videos is None:
        eval_videos = (load_video_dataset(cfg.eval_root, cfg.input_size)
                       if cfg.eval_root else train_videos)
    table = AblationTable(axis)
    clip = probe_clip(cfg) if axis == "peft_topology" else None
    for k, (name, vcfg) in enumerate(variants):
        run = train(vcfg, train_videos, out / f"{axis}_{k}")
        mean, _ = evaluate_model(run.model, eval_videos)
        trainable, total = count_params(run.model)
        peak = peak_train_memory(vcfg, clip) if clip is not None else None
        table.rows.append(AblationRow(name, mean, trainable, total, peak))
    return table
