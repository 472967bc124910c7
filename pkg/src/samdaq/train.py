"""Training loop, checkpoints, and clip-level inference."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from PIL import Image

from .config import Config
from .data import VideoClip, VideoHandle, full_clip, load_video, load_video_dataset, sample_clip
from .metrics import EvalResult, evaluate_frame, mean_result
from .model import SamDaq

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LOG_COLUMNS = ("iter", "L_pred", "L_inter", "L_total", "wall_ms")


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


def clip_tensors(clip: VideoClip, dtype: torch.dtype = torch.float32):
    """(rgb, depth, gt) as 1 x T x C x S x S tensors."""
    return tuple(torch.from_numpy(a).to(dtype).unsqueeze(0) for a in (clip.rgb, clip.depth, clip.gts))


def make_optimizer(model: SamDaq) -> torch.optim.Optimizer:
    cfg = model.cfg
    return torch.optim.AdamW(model.trainable_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def train_step(model: SamDaq, optimizer: torch.optim.Optimizer, clip: VideoClip):
    """One clip: forward over all frames, mean loss, backward, decoupled-decay update."""
    rgb, depth, gt = clip_tensors(clip, model.dtype)
    l_total, l_pred, l_inter = model.clip_loss(rgb, depth, gt)
    if not torch.isfinite(l_total):
        return l_total, l_pred, l_inter
    optimizer.zero_grad(set_to_none=True)
    l_total.backward()
    optimizer.step()
    return l_total.detach(), l_pred.detach(), l_inter.detach()


def train_step_closure(model: SamDaq, clip: VideoClip) -> Callable[[], None]:
    """A fresh optimizer and a callable that runs exactly one training step."""
    optimizer = make_optimizer(model)

    def step() -> None:
        train_step(model, optimizer, clip)
        optimizer.zero_grad(set_to_none=True)

    return step


@dataclass
class TrainResult:
    model: SamDaq
    history: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    checkpoint: Path | None = None


def _param_norms(model: SamDaq) -> str:
    return ", ".join(f"{n}={p.detach().norm().item():.3g}"
                     for n, p in model.named_parameters() if p.requires_grad)


def train(cfg: Config, videos: list[VideoHandle] | None = None, out_dir: str | Path | None = None,
          log_every: int = 0) -> TrainResult:
    """Train on ``videos`` (or ``cfg.data_root``), writing a per-iteration CSV log and checkpoints."""
    if videos is None:
        videos = load_video_dataset(cfg.data_root, cfg.input_size)
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = SamDaq(cfg)
    model.train()
    optimizer = make_optimizer(model)
    result = TrainResult(model)

    with open(out / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for it in range(cfg.iterations):
            start = time.perf_counter()
            video = videos[int(rng.integers(len(videos)))]
            clip = sample_clip(video, cfg.clip_length, rng)
            l_total, l_pred, l_inter = train_step(model, optimizer, clip)
            if not math.isfinite(l_total.item()):
                raise TrainingDiverged(
                    f"non-finite loss at iteration {it}; parameter norms: {_param_norms(model)}")
            ms = (time.perf_counter() - start) * 1000
            row = (it, l_pred.item(), l_inter.item(), l_total.item(), ms)
            result.history.append(row)
            writer.writerow((it, f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}", f"{ms:.1f}"))
            if log_every and it % log_every == 0:
                log.info("iter %d  L_total %.4f  L_pred %.4f", it, row[3], row[1])
            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0 and it + 1 < cfg.iterations:
                save_checkpoint(model, out / f"checkpoint_{it + 1:05d}.pt", it + 1)
    result.checkpoint = save_checkpoint(model, out / "model.pt", cfg.iterations)
    model.eval()
    return result


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(model: SamDaq, path: str | Path, iteration: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frozen, trainable = {}, {}
    for name, p in model.named_parameters():
        (trainable if p.requires_grad else frozen)[name] = p.detach().cpu().clone()
    buffers = {name: b.detach().cpu().clone() for name, b in model.named_buffers()}
    torch.save({
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "iteration": iteration,
        "frozen": frozen,
        "trainable": trainable,
        "buffers": buffers,
    }, path)
    return path


def read_checkpoint(path: str | Path) -> dict:
    try:
        archive = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:  # corrupt or foreign file
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    version = archive.get("format_version") if isinstance(archive, dict) else None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    return archive


def load_checkpoint(path: str | Path, cfg: Config | None = None) -> SamDaq:
    """Rebuild the model and load every array; any missing or mis-shaped array is an error."""
    archive = read_checkpoint(path)
    cfg = cfg or Config.from_dict(archive["config"])
    model = SamDaq(cfg)
    stored = {**archive["frozen"], **archive["trainable"], **archive.get("buffers", {})}
    targets = dict(model.named_parameters())
    targets.update(dict(model.named_buffers()))
    missing = sorted(set(targets) - set(stored))
    if missing:
        raise CheckpointError(f"checkpoint lacks array(s): {', '.join(missing)}")
    unexpected = sorted(set(stored) - set(targets))
    if unexpected:
        raise CheckpointError(f"checkpoint has unexpected array(s): {', '.join(unexpected)}")
    for name, target in targets.items():
        if tuple(stored[name].shape) != tuple(target.shape):
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {tuple(stored[name].shape)}, "
                f"model {tuple(target.shape)}")
    with torch.no_grad():
        for name, target in targets.items():
            target.copy_(stored[name].to(target.dtype))
    model.eval()
    return model


# --------------------------------------------------------------------------- inference


@torch.no_grad()
def predict_clip(model: SamDaq, clip: VideoClip) -> np.ndarray:
    """T x S x S saliency maps for the clip's frames, processed in order."""
    rgb, depth, _ = clip_tensors(clip, model.dtype)
    outs = model(rgb, depth)
    return np.stack([o.pred[0, 0].float().numpy() for o in outs])


def evaluate_model(model: SamDaq, videos: list[VideoHandle]) -> tuple[EvalResult, dict[str, EvalResult]]:
    """Mean metrics over every labeled frame, plus per-video means."""
    per_video, frames = {}, []
    for video in videos:
        clip = full_clip(video)
        preds = predict_clip(model, clip)
        scores = [evaluate_frame(p, g[0]) for p, g in zip(preds, clip.gts)]
        per_video[video.video_id] = mean_result(scores)
        frames.extend(scores)
    return mean_result(frames), per_video


def to_uint8(pred: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pred, 0, 1) * 255).astype(np.uint8)


def predict_video(checkpoint: str | Path, video_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Write one 8-bit mask per input frame; no ground truth or prompts are read."""
    model = load_checkpoint(checkpoint)
    video = load_video(video_dir, model.cfg.input_size, require_gt=False)
    clip = full_clip(video, labeled_only=False)
    preds = predict_clip(model, clip)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, pred in zip(video.frames, preds):
        path = out / f"{name}.png"
        Image.fromarray(to_uint8(pred), "L").save(path)
        written.append(path)
    return written
