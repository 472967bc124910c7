"""Synthetic RGB-D video generation, on-disk loading, and clip sampling.

On-disk layout (shared by real benchmark folders and the generator)::

    root/<video_id>/RGB/00000.png    8-bit colour (jpg also accepted)
    root/<video_id>/depth/00000.png  8- or 16-bit grayscale, small = near
    root/<video_id>/GT/00000.png     8-bit mask, >= 128 is foreground

GT may be present for only a subset of frames; only those frames are used
for supervision.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .encoder import RGBDFramePair

MODALITIES = ("RGB", "depth", "GT")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class DatasetError(Exception):
    """Malformed dataset directory."""


class MissingModalityError(DatasetError):
    pass


class FrameMismatchError(DatasetError):
    pass


def frame_name(index: int) -> str:
    return f"{index:05d}"


# --------------------------------------------------------------------------- generator


@dataclass
class SynthSceneSpec:
    seed: int
    num_frames: int = 10
    object_shape: str = "disk"        # disk | rectangle
    object_depth: float = 0.2
    distractor_count: int = 1
    velocity: float = 2.0             # pixels per frame
    noise_sigma: float = 0.02
    size: int = 64
    video_id: str = "video_000"

    def __post_init__(self):
        if self.object_shape not in ("disk", "rectangle"):
            raise ValueError(f"unknown object shape {self.object_shape!r}")
        if not 0.0 <= self.object_depth < 0.5:
            raise ValueError("object_depth must lie in [0, 0.5) so the object is nearest")


@dataclass
class _Mover:
    pos: np.ndarray
    vel: np.ndarray
    half: float

    def step(self, size: int) -> None:
        self.pos = self.pos + self.vel
        for k in range(2):
            lo, hi = self.half + 1, size - 2 - self.half
            if self.pos[k] < lo:
                self.pos[k], self.vel[k] = 2 * lo - self.pos[k], -self.vel[k]
            elif self.pos[k] > hi:
                self.pos[k], self.vel[k] = 2 * hi - self.pos[k], -self.vel[k]
            self.pos[k] = min(max(self.pos[k], lo), hi)


def _support(shape: str, centre: np.ndarray, half: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if shape == "disk":
        return (yy - centre[0]) ** 2 + (xx - centre[1]) ** 2 <= half ** 2
    return (np.abs(yy - centre[0]) <= half) & (np.abs(xx - centre[1]) <= half * 0.8)


def render_scene(spec: SynthSceneSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return float RGB (T x S x S x 3), depth (T x S x S), and bool GT (T x S x S).

    Distractors copy the object's colour and shape but sit at far depth, so
    colour alone cannot identify the salient object.
    """
    rng = np.random.default_rng(spec.seed)
    s = spec.size
    yy, xx = np.mgrid[0:s, 0:s] / max(s - 1, 1)

    base = rng.uniform(0.2, 0.8, size=3)
    tilt = rng.uniform(-0.25, 0.25, size=(2, 3))
    background = np.clip(base + yy[..., None] * tilt[0] + xx[..., None] * tilt[1], 0, 1)
    bg_depth = 0.6 + 0.35 * (yy if rng.random() < 0.5 else xx)
    colour = rng.uniform(0, 1, size=3)
    # keep the object visibly distinct from the local background colour
    colour = np.where(np.abs(colour - base) < 0.3, (base + 0.5) % 1.0, colour)

    half = s * rng.uniform(0.12, 0.2)

    def mover() -> _Mover:
        pos = rng.uniform(half + 1, s - 2 - half, size=2)
        angle = rng.uniform(0, 2 * np.pi)
        return _Mover(pos, spec.velocity * np.array([np.sin(angle), np.cos(angle)]), half)

    obj = mover()
    distractors = [mover() for _ in range(spec.distractor_count)]
    distractor_depths = rng.uniform(0.8, 0.9, size=spec.distractor_count)

    rgbs, depths, gts = [], [], []
    for _ in range(spec.num_frames):
        img = background.copy()
        dep = bg_depth.copy()
        for d, dd in zip(distractors, distractor_depths):
            m = _support(spec.object_shape, d.pos, half, s)
            img[m] = colour
            dep[m] = dd
        gt = _support(spec.object_shape, obj.pos, half, s)
        img[gt] = colour
        dep[gt] = spec.object_depth
        img = np.clip(img + rng.normal(0, spec.noise_sigma, size=img.shape), 0, 1)
        rgbs.append(img)
        depths.append(dep)
        gts.append(gt)
        obj.step(s)
        for d in distractors:
            d.step(s)
    return np.stack(rgbs), np.stack(depths), np.stack(gts)


def synth_generate(spec: SynthSceneSpec, out_dir: str | Path) -> Path:
    """Write one synthetic video under ``out_dir/<video_id>/`` and return its path."""
    rgb, depth, gt = render_scene(spec)
    root = Path(out_dir) / spec.video_id
    for sub in MODALITIES:
        (root / sub).mkdir(parents=True, exist_ok=True)
    for t in range(spec.num_frames):
        name = frame_name(t) + ".png"
        Image.fromarray(np.round(rgb[t] * 255).astype(np.uint8), "RGB").save(root / "RGB" / name)
        Image.fromarray(np.round(depth[t] * 65535).astype(np.uint16)).save(root / "depth" / name)
        Image.fromarray(gt[t].astype(np.uint8) * 255, "L").save(root / "GT" / name)
    (root / "scene.json").write_text(json.dumps(asdict(spec), indent=1, sort_keys=True))
    return root


def synth_dataset(out_dir: str | Path, seed: int = 0, videos: int = 5, frames: int = 10,
                  size: int = 64) -> list[SynthSceneSpec]:
    """A deterministic set of videos; every scene carries colour-camouflaged distractors."""
    specs = []
    for k in range(videos):
        rng = np.random.default_rng([seed, k])
        specs.append(SynthSceneSpec(
            seed=int(rng.integers(2 ** 31)),
            num_frames=frames,
            object_shape=("disk", "rectangle")[k % 2],
            object_depth=float(rng.uniform(0.1, 0.3)),
            distractor_count=1 + k % 2,
            velocity=float(rng.uniform(1.0, 3.0)) * size / 64,
            noise_sigma=0.02,
            size=size,
            video_id=f"video_{k:03d}",
        ))
    for spec in specs:
        synth_generate(spec, out_dir)
    return specs


# --------------------------------------------------------------------------- loading


def _list_frames(folder: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def read_rgb(path: Path, size: int) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return (np.asarray(img, dtype=np.float32) / 255.0).transpose(2, 0, 1)


def read_depth(path: Path, size: int) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if img.mode.startswith("I"):
        scale = 65535.0
    elif img.mode in ("L", "P"):
        scale = 255.0
    else:
        arr = np.asarray(img.convert("L"))
        scale = 255.0
    depth = np.clip(arr.astype(np.float32) / scale, 0.0, 1.0)
    if depth.shape != (size, size):
        depth = np.asarray(Image.fromarray(depth, "F").resize((size, size), Image.BILINEAR))
        depth = np.clip(depth, 0.0, 1.0)
    return depth[None].astype(np.float32)


def read_mask(path: Path, size: int | None = None) -> np.ndarray:
    img = Image.open(path).convert("L")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    return (np.asarray(img) >= 128).astype(np.float32)


@dataclass
class VideoHandle:
    """Lazily loaded video; frames are read on first access and cached."""

    video_id: str
    root: Path
    size: int
    frames: list[str]                 # all frame names with RGB+depth, sorted
    rgb_files: dict[str, Path]
    depth_files: dict[str, Path]
    gt_files: dict[str, Path]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def labeled_frames(self) -> list[str]:
        return [f for f in self.frames if f in self.gt_files]

    def __len__(self) -> int:
        return len(self.frames)

    def load(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        if name not in self._cache:
            gt = self.gt_files.get(name)
            self._cache[name] = (
                read_rgb(self.rgb_files[name], self.size),
                read_depth(self.depth_files[name], self.size),
                read_mask(gt, self.size)[None] if gt is not None else None,
            )
        return self._cache[name]


def load_video(root: str | Path, size: int, require_gt: bool = True) -> VideoHandle:
    root = Path(root)
    needed = MODALITIES if require_gt else MODALITIES[:2]
    for sub in needed:
        if not (root / sub).is_dir():
            raise MissingModalityError(f"{root.name}: missing modality folder {sub!r}")
    rgb = _list_frames(root / "RGB")
    depth = _list_frames(root / "depth")
    gt = _list_frames(root / "GT") if (root / "GT").is_dir() else {}
    only_rgb = sorted(set(rgb) - set(depth))
    only_depth = sorted(set(depth) - set(rgb))
    if only_rgb or only_depth:
        raise FrameMismatchError(
            f"{root.name}: frames without depth {only_rgb}; frames without RGB {only_depth}")
    return VideoHandle(root.name, root, size, sorted(rgb), rgb, depth, gt)


def load_video_dataset(root: str | Path, size: int, require_gt: bool = True) -> list[VideoHandle]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {str(root)!r} does not exist")
    videos = [load_video(p, size, require_gt) for p in sorted(root.iterdir()) if p.is_dir()]
    if require_gt:
        videos = [v for v in videos if v.labeled_frames]
    if not videos:
        raise DatasetError(f"no usable videos under {str(root)!r}")
    return videos


# --------------------------------------------------------------------------- clips


@dataclass
class VideoClip:
    video_id: str
    frame_indices: list[int]   # positions within the video's frame list
    rgb: np.ndarray            # T x 3 x S x S
    depth: np.ndarray          # T x 1 x S x S
    gts: np.ndarray            # T x 1 x S x S, binary

    def __len__(self) -> int:
        return len(self.frame_indices)

    @property
    def frames(self) -> list[RGBDFramePair]:
        return [RGBDFramePair(torch.from_numpy(r), torch.from_numpy(d))
                for r, d in zip(self.rgb, self.depth)]


def sample_clip(video: VideoHandle, length: int = 10,
                rng: np.random.Generator | None = None) -> VideoClip:
    """Random labeled frames in temporal order; sampled with replacement only when too few exist."""
    rng = rng if rng is not None else np.random.default_rng()
    labeled = video.labeled_frames
    if not labeled:
        raise DatasetError(f"{video.video_id}: no labeled frames")
    n = len(labeled)
    picks = np.sort(rng.choice(n, size=length, replace=n < length))
    names = [labeled[i] for i in picks]
    position = {name: i for i, name in enumerate(video.frames)}
    loaded = [video.load(name) for name in names]
    return VideoClip(
        video.video_id,
        [position[name] for name in names],
        np.stack([x[0] for x in loaded]),
        np.stack([x[1] for x in loaded]),
        np.stack([x[2] for x in loaded]),
    )


def full_clip(video: VideoHandle, labeled_only: bool = True) -> VideoClip:
    """Every (labeled) frame of a video in order, for evaluation and prediction."""
    names = video.labeled_frames if labeled_only else video.frames
    position = {name: i for i, name in enumerate(video.frames)}
    loaded = [video.load(name) for name in names]
    gts = [x[2] if x[2] is not None else np.zeros_like(x[1]) for x in loaded]
    return VideoClip(video.video_id, [position[n] for n in names],
                     np.stack([x[0] for x in loaded]), np.stack([x[1] for x in loaded]), np.stack(gts))
