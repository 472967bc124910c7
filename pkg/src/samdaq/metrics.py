"""Saliency evaluation: E-measure, S-measure, F-measure (adaptive threshold) and MAE.

All functions take a prediction in [0, 1] and a ground-truth mask (any
values; >= 0.5 is foreground) as 2-D numpy arrays.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

BETA2 = 0.3
ALIGN_EPS = 1e-8
_EPS = np.finfo(np.float64).eps


def _prep(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt.astype(np.float64) >= 0.5


def adaptive_binarize(pred: np.ndarray) -> np.ndarray:
    """``pred >= min(2 * mean, 1)``; an all-zero map stays empty."""
    threshold = min(2.0 * pred.mean(), 1.0)
    return (pred >= threshold) & (pred > 0)


def mae(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return float(np.abs(pred - gt).mean())


def f_measure(pred, gt, beta2: float = BETA2) -> float:
    pred, gt = _prep(pred, gt)
    binary = adaptive_binarize(pred)
    if not gt.any():
        return 1.0 if not binary.any() else 0.0
    tp = np.count_nonzero(binary & gt)
    if tp == 0:
        return 0.0
    precision = tp / np.count_nonzero(binary)
    recall = tp / np.count_nonzero(gt)
    return float((1 + beta2) * precision * recall / (beta2 * precision + recall))


def e_measure(pred, gt) -> float:
    pred, gt = _prep(pred, gt)
    binary = adaptive_binarize(pred).astype(np.float64)
    g = gt.astype(np.float64)
    if not gt.any():
        return float(1.0 - binary.mean())
    if gt.all():
        return float(binary.mean())
    phi_p = binary - binary.mean()
    phi_g = g - g.mean()
    align = 2 * phi_p * phi_g / (phi_p ** 2 + phi_g ** 2 + ALIGN_EPS)
    return float(((1 + align) ** 2 / 4).mean())


# ---- S-measure


def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2 * x / (x * x + 1 + sigma + _EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    u = gt.mean()
    fg = _object_score(pred[gt]) if gt.any() else 0.0
    bg = _object_score(1 - pred[~gt]) if (~gt).any() else 0.0
    return u * fg + (1 - u) * bg


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    x, y = pred.mean(), gt.mean()
    denom = max(n - 1, 1)
    sx = ((pred - x) ** 2).sum() / denom
    sy = ((gt - y) ** 2).sum() / denom
    sxy = ((pred - x) * (gt - y)).sum() / denom
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0 else 0.0


def centroid_splits(gt: np.ndarray, axis: int) -> list[int]:
    """Block boundaries along ``axis`` at the foreground centroid.

    Pixel k spans [k, k + 1], so the centroid sits at ``mean(index) + 0.5`` and
    the split goes to the nearest pixel boundary.  When the centroid is exactly
    on a pixel centre both neighbouring boundaries are returned and the region
    score averages them, which keeps the measure mirror-symmetric.
    """
    idx = np.nonzero(gt)[axis]
    n = gt.shape[axis]
    if idx.size == 0:
        return [n // 2]
    pos = Fraction(int(idx.sum()), int(idx.size)) + Fraction(1, 2)
    lo = pos.numerator // pos.denominator
    frac = pos - lo
    if frac < Fraction(1, 2):
        return [lo]
    if frac > Fraction(1, 2):
        return [lo + 1]
    return [lo, lo + 1]


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    g = gt.astype(np.float64)
    ys, xs = centroid_splits(gt, 0), centroid_splits(gt, 1)
    total = 0.0
    for y in ys:
        for x in xs:
            score = 0.0
            for rs in (slice(0, y), slice(y, h)):
                for cs in (slice(0, x), slice(x, w)):
                    block_p, block_g = pred[rs, cs], g[rs, cs]
                    if block_p.size == 0:
                        continue
                    score += block_p.size / (h * w) * _ssim(block_p, block_g)
            total += score
    return total / (len(ys) * len(xs))


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, gt = _prep(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1 - alpha) * _s_region(pred, gt)
    return float(max(score, 0.0))


# ---- dataset-level evaluation


@dataclass
class EvalResult:
    e_measure: float
    s_measure: float
    f_measure: float
    mae: float

    def row(self) -> tuple[float, float, float, float]:
        return self.e_measure, self.s_measure, self.f_measure, self.mae


def evaluate_frame(pred, gt) -> EvalResult:
    return EvalResult(e_measure(pred, gt), s_measure(pred, gt), f_measure(pred, gt), mae(pred, gt))


def mean_result(results: list[EvalResult]) -> EvalResult:
    if not results:
        raise ValueError("no frames to average")
    arr = np.array([r.row() for r in results])
    return EvalResult(*(float(v) for v in arr.mean(axis=0)))


class MissingFrameError(FileNotFoundError):
    pass


def _mask_files(folder: Path) -> dict[str, Path]:
    exts = {".png", ".jpg", ".jpeg", ".bmp"}
    return {str(p.relative_to(folder).with_suffix("")): p
            for p in sorted(folder.rglob("*")) if p.suffix.lower() in exts}


def evaluate_dataset(pred_dir, gt_dir) -> tuple[EvalResult, list[tuple[str, EvalResult]]]:
    """Score every ground-truth frame against the same-named prediction.

    Predictions are read as 8-bit grayscale scaled to [0, 1]; ground truth is
    thresholded at 128.  Matching is by relative path without extension, so
    both flat and per-video trees work.
    """
    from PIL import Image

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gts = _mask_files(gt_dir)
    preds = _mask_files(pred_dir)
    if not gts:
        raise MissingFrameError(f"no ground-truth masks under {str(gt_dir)!r}")
    missing = [k for k in gts if k not in preds]
    if missing:
        raise MissingFrameError(f"no prediction for frame(s): {', '.join(missing)}")
    per_frame = []
    for key, gt_path in gts.items():
        gt = np.asarray(Image.open(gt_path).convert("L")) >= 128
        pimg = Image.open(preds[key]).convert("L")
        if pimg.size != (gt.shape[1], gt.shape[0]):
            pimg = pimg.resize((gt.shape[1], gt.shape[0]), Image.BILINEAR)
        pred = np.asarray(pimg, dtype=np.float64) / 255.0
        per_frame.append((key, evaluate_frame(pred, gt)))
    return mean_result([r for _, r in per_frame]), per_frame


COLUMNS = ("E_xi", "S_alpha", "F_beta", "MAE")


def write_results_csv(path, mean: EvalResult, per_frame: list[tuple[str, EvalResult]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("frame",) + COLUMNS)
        for key, r in per_frame:
            writer.writerow((key,) + tuple(f"{v:.6f}" for v in r.row()))
        writer.writerow(("mean",) + tuple(f"{v:.6f}" for v in mean.row()))


def markdown_table(rows: list[tuple[str, EvalResult]], first: str = "Method") -> str:
    lines = [f"| {first} | E_xi ↑ | S_alpha ↑ | F_beta ↑ | M ↓ |", "|---|---|---|---|---|"]
    for name, r in rows:
        lines.append(f"| {name} | " + " | ".join(f"{v:.3f}" for v in r.row()) + " |")
    return "\n".join(lines)


def as_dict(r: EvalResult) -> dict[str, float]:
    return asdict(r)
