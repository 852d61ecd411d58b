"""Image reconstruction metrics: L1 percentage, PSNR and SSIM.

Metric functions expect images already on a [0, 1] scale; :func:`evaluate`
maps network outputs from [-1, 1] before scoring.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PSNR_CAP = 99.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WIN, SSIM_SIGMA = 11, 1.5


@dataclass(frozen=True)
class EvalResult:
    l1_pct: float
    psnr_db: float
    ssim: float
    n_samples: int
    mask_iou: float | None = None

    def rows(self) -> list[tuple[str, float, int]]:
        out = [("l1_pct", self.l1_pct, self.n_samples), ("psnr_db", self.psnr_db, self.n_samples),
               ("ssim", self.ssim, self.n_samples)]
        if self.mask_iou is not None:
            out.append(("mask_iou", self.mask_iou, self.n_samples))
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["metric", "value", "n"])
            for name, value, n in self.rows():
                wr.writerow([name, repr(float(value)), n])


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def l1_pct(a: np.ndarray, b: np.ndarray, value_range: float = 1.0) -> float:
    _same_shape(a, b)
    diff = np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))
    return float(diff.mean() / value_range * 100.0)


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0, cap: float = PSNR_CAP) -> float:
    _same_shape(a, b)
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(max_val ** 2 / mse))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation keeping only fully-covered windows."""
    k = len(g)
    h, w = img.shape
    rows = sum(g[i] * img[i:h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j:w - k + 1 + j] for j in range(k))


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g) - mu_a ** 2
    s_bb = _filter_valid(b * b, g) - mu_b ** 2
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * s_ab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (s_aa + s_bb + c2))


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean local SSIM; (C,H,W) inputs are scored per channel and averaged."""
    _same_shape(a, b)
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 2:
        return float(ssim_map(a, b, data_range).mean())
    return float(np.mean([ssim_map(a[c], b[c], data_range).mean() for c in range(a.shape[0])]))


def mask_iou(pred: np.ndarray, target: np.ndarray, threshold: float = 0.5) -> float:
    p = np.asarray(pred) > threshold
    t = np.asarray(target) > threshold
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def to_unit(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, np.float64) + 1.0) / 2.0


def evaluate_arrays(y_pred: np.ndarray, y_true: np.ndarray, z_pred: np.ndarray | None = None,
                    z_true: np.ndarray | None = None) -> EvalResult:
    """Average per-image metrics over a batch of [-1, 1] images."""
    n = len(y_true)
    if n == 0:
        raise ValueError("empty split")
    _same_shape(y_pred, y_true)
    a, b = to_unit(y_pred), to_unit(y_true)
    l1s = [l1_pct(a[i], b[i]) for i in range(n)]
    ps = [psnr(a[i], b[i]) for i in range(n)]
    ss = [ssim(a[i], b[i]) for i in range(n)]
    iou = None
    if z_pred is not None and z_true is not None:
        iou = float(np.mean([mask_iou(z_pred[i], z_true[i]) for i in range(n)]))
    return EvalResult(float(np.mean(l1s)), float(np.mean(ps)), float(np.mean(ss)), n, iou)


def evaluate(generator, dataset) -> EvalResult:
    """Score a generator's background predictions on a dataset split."""
    from .training import predict

    if len(dataset) == 0:
        raise ValueError("empty split")
    y_p, z_p, _ = predict(generator, dataset.x)
    return evaluate_arrays(y_p, dataset.y, z_p, dataset.z if z_p is not None else None)
