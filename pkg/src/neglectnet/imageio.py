"""8-bit PNG I/O with the [-1, 1] <-> uint8 mapping used everywhere else."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def rgb_to_uint8(img: np.ndarray) -> np.ndarray:
    """(3,H,W) in [-1,1] -> (H,W,3) uint8."""
    return np.clip(np.round((np.asarray(img, np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def uint8_to_rgb(arr: np.ndarray) -> np.ndarray:
    """(H,W,3) uint8 -> (3,H,W) float32 in [-1,1]."""
    return (arr.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1).copy()


def mask_to_uint8(mask: np.ndarray) -> np.ndarray:
    """(1,H,W) or (H,W) in [0,1] -> (H,W) uint8."""
    m = np.asarray(mask, np.float64).reshape(np.shape(mask)[-2:])
    return np.clip(np.round(m * 255.0), 0, 255).astype(np.uint8)


def uint8_to_mask(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / 255.0)[None]


def save_rgb(path: str | Path, img: np.ndarray) -> None:
    Image.fromarray(rgb_to_uint8(img), mode="RGB").save(path, format="PNG")


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray(mask_to_uint8(mask), mode="L").save(path, format="PNG")


def load_rgb(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return uint8_to_rgb(np.asarray(im.convert("RGB")))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def load_mask(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return uint8_to_mask(np.asarray(im.convert("L")))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
