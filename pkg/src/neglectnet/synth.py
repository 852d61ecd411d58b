"""Procedural (composite, background, mask) triples.

Backgrounds are smooth gradients, multi-octave value noise or flat shape
collages; foregrounds are glyph-like stroke clusters, polygons or blobs drawn
supersampled so their alpha has a soft edge.  Each sample draws from its own
generator seeded by ``(seed, index)``, so any subset can be regenerated alone.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import imageio
from .config import SynthConfig

MANIFEST_COLUMNS = ["index", "seed", "margin", "bbox"]


@dataclass
class Sample:
    x: np.ndarray  # (3,H,W) composite in [-1,1]
    y_g: np.ndarray  # (3,H,W) background in [-1,1]
    z_g: np.ndarray  # (1,H,W) alpha in [0,1]
    fg: np.ndarray  # (3,H,W) foreground colours
    margin: int = 0
    bbox: tuple[int, int, int, int] = (0, 0, 0, 0)  # top, left, bottom, right (exclusive)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    manifest: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, idx) -> Dataset:
        return Dataset(self.x[idx], self.y[idx], self.z[idx], [self.manifest[i] for i in np.atleast_1d(idx)]
                       if self.manifest else [])


def blend(fg: np.ndarray, alpha: np.ndarray, bg: np.ndarray) -> np.ndarray:
    return (alpha * fg + (1.0 - alpha) * bg).astype(np.float32)


def _resize(a: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize of a 2-D float array."""
    img = Image.fromarray(np.ascontiguousarray(a, dtype=np.float32), mode="F")
    return np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float32)


def _pick(rng: np.random.Generator, weights) -> int:
    p = np.asarray(weights, dtype=np.float64)
    return int(rng.choice(len(p), p=p / p.sum()))


def _random_color(rng) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=3)


# --------------------------------------------------------------- background


def _bg_gradient(h, w, rng):
    c0 = _random_color(rng)
    c1 = _random_color(rng)
    while np.abs(c1 - c0).max() < 0.4:
        c1 = _random_color(rng)
    theta = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    t = xx * math.cos(theta) + yy * math.sin(theta)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-6)
    return c0[:, None, None] * (1 - t) + c1[:, None, None] * t


def _bg_noise(h, w, rng, octaves=4):
    base = _random_color(rng) * 0.5
    img = np.zeros((3, h, w))
    amp = 1.0
    for o in range(octaves):
        g = 2 ** (o + 1) + 1
        for c in range(3):
            img[c] += amp * _resize(rng.uniform(-1, 1, size=(g, g)), h, w)
        amp *= 0.5
    return base[:, None, None] + 0.6 * img / 1.875


def _bg_shapes(h, w, rng):
    col = tuple(int(v) for v in rng.integers(0, 256, size=3))
    im = Image.new("RGB", (w, h), col)
    draw = ImageDraw.Draw(im)
    for _ in range(int(rng.integers(3, 9))):
        x0, x1 = sorted(rng.uniform(-0.2, 1.2, size=2) * w)
        y0, y1 = sorted(rng.uniform(-0.2, 1.2, size=2) * h)
        fill = tuple(int(v) for v in rng.integers(0, 256, size=3))
        if rng.random() < 0.5:
            draw.rectangle([x0, y0, x1, y1], fill=fill)
        else:
            draw.ellipse([x0, y0, x1, y1], fill=fill)
    return np.asarray(im, dtype=np.float64).transpose(2, 0, 1) / 127.5 - 1.0


def synth_background(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = config.image_h, config.image_w
    makers = (_bg_gradient, _bg_noise, _bg_shapes)
    while True:
        img = np.clip(makers[_pick(rng, config.bg_mix)](h, w, rng), -1.0, 1.0).astype(np.float32)
        if img.std() > 0.01:
            return img


# --------------------------------------------------------------- foreground


def _draw_strokes(draw, bw, bh, rng):
    side = min(bw, bh)
    width = max(1, int(side * rng.uniform(0.15, 0.3)))
    # two spanning strokes pin the cluster to the full box
    draw.line([(0, rng.uniform(0, bh)), (bw - 1, rng.uniform(0, bh))], fill=255, width=width)
    draw.line([(rng.uniform(0, bw), 0), (rng.uniform(0, bw), bh - 1)], fill=255, width=width)
    for _ in range(int(rng.integers(1, 5))):
        pts = [(rng.uniform(0, bw), rng.uniform(0, bh)) for _ in range(int(rng.integers(2, 5)))]
        if rng.random() < 0.3:
            x0, x1 = sorted(rng.uniform(0, bw, size=2))
            y0, y1 = sorted(rng.uniform(0, bh, size=2))
            a0 = rng.uniform(0, 360)
            draw.arc([x0, y0, x1 + 1, y1 + 1], a0, a0 + rng.uniform(90, 300), fill=255, width=width)
        else:
            draw.line(pts, fill=255, width=width, joint="curve")


def _draw_polygon(draw, bw, bh, rng):
    n = int(rng.integers(5, 10))
    angles = np.sort(rng.uniform(0, 2 * math.pi, size=n))
    angles = np.concatenate([angles, [0, math.pi / 2, math.pi, 3 * math.pi / 2]])
    radii = rng.uniform(0.6, 1.0, size=len(angles))
    radii[-4:] = 1.0
    order = np.argsort(angles)
    cx, cy = (bw - 1) / 2, (bh - 1) / 2
    pts = [(cx + cx * radii[k] * math.cos(angles[k]), cy + cy * radii[k] * math.sin(angles[k])) for k in order]
    draw.polygon(pts, fill=255)


def _draw_blob(draw, bw, bh, rng):
    draw.ellipse([0, 0, bw - 1, bh - 1], fill=255)
    for _ in range(int(rng.integers(2, 6))):
        x0, x1 = sorted(rng.uniform(0, bw, size=2))
        y0, y1 = sorted(rng.uniform(0, bh, size=2))
        draw.ellipse([x0, y0, x1, y1], fill=int(rng.choice([0, 255])))


def synth_foreground(config: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Foreground colours (3,H,W) and soft alpha (1,H,W), centred in the frame."""
    h, w = config.image_h, config.image_w
    ss = config.supersample
    drawers = (_draw_strokes, _draw_polygon, _draw_blob)
    lo_h, hi_h = math.ceil(config.fg_min_frac * h), math.floor(config.fg_max_frac * h)
    lo_w, hi_w = math.ceil(config.fg_min_frac * w), math.floor(config.fg_max_frac * w)
    style = _pick(rng, config.fg_mix)
    while True:
        bh = int(rng.integers(lo_h, hi_h + 1))
        bw = int(rng.integers(lo_w, hi_w + 1))
        canvas = Image.new("L", (bw * ss, bh * ss), 0)
        drawers[style](ImageDraw.Draw(canvas), bw * ss, bh * ss, rng)
        patch = np.asarray(canvas, dtype=np.float64).reshape(bh, ss, bw, ss).mean(axis=(1, 3)) / 255.0
        rows = np.flatnonzero(patch.max(axis=1) > 0)
        cols = np.flatnonzero(patch.max(axis=0) > 0)
        if len(rows) and rows[-1] - rows[0] + 1 >= lo_h and cols[-1] - cols[0] + 1 >= lo_w:
            break
    alpha = np.zeros((1, h, w), dtype=np.float32)
    top, left = (h - bh) // 2, (w - bw) // 2
    alpha[0, top:top + bh, left:left + bw] = patch

    c0, c1 = _random_color(rng), _random_color(rng)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    t = np.clip(0.5 + 0.5 * (xx - yy) * rng.uniform(-1, 1), 0, 1)
    colors = c0[:, None, None] * (1 - 0.3 * t) + 0.3 * c1[:, None, None] * t
    return np.clip(colors, -1, 1).astype(np.float32), alpha


# ---------------------------------------------------------------- compositing


def alpha_bbox(alpha: np.ndarray) -> tuple[int, int, int, int] | None:
    a = alpha.reshape(alpha.shape[-2:])
    rows = np.flatnonzero(a.max(axis=1) > 0)
    cols = np.flatnonzero(a.max(axis=0) > 0)
    if not len(rows):
        return None
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


def compose(background: np.ndarray, foreground: np.ndarray, alpha: np.ndarray, rng: np.random.Generator,
            max_margin_frac: float = 0.5, margin: int | None = None) -> Sample:
    """Re-place the foreground's bounding box with a random margin and blend.

    The margin is the distance from the box to the nearest image edge, drawn
    from [0, max_margin_frac * box side]; ``margin`` pins it.
    """
    _, h, w = background.shape
    if foreground.shape[0] != 3 or alpha.shape[-2:] != foreground.shape[-2:]:
        raise ValueError("foreground must be (3,h,w) with a matching (1,h,w) alpha")
    box = alpha_bbox(alpha)
    y_g = background.astype(np.float32)
    if box is None:
        zeros = np.zeros((1, h, w), np.float32)
        return Sample(x=y_g.copy(), y_g=y_g, z_g=zeros, fg=np.zeros_like(y_g), margin=0, bbox=(0, 0, 0, 0))
    r0, c0, r1, c1 = box
    bh, bw = r1 - r0, c1 - c0
    if bh > h or bw > w:
        raise ValueError(f"foreground {bh}x{bw} larger than image {h}x{w}")
    m_fit = min((h - bh) // 2, (w - bw) // 2)
    if margin is None:
        margin = int(rng.uniform(0, max_margin_frac * max(bh, bw) + 1))
    margin = max(0, min(int(margin), m_fit))
    side = int(rng.integers(4))  # which edge sits at exactly `margin`
    if side in (0, 1):
        top = margin if side == 0 else h - bh - margin
        left = int(rng.integers(margin, w - bw - margin + 1))
    else:
        left = margin if side == 2 else w - bw - margin
        top = int(rng.integers(margin, h - bh - margin + 1))

    z_g = np.zeros((1, h, w), np.float32)
    z_g[:, top:top + bh, left:left + bw] = alpha[..., r0:r1, c0:c1].reshape(1, bh, bw)
    fg = np.zeros((3, h, w), np.float32)
    fg[:, top:top + bh, left:left + bw] = foreground[:, r0:r1, c0:c1]
    return Sample(x=blend(fg, z_g, y_g), y_g=y_g, z_g=z_g, fg=fg, margin=margin,
                  bbox=(top, left, top + bh, left + bw))


def augment(sample: Sample, rng: np.random.Generator, config: SynthConfig) -> Sample:
    """Flip, crop-and-resize and brightness/contrast jitter; the composite is rebuilt afterwards."""
    y, fg, z = sample.y_g, sample.fg, sample.z_g
    _, h, w = y.shape
    bbox = sample.bbox
    if config.flip_prob > 0 and rng.random() < config.flip_prob:
        y, fg, z = y[..., ::-1], fg[..., ::-1], z[..., ::-1]
        bbox = (bbox[0], w - bbox[3], bbox[2], w - bbox[1])
    crop = int(rng.integers(0, int(config.max_crop_frac * min(h, w)) + 1)) if config.max_crop_frac > 0 else 0
    if crop > 0:
        top, left = int(rng.integers(0, crop + 1)), int(rng.integers(0, crop + 1))
        hh, ww = h - crop, w - crop

        def rc(a):
            return np.stack([_resize(ch[top:top + hh, left:left + ww], h, w) for ch in a])

        y, fg, z = rc(y), rc(fg), np.clip(rc(z), 0.0, 1.0)
        bbox = alpha_bbox(z) or (0, 0, 0, 0)
    if config.brightness > 0 or config.contrast > 0:
        gain = 1.0 + rng.uniform(-config.contrast, config.contrast)
        shift = rng.uniform(-config.brightness, config.brightness)
        y = np.clip(gain * y + shift, -1, 1)
        fg = np.clip(gain * fg + shift, -1, 1)
    y = np.ascontiguousarray(y, dtype=np.float32)
    fg = np.ascontiguousarray(fg, dtype=np.float32)
    z = np.ascontiguousarray(z, dtype=np.float32)
    return replace(sample, x=blend(fg, z, y), y_g=y, z_g=z, fg=fg, bbox=bbox)


def make_sample(config: SynthConfig, index: int) -> Sample:
    rng = np.random.default_rng([config.seed, index])
    bg = synth_background(config, rng)
    colors, alpha = synth_foreground(config, rng)
    sample = compose(bg, colors, alpha, rng, config.max_margin_frac)
    return augment(sample, rng, config)


# ------------------------------------------------------------------ datasets


def make_dataset(config: SynthConfig, n: int, root: str | Path | None = None, split: str = "train") -> Dataset:
    """Generate ``n`` samples; with ``root`` also write PNGs and ``manifest.csv``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    samples = [make_sample(config, i) for i in range(n)]
    manifest = [{"index": i, "seed": config.seed, "margin": s.margin, "bbox": " ".join(map(str, s.bbox))}
                for i, s in enumerate(samples)]
    ds = Dataset(np.stack([s.x for s in samples]), np.stack([s.y_g for s in samples]),
                 np.stack([s.z_g for s in samples]), manifest)
    if root is not None:
        write_split(ds, root, split)
    return ds


def write_split(ds: Dataset, root: str | Path, split: str) -> Path:
    d = Path(root) / split
    d.mkdir(parents=True, exist_ok=True)
    for i in range(len(ds)):
        imageio.save_rgb(d / f"{i:05d}_x.png", ds.x[i])
        imageio.save_rgb(d / f"{i:05d}_y.png", ds.y[i])
        imageio.save_mask(d / f"{i:05d}_z.png", ds.z[i])
    rows = ds.manifest or [{"index": i, "seed": "", "margin": "", "bbox": ""} for i in range(len(ds))]
    with open(d / "manifest.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        wr.writeheader()
        wr.writerows(rows)
    return d


def load_split(root: str | Path, split: str) -> Dataset:
    """Read a split written by :func:`write_split` (or user triples in the same layout)."""
    d = Path(root) / split
    mf = d / "manifest.csv"
    if not mf.is_file():
        raise FileNotFoundError(f"no manifest at {mf}")
    with open(mf, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"split {d} is empty")
    xs, ys, zs = [], [], []
    for r in rows:
        stem = d / f"{int(r['index']):05d}"
        xs.append(imageio.load_rgb(f"{stem}_x.png"))
        ys.append(imageio.load_rgb(f"{stem}_y.png"))
        zs.append(imageio.load_mask(f"{stem}_z.png"))
    return Dataset(np.stack(xs), np.stack(ys), np.stack(zs), rows)
