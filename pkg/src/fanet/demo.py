"""Procedural stand-ins for face photographs and backdrop images.

Genuine images are face-like: a shaded ellipse with eyes and mouth on a
smooth backdrop, overlaid with fine sensor grain. The grain is the cue a
recapture destroys, so the synthetic corpus is learnable by construction.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageops import gaussian_blur, load_png, quantize8, save_png

DEMO_SIZE = 128
DEMO_GENUINE = 40
DEMO_BACKGROUNDS = 10


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2


def genuine_image(rng, size=DEMO_SIZE):
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    bg = rng.uniform(0.2, 0.5) + rng.uniform(-0.15, 0.15) * xx + rng.uniform(-0.15, 0.15) * yy
    bg = bg + 0.08 * gaussian_blur(rng.normal(size=(size, size)), size / 10.0) * (size / 10.0)
    cy, cx = rng.uniform(0.45, 0.55), rng.uniform(0.42, 0.58)
    ry, rx = rng.uniform(0.3, 0.4), rng.uniform(0.22, 0.3)
    r = _ellipse(yy, xx, cy, cx, ry, rx)
    tone = rng.uniform(0.55, 0.75)
    face = tone * (1.0 - 0.25 * r) + 0.1 * (xx - cx)
    mask = gaussian_blur((r <= 1.0).astype(float), 1.2)
    img = mask * face + (1.0 - mask) * bg
    dark = np.zeros_like(img)
    ey, ex = cy - 0.25 * ry, 0.4 * rx
    for sx in (-1, 1):
        dark += _ellipse(yy, xx, ey, cx + sx * ex, 0.05, 0.07) <= 1.0
    dark += 0.7 * (_ellipse(yy, xx, cy + 0.5 * ry, cx, 0.035, 0.4 * rx) <= 1.0)
    img = img - 0.3 * gaussian_blur(dark, 0.8)
    grain = 0.035 * rng.normal(size=(size, size)) + 0.04 * gaussian_blur(rng.normal(size=(size, size)), 0.6)
    return quantize8(np.clip(img + grain, 0.02, 0.98))


def background_image(rng, size=DEMO_SIZE):
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(3, 12)
    stripes = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
    base = rng.uniform(0.3, 0.7) + rng.uniform(-0.2, 0.2) * yy
    blobs = gaussian_blur(rng.normal(size=(size, size)), size / 8.0) * (size / 8.0)
    return quantize8(np.clip(base + 0.12 * stripes + 0.1 * blobs, 0.0, 1.0))


def genuine_images(n, seed, size=DEMO_SIZE, prefix="g"):
    rng = np.random.default_rng([seed, 1])
    return {f"{prefix}{i:05d}": genuine_image(rng, size) for i in range(n)}


def background_images(n, seed, size=DEMO_SIZE, prefix="b"):
    rng = np.random.default_rng([seed, 2])
    return {f"{prefix}{i:03d}": background_image(rng, size) for i in range(n)}


def write_demo_corpus(root, seed=0, n_genuine=DEMO_GENUINE, n_backgrounds=DEMO_BACKGROUNDS, size=DEMO_SIZE):
    """Write ``genuine/*.png`` and ``backgrounds/*.png`` under ``root``."""
    root = Path(root)
    for sub, images in (("genuine", genuine_images(n_genuine, seed, size)),
                        ("backgrounds", background_images(n_backgrounds, seed, size))):
        (root / sub).mkdir(parents=True, exist_ok=True)
        for name, img in images.items():
            save_png(root / sub / f"{name}.png", img)
    return root


def load_image_dir(path):
    """``{stem: pixels}`` for every PNG in a directory, sorted by name."""
    path = Path(path)
    if not path.is_dir():
        from .errors import DependencyError

        raise DependencyError(f"image directory {path} does not exist")
    return {p.stem: load_png(p) for p in sorted(path.glob("*.png"))}


def bundled_demo_dir():
    """Location of the demo images shipped with the repository checkout."""
    return Path(__file__).resolve().parents[2] / "data" / "demo"
