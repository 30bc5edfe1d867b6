"""Synthetic recapture generator and labeled corpus builder.

Spoof pipeline, in order: Gaussian blur, alpha blend onto a background,
perspective warp (bilinear; pixels mapped from outside the frame take the
background), crop, then a bilinear resize back to the source size when the
crop is not the full frame.

Homographies act on normalized coordinates (0..1 on both axes) and map
source to destination; the warp samples through the inverse.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, RejectedInputError
from .imageops import gaussian_blur, load_png, quantize8, resize, save_png

GENUINE = 1
SPOOF = 0
FULL_FRAME = (0.0, 0.0, 1.0, 1.0)
# (blur sigma, noise std) per ladder level; level 0 is pristine. The noise is
# strong enough to bury the sensor grain a forensic model keys on.
DEFAULT_LADDER = ((0.0, 0.0), (1.0, 0.04), (2.0, 0.06), (4.0, 0.08))
MANIFEST_COLUMNS = (
    "id", "label", "group", "genuine_src", "background_src",
    "blur_sigma", "blend_alpha",
    "h00", "h01", "h02", "h10", "h11", "h12", "h20", "h21", "h22",
    "crop_x", "crop_y", "crop_w", "crop_h", "synth_seed",
    "degrade_level", "degrade_blur", "degrade_noise", "degrade_seed",
)


@dataclass(frozen=True)
class SynthParams:
    blur_sigma: float = 0.0
    blend_alpha: float = 1.0
    homography: tuple = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
    crop_rect: tuple = FULL_FRAME
    seed: int = 0

    def __post_init__(self):
        h = tuple(float(v) for v in np.asarray(self.homography, dtype=np.float64).ravel())
        if len(h) != 9:
            raise RejectedInputError("homography must have 9 entries")
        object.__setattr__(self, "homography", h)
        object.__setattr__(self, "blur_sigma", float(self.blur_sigma))
        object.__setattr__(self, "blend_alpha", float(self.blend_alpha))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "crop_rect", tuple(float(v) for v in self.crop_rect))
        self.validate()

    @property
    def matrix(self):
        return np.array(self.homography).reshape(3, 3)

    def validate(self):
        vals = (self.blur_sigma, self.blend_alpha) + self.homography + self.crop_rect
        if not all(math.isfinite(v) for v in vals):
            raise RejectedInputError("synthesis parameters must be finite")
        if self.blur_sigma < 0:
            raise RejectedInputError("blur_sigma must be nonnegative")
        if not 0.0 <= self.blend_alpha <= 1.0:
            raise RejectedInputError("blend_alpha must lie in [0, 1]")
        if abs(np.linalg.det(self.matrix)) <= 1e-9:
            raise RejectedInputError("homography is degenerate (|det| <= 1e-9)")
        x, y, w, h = self.crop_rect
        eps = 1e-12
        if w <= 0 or h <= 0 or x < -eps or y < -eps or x + w > 1 + eps or y + h > 1 + eps:
            raise RejectedInputError(f"crop rectangle {self.crop_rect} leaves the frame")


@dataclass(frozen=True)
class SynthRanges:
    blur: tuple = (0.5, 3.0)
    alpha: tuple = (0.85, 1.0)
    jitter: float = 0.08
    crop: tuple = (0.70, 0.95)

    def __post_init__(self):
        for name in ("blur", "alpha", "crop"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise RejectedInputError(f"{name} range [{lo}, {hi}] is empty")
        if self.blur[0] < 0 or not (0 <= self.alpha[0] and self.alpha[1] <= 1):
            raise RejectedInputError("blur must be >= 0 and alpha within [0, 1]")
        if not (0 < self.crop[0] and self.crop[1] <= 1):
            raise RejectedInputError("crop fractions must lie in (0, 1]")
        if not 0 <= self.jitter < 0.25:
            raise RejectedInputError("corner jitter must lie in [0, 0.25)")


def homography_from_points(src, dst):
    """Direct linear solve for the 3x3 map (h22 = 1) taking 4 points to 4 points."""
    a, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b += [u, v]
    h = np.linalg.solve(np.array(a, dtype=np.float64), np.array(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


_CORNERS = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))


def sample_params(rng, ranges=None, *, seed=0, crop=True):
    ranges = ranges or SynthRanges()
    blur = rng.uniform(*ranges.blur)
    alpha = rng.uniform(*ranges.alpha)
    dst = [(x + rng.uniform(-ranges.jitter, ranges.jitter), y + rng.uniform(-ranges.jitter, ranges.jitter))
           for x, y in _CORNERS]
    hom = homography_from_points(_CORNERS, dst)
    s = rng.uniform(*ranges.crop)
    x0, y0 = rng.uniform(0.0, 1.0 - s), rng.uniform(0.0, 1.0 - s)
    rect = (x0, y0, s, s) if crop else FULL_FRAME
    return SynthParams(blur, alpha, tuple(hom.ravel()), rect, int(seed))


def crop_pixels(img, rect):
    h, w = img.shape
    x, y, cw, ch = rect
    c0 = min(int(math.floor(x * w + 1e-9)), w - 1)
    r0 = min(int(math.floor(y * h + 1e-9)), h - 1)
    c1 = min(max(c0 + 1, int(math.floor((x + cw) * w + 1e-9))), w)
    r1 = min(max(r0 + 1, int(math.floor((y + ch) * h + 1e-9))), h)
    return img[r0:r1, c0:c1]


def synthesize_spoof(genuine, background, p):
    """Recapture ``genuine`` through the blur/blend/warp/crop pipeline."""
    if not isinstance(p, SynthParams):
        raise RejectedInputError("p must be SynthParams")
    g = np.asarray(genuine, dtype=np.float64)
    if g.ndim != 2:
        raise RejectedInputError("genuine image must be 2-D gray")
    bg = np.asarray(background, dtype=np.float64)
    if bg.shape != g.shape:
        bg = resize(bg, g.shape)
    blurred = gaussian_blur(g, p.blur_sigma)
    blended = p.blend_alpha * blurred + (1.0 - p.blend_alpha) * bg
    warped = kernels.warp_perspective(blended, np.linalg.inv(p.matrix), bg)
    out = crop_pixels(warped, p.crop_rect)
    if out.shape != g.shape:
        out = resize(out, g.shape)
    return np.clip(out, 0.0, 1.0)


def degrade(img, blur, noise, seed):
    """Quality degradation: blur, then seeded Gaussian noise, then clipping."""
    out = gaussian_blur(np.asarray(img, dtype=np.float64), blur)
    if noise > 0:
        out = out + noise * np.random.default_rng(seed).normal(size=out.shape)
    return np.clip(out, 0.0, 1.0)


def tile_patches(img, patch):
    """Non-overlapping ``patch x patch`` tiles in row-major order."""
    h, w = img.shape
    if patch < 32 or patch > min(h, w):
        raise RejectedInputError(f"patch size {patch} does not fit a {h}x{w} image")
    return {f"r{r}c{c}": img[r * patch:(r + 1) * patch, c * patch:(c + 1) * patch]
            for r in range(h // patch) for c in range(w // patch)}


@dataclass
class SampleRecord:
    id: str
    label: int
    group: str
    genuine_src: str
    background_src: str = ""
    params: SynthParams | None = None
    degrade_level: int = 0
    degrade_blur: float = 0.0
    degrade_noise: float = 0.0
    degrade_seed: int = 0

    def row(self):
        p = self.params
        out = {"id": self.id, "label": "genuine" if self.label == GENUINE else "spoof",
               "group": self.group, "genuine_src": self.genuine_src,
               "background_src": self.background_src}
        if p is None:
            for col in MANIFEST_COLUMNS[5:21]:
                out[col] = ""
        else:
            out["blur_sigma"] = repr(float(p.blur_sigma))
            out["blend_alpha"] = repr(float(p.blend_alpha))
            for k, v in enumerate(p.homography):
                out[f"h{k // 3}{k % 3}"] = repr(float(v))
            for col, v in zip(("crop_x", "crop_y", "crop_w", "crop_h"), p.crop_rect):
                out[col] = repr(float(v))
            out["synth_seed"] = str(p.seed)
        out["degrade_level"] = str(self.degrade_level)
        out["degrade_blur"] = repr(float(self.degrade_blur))
        out["degrade_noise"] = repr(float(self.degrade_noise))
        out["degrade_seed"] = str(self.degrade_seed)
        return out

    @classmethod
    def from_row(cls, row):
        try:
            label = {"genuine": GENUINE, "spoof": SPOOF}[row["label"]]
            params = None
            if row["blur_sigma"]:
                hom = tuple(float(row[f"h{i}{j}"]) for i in range(3) for j in range(3))
                rect = tuple(float(row[c]) for c in ("crop_x", "crop_y", "crop_w", "crop_h"))
                params = SynthParams(float(row["blur_sigma"]), float(row["blend_alpha"]), hom, rect,
                                     int(row["synth_seed"]))
            return cls(row["id"], label, row.get("group") or row["id"], row["genuine_src"],
                       row.get("background_src", ""), params, int(row.get("degrade_level") or 0),
                       float(row.get("degrade_blur") or 0.0), float(row.get("degrade_noise") or 0.0),
                       int(row.get("degrade_seed") or 0))
        except (KeyError, ValueError, RejectedInputError) as exc:
            raise FormatError(f"bad manifest row {row.get('id', '?')!r}: {exc}") from None


@dataclass
class Corpus:
    records: list
    images: dict
    sources: dict = field(default_factory=dict)

    @property
    def ids(self):
        return [r.id for r in self.records]

    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    def image_list(self):
        return [self.images[r.id] for r in self.records]

    def counts(self):
        labels = self.labels()
        return int(np.sum(labels == GENUINE)), int(np.sum(labels == SPOOF))


def render_record(rec, sources, backgrounds):
    """Rebuild one sample's pixels from its manifest entry."""
    img = np.asarray(sources[rec.genuine_src], dtype=np.float64)
    if rec.params is not None:
        img = synthesize_spoof(img, backgrounds[rec.background_src], rec.params)
    if rec.degrade_level:
        img = degrade(img, rec.degrade_blur, rec.degrade_noise, rec.degrade_seed)
    return quantize8(img)


def build_corpus(genuine, backgrounds, n_spoof, *, patch_mode=False, patch_size=128, seed=0,
                 ranges=None, degrade_fraction=0.0, ladder=DEFAULT_LADDER, face_crop=True):
    """Genuine records plus ``n_spoof`` synthesized spoofs.

    ``genuine``/``backgrounds`` map ids to gray arrays. In patch mode each
    genuine image is tiled first and the tiles act as the genuine set
    (document images need no face crop, so cropping is disabled there).
    A ``degrade_fraction`` of all samples gets a nonzero ladder level.
    """
    if n_spoof < 1:
        raise RejectedInputError("n_spoof must be at least 1")
    if not genuine or not backgrounds:
        raise RejectedInputError("need at least one genuine image and one background")
    if not 0.0 <= degrade_fraction <= 1.0:
        raise RejectedInputError("degrade_fraction must lie in [0, 1]")
    if degrade_fraction > 0 and len(ladder) < 2:
        raise RejectedInputError("degradation needs a ladder with at least one nonzero level")
    sources = {}
    for gid in sorted(genuine):
        img = np.asarray(genuine[gid], dtype=np.float64)
        if patch_mode:
            for tid, tile in tile_patches(img, patch_size).items():
                sources[f"{gid}_{tid}"] = tile
        else:
            sources[gid] = img
    bg_ids = sorted(backgrounds)
    src_ids = sorted(sources)
    ss = np.random.SeedSequence(seed)
    pick_rng, degrade_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    synth_seeds = np.random.SeedSequence([seed, 17]).generate_state(n_spoof, dtype=np.uint32)

    records = [SampleRecord(sid, GENUINE, sid, sid) for sid in src_ids]
    width = max(5, len(str(n_spoof)))
    for k in range(n_spoof):
        sseed = int(synth_seeds[k])
        prng = np.random.default_rng(sseed)
        gsrc = src_ids[int(pick_rng.integers(len(src_ids)))]
        bsrc = bg_ids[int(pick_rng.integers(len(bg_ids)))]
        params = sample_params(prng, ranges, seed=sseed, crop=face_crop and not patch_mode)
        sid = f"s{k:0{width}d}"
        records.append(SampleRecord(sid, SPOOF, sid, gsrc, bsrc, params))

    n_degrade = int(round(degrade_fraction * len(records)))
    if n_degrade:
        chosen = degrade_rng.choice(len(records), size=n_degrade, replace=False)
        levels = degrade_rng.integers(1, len(ladder), size=n_degrade)
        dseeds = degrade_rng.integers(0, 2**31 - 1, size=n_degrade)
        for idx, lvl, ds in zip(chosen, levels, dseeds):
            rec = records[int(idx)]
            rec.degrade_level = int(lvl)
            rec.degrade_blur, rec.degrade_noise = (float(v) for v in ladder[int(lvl)])
            rec.degrade_seed = int(ds)

    images = {rec.id: render_record(rec, sources, backgrounds) for rec in records}
    return Corpus(records, images, sources)


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow(rec.row())


def read_manifest(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None or not {"id", "label", "genuine_src"} <= set(reader.fieldnames):
            raise FormatError(f"{path} is not a corpus manifest")
        records = [SampleRecord.from_row(row) for row in reader]
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path} lists duplicate sample ids")
    return records


def write_corpus(corpus, out_dir):
    """``manifest.tsv`` plus ``images/<id>.png`` (8-bit gray, lossless)."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for rec in corpus.records:
        save_png(out / "images" / f"{rec.id}.png", corpus.images[rec.id])
    write_manifest(out / "manifest.tsv", corpus.records)
    return out / "manifest.tsv"


def read_corpus(corpus_dir):
    from .errors import DependencyError

    root = Path(corpus_dir)
    manifest = root / "manifest.tsv"
    if not manifest.is_file():
        raise DependencyError(f"corpus manifest {manifest} not found")
    records = read_manifest(manifest)
    images = {}
    for rec in records:
        path = root / "images" / f"{rec.id}.png"
        if not path.is_file():
            raise DependencyError(f"corpus image {path} not found")
        images[rec.id] = load_png(path)
    return Corpus(records, images)
