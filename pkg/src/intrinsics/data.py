"""Dataset handling: manifests, sample loading, shading generation from
image/reflectance pairs, image resynthesis, paired augmentation, and
multiple-of-32 padding.

A Sample carries image, albedo, and shading as (1,3,H,W) linear-intensity
tensors plus a (1,1,H,W) validity mask (1 = contributes to losses and
metrics).  Manifests are tab-separated text, one record per line:

    id <TAB> image.png <TAB> albedo.png <TAB> shading.png [<TAB> mask.png] <TAB> scene

with ``#`` comment lines allowed.  Paths are resolved relative to the
manifest file's directory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .png_io import read_png
from .rng import Rng, derive_seed

SPLIT_MODES = ("image-split", "scene-split", "object-split")


@dataclass
class Sample:
    id: str
    image: np.ndarray
    albedo: np.ndarray
    shading: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        for name in ("image", "albedo", "shading"):
            t = getattr(self, name)
            if t.ndim != 4 or t.shape[0] != 1 or t.shape[1] != 3:
                raise ValueError(f"sample {self.id}: {name} must be (1,3,H,W), "
                                 f"got {t.shape}")
            if t.shape[2:] != self.image.shape[2:]:
                raise ValueError(f"sample {self.id}: {name} extents {t.shape[2:]} "
                                 f"differ from image {self.image.shape[2:]}")
            if not np.all(np.isfinite(t)) or t.min() < 0:
                raise ValueError(f"sample {self.id}: {name} has non-finite or "
                                 "negative values")
        if self.mask.shape != (1, 1, *self.image.shape[2:]):
            raise ValueError(f"sample {self.id}: mask shape {self.mask.shape} "
                             f"incompatible with image {self.image.shape}")


@dataclass
class ManifestEntry:
    id: str
    image_path: str
    albedo_path: str
    shading_path: str
    mask_path: str | None
    scene: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    split: str = "train"
    mode: str = "scene-split"
    base_dir: str = "."

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise ValueError(f"manifest: unknown split mode {self.mode!r}")

    def scenes(self) -> set[str]:
        return {e.scene for e in self.entries}


def parse_manifest(path, split: str = "train", mode: str = "scene-split") -> Manifest:
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) == 5:
                sid, img, alb, shd, scene = fields
                mask = None
            elif len(fields) == 6:
                sid, img, alb, shd, mask, scene = fields
            else:
                raise ValueError(f"{path}:{lineno}: expected 5 or 6 tab-separated "
                                 f"fields, got {len(fields)}")
            entries.append(ManifestEntry(sid, img, alb, shd, mask, scene))
    return Manifest(entries, split=split, mode=mode,
                    base_dir=os.path.dirname(os.path.abspath(path)))


def ensure_disjoint_split(train: Manifest, test: Manifest) -> None:
    """Reject scene-split / object-split manifests whose groups overlap."""
    if train.mode != test.mode:
        raise ValueError(f"split modes differ: {train.mode} vs {test.mode}")
    if train.mode == "image-split":
        shared = {e.id for e in train.entries} & {e.id for e in test.entries}
        kind = "image id"
    else:
        shared = train.scenes() & test.scenes()
        kind = "scene" if train.mode == "scene-split" else "object"
    if shared:
        raise ValueError(f"{train.mode}: {kind} {sorted(shared)[0]!r} appears "
                         "in both train and test splits")


def _to_nchw(arr: np.ndarray) -> np.ndarray:
    """(H,W) or (H,W,3) float image -> (1,3,H,W)."""
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)[None])


def load_sample(entry: ManifestEntry, base_dir: str = ".") -> Sample:
    def load(path):
        full = os.path.join(base_dir, path)
        try:
            return read_png(full)
        except OSError as e:
            raise ValueError(f"sample {entry.id}: cannot read {full}: {e}") from e

    image = _to_nchw(load(entry.image_path))
    albedo = _to_nchw(load(entry.albedo_path))
    shading = _to_nchw(load(entry.shading_path))
    if albedo.shape != image.shape or shading.shape != image.shape:
        raise ValueError(
            f"sample {entry.id}: extents differ between image "
            f"{image.shape[2:]}, albedo {albedo.shape[2:]}, shading "
            f"{shading.shape[2:]}")
    if entry.mask_path is not None:
        m = load(entry.mask_path)
        if m.ndim == 3:
            m = m.mean(axis=2)
        if m.shape != image.shape[2:]:
            raise ValueError(f"sample {entry.id}: mask extents {m.shape} differ "
                             f"from image {image.shape[2:]}")
        mask = (m > 0).astype(np.float64)[None, None]
    else:
        mask = np.ones((1, 1, *image.shape[2:]))
    return Sample(entry.id, image, albedo, shading, mask)


def load_dataset(manifest: Manifest) -> list[Sample]:
    return [load_sample(e, manifest.base_dir) for e in manifest.entries]


# -- synthesis -------------------------------------------------------------

def fit_alpha(target: np.ndarray, pred: np.ndarray,
              mask: np.ndarray | None = None) -> float:
    """Least-squares brightness scale: argmin_a sum((target - a*pred)^2)."""
    if mask is not None:
        target = target * mask
        pred = pred * mask
    denom = float((pred * pred).sum())
    if denom == 0.0:
        raise ValueError("fit_alpha: prediction is identically zero")
    return float((target * pred).sum()) / denom


def generate_mit_shading(image: np.ndarray, albedo: np.ndarray,
                         eps: float = 1e-4):
    """Derive a shading map from an image and its reflectance.

    With I' and A' the per-pixel channel means, S0 = I'/max(A', eps) and the
    returned shading is S0/alpha where alpha minimizes sum((I - alpha*A*S0)^2).
    Returns (shading (1,1,H,W), alpha, valid) where valid flags pixels whose
    divisor did not need the eps guard.
    """
    if image.shape != albedo.shape:
        raise ValueError(f"generate_mit_shading: extents differ "
                         f"{image.shape} vs {albedo.shape}")
    i_mean = image.mean(axis=1, keepdims=True)
    a_mean = albedo.mean(axis=1, keepdims=True)
    s0 = i_mean / np.maximum(a_mean, eps)
    alpha = fit_alpha(image, albedo * s0)
    shading = s0 / alpha
    valid = (a_mean >= eps).astype(np.float64)
    return shading, alpha, valid


def resynthesize(albedo: np.ndarray, shading: np.ndarray) -> np.ndarray:
    """Pointwise product I = A*S, so the triple satisfies the intrinsic model
    exactly.  A single-channel shading broadcasts across the three channels."""
    if shading.shape[2:] != albedo.shape[2:]:
        raise ValueError(f"resynthesize: extents differ "
                         f"{albedo.shape[2:]} vs {shading.shape[2:]}")
    return albedo * shading


def make_synthetic_sample(seed: int, h: int = 64, w: int = 64,
                          sid: str | None = None, regions: int = 6) -> Sample:
    """Synthetic training/evaluation fixture: random piecewise-constant
    albedo times a slowly varying grayscale shading, with the image
    resynthesized as their exact pointwise product.

    Albedo values stay in [0.3, 0.7] and the shading gradient is a few
    thousandths per pixel, so bilinear resampling of the triple preserves
    I = A*S to well under 1e-3.
    """
    rng = Rng(derive_seed(seed, "synthetic-sample"))
    albedo = np.ones((1, 3, h, w)) * (0.3 + 0.4 * rng.uniform((1, 3, 1, 1)))
    for _ in range(regions):
        r0 = rng.integers(0, max(0, h - 8))
        c0 = rng.integers(0, max(0, w - 8))
        r1 = min(h, r0 + 4 + rng.integers(0, max(1, h // 2)))
        c1 = min(w, c0 + 4 + rng.integers(0, max(1, w // 2)))
        albedo[0, :, r0:r1, c0:c1] = (0.3 + 0.4 * rng.uniform((3,)))[:, None, None]
    yy, xx = np.meshgrid(np.arange(h) / max(h, w), np.arange(w) / max(h, w),
                         indexing="ij")
    fy = 0.1 + 0.1 * rng.uniform()
    fx = 0.1 + 0.1 * rng.uniform()
    phase = 2.0 * np.pi * rng.uniform()
    s = 0.5 + 0.25 * np.cos(2.0 * np.pi * (fy * yy + fx * xx) + phase)
    shading = np.broadcast_to(s, (1, 3, h, w)).copy()
    image = resynthesize(albedo, shading)
    return Sample(sid or f"synthetic-{seed}", image, albedo, shading,
                  np.ones((1, 1, h, w)))


# -- augmentation ----------------------------------------------------------

@dataclass
class AugmentConfig:
    crop_h: int = 416
    crop_w: int = 416
    mirror_prob: float = 0.5
    rotate_min_deg: float = -15.0
    rotate_max_deg: float = 15.0
    zoom_min: float = 0.8
    zoom_max: float = 1.2
    enable_rotate_zoom: bool = False

    def __post_init__(self):
        if self.crop_h < 1 or self.crop_w < 1:
            raise ValueError("AugmentConfig: crop extents must be >= 1")
        if not 0.0 <= self.mirror_prob <= 1.0:
            raise ValueError("AugmentConfig: mirror_prob outside [0, 1]")
        if self.rotate_min_deg > self.rotate_max_deg:
            raise ValueError("AugmentConfig: rotation range is reversed")
        if not 0 < self.zoom_min <= self.zoom_max:
            raise ValueError("AugmentConfig: zoom range invalid")


def _bilinear_gather(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Sample (1,C,H,W) at real coordinates; callers handle out-of-bounds."""
    h, w = img.shape[2:]
    syc = np.clip(sy, 0.0, h - 1.0)
    sxc = np.clip(sx, 0.0, w - 1.0)
    i0 = np.floor(syc).astype(np.intp)
    j0 = np.floor(sxc).astype(np.intp)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    ty = syc - i0
    tx = sxc - j0
    p = img[0]  # (C,H,W)
    top = p[:, i0, j0] * (1 - tx) + p[:, i0, j1] * tx
    bot = p[:, i1, j0] * (1 - tx) + p[:, i1, j1] * tx
    return (top * (1 - ty) + bot * ty)[None]


def augment(sample: Sample, cfg: AugmentConfig, rng: Rng) -> Sample:
    """One random geometric transform applied identically to all maps.

    Pipeline order: zoom -> rotate -> crop -> mirror.  Draw order: zoom
    factor and angle (only when rotate/zoom is enabled), crop row offset,
    crop column offset, mirror flip (only when mirror_prob > 0).  The three
    images sample bilinearly, the mask by nearest neighbor; output pixels
    whose source coordinate falls outside the image are marked invalid.
    """
    h, w = sample.image.shape[2:]
    if cfg.enable_rotate_zoom:
        zoom = cfg.zoom_min + rng.uniform() * (cfg.zoom_max - cfg.zoom_min)
        angle = math.radians(cfg.rotate_min_deg + rng.uniform()
                             * (cfg.rotate_max_deg - cfg.rotate_min_deg))
    else:
        zoom, angle = 1.0, 0.0
    zh = max(1, int(round(zoom * h)))
    zw = max(1, int(round(zoom * w)))
    if zh < cfg.crop_h or zw < cfg.crop_w:
        raise ValueError(
            f"sample {sample.id}: crop {cfg.crop_h}x{cfg.crop_w} impossible from "
            f"post-zoom extents {zh}x{zw}")
    off_r = rng.integers(0, zh - cfg.crop_h)
    off_c = rng.integers(0, zw - cfg.crop_w)
    flip = cfg.mirror_prob > 0 and rng.uniform() < cfg.mirror_prob

    rr, cc = np.meshgrid(np.arange(cfg.crop_h, dtype=np.float64),
                         np.arange(cfg.crop_w, dtype=np.float64), indexing="ij")
    if flip:
        cc = (cfg.crop_w - 1) - cc
    rr = rr + off_r
    cc = cc + off_c
    # invert the rotation about the zoomed canvas center
    cy, cx = (zh - 1) / 2.0, (zw - 1) / 2.0
    dy, dx = rr - cy, cc - cx
    cos_t, sin_t = math.cos(angle), math.sin(angle)
    zy = cy + dy * cos_t + dx * sin_t
    zx = cx - dy * sin_t + dx * cos_t
    # invert the zoom resize (pixel-center convention)
    sy = (zy + 0.5) * (h / zh) - 0.5
    sx = (zx + 0.5) * (w / zw) - 0.5

    inside = (sy >= 0.0) & (sy <= h - 1.0) & (sx >= 0.0) & (sx <= w - 1.0)
    image = _bilinear_gather(sample.image, sy, sx)
    albedo = _bilinear_gather(sample.albedo, sy, sx)
    shading = _bilinear_gather(sample.shading, sy, sx)
    iy = np.clip(np.rint(sy).astype(np.intp), 0, h - 1)
    jx = np.clip(np.rint(sx).astype(np.intp), 0, w - 1)
    mask = sample.mask[0, 0, iy, jx] * inside
    zero = ~inside
    for t in (image, albedo, shading):
        t[0, :, zero] = 0.0
    return Sample(sample.id, image, albedo, shading, mask[None, None].astype(np.float64))


# -- padding ---------------------------------------------------------------

def pad_to_multiple(t: np.ndarray, m: int):
    """Replicate-edge pad on the right/bottom to the next multiple of m.

    Returns (padded, (h, w)); ``crop_to(padded, (h, w))`` restores the
    original bit-exactly.
    """
    if m < 1:
        raise ValueError("pad_to_multiple: m must be >= 1")
    h, w = t.shape[-2], t.shape[-1]
    ph = (-h) % m
    pw = (-w) % m
    if ph == 0 and pw == 0:
        return t, (h, w)
    pad = [(0, 0)] * (t.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(t, pad, mode="edge"), (h, w)


def crop_to(t: np.ndarray, extents) -> np.ndarray:
    h, w = extents
    return t[..., :h, :w]
