"""Samples, training targets, augmentation, tiling, synthetic nuclei and PNG I/O.

Dataset directories hold ``images/<id>.png`` (8-bit RGB) and
``labels/<id>.png`` (16-bit instance map, 0 = background).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError

_KERNEL = np.ones((3, 3), dtype=bool)


@dataclass
class Sample:
    image: np.ndarray  # H×W×3 in [0, 1]
    instances: np.ndarray  # H×W int, 0 = background
    id: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.image.shape[:2] != self.instances.shape:
            raise DataError(
                f"{self.id}: image {self.image.shape[:2]} and instances {self.instances.shape} differ in size"
            )


@dataclass
class LabelPair:
    mask_gt: np.ndarray
    edge_gt: np.ndarray


def sample_rng(seed: int, *keys) -> np.random.Generator:
    """Independent stream per (seed, keys); strings are hashed with crc32."""
    words = [int(seed)] + [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(words)


def relabel_sequential(labels: np.ndarray) -> np.ndarray:
    """Map the positive ids present to 1..K, keeping their relative order."""
    ids = np.unique(labels)
    ids = ids[ids > 0]
    lut = np.zeros(int(labels.max(initial=0)) + 1, dtype=np.int32)
    lut[ids] = np.arange(1, len(ids) + 1)
    return lut[labels]


# ---------------------------------------------------------------- targets


def boundary_pixels(instances: np.ndarray) -> np.ndarray:
    """Foreground pixels with an 8-neighbour carrying a different label.

    Outside the image counts as "same label" (edge replication), so nuclei cut
    by the image border are not outlined along the border.
    """
    lab = np.asarray(instances)
    padded = np.pad(lab, 1, mode="edge")
    h, w = lab.shape
    differs = np.zeros(lab.shape, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                differs |= padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] != lab
    return differs & (lab > 0)


def derive_targets(instances: np.ndarray, edge_width: int = 1) -> LabelPair:
    """Foreground mask and a contour band ``edge_width`` 3×3 dilations wide."""
    if edge_width < 1:
        raise ValueError(f"edge_width must be >= 1, got {edge_width}")
    boundary = boundary_pixels(instances)
    edge = ndimage.binary_dilation(boundary, structure=_KERNEL, iterations=edge_width) if boundary.any() else boundary
    return LabelPair(mask_gt=(np.asarray(instances) > 0).astype(np.uint8), edge_gt=edge.astype(np.uint8))


# ---------------------------------------------------------------- augmentation


def apply_transform(s: Sample, flip_h: bool = False, flip_v: bool = False, quarter_turns: int = 0) -> Sample:
    image, inst = s.image, s.instances
    if flip_h:
        image, inst = image[:, ::-1], inst[:, ::-1]
    if flip_v:
        image, inst = image[::-1], inst[::-1]
    if quarter_turns % 4:
        image = np.rot90(image, quarter_turns, axes=(0, 1))
        inst = np.rot90(inst, quarter_turns, axes=(0, 1))
    return Sample(np.ascontiguousarray(image), np.ascontiguousarray(inst), s.id, dict(s.meta))


def augment(s: Sample, rng: np.random.Generator, free_angle: bool = False, max_angle: float = 180.0) -> Sample:
    """Random flips (p = 0.5 each) and a right-angle rotation, applied jointly.

    With ``free_angle`` an extra rotation in [-max_angle, max_angle] follows:
    bilinear with reflection padding for the image, nearest neighbour for labels.
    """
    out = apply_transform(s, rng.random() < 0.5, rng.random() < 0.5, int(rng.integers(4)))
    if free_angle:
        angle = float(rng.uniform(-max_angle, max_angle))
        image = ndimage.rotate(out.image, angle, axes=(1, 0), reshape=False, order=1, mode="reflect")
        inst = ndimage.rotate(out.instances, angle, axes=(1, 0), reshape=False, order=0, mode="constant", cval=0)
        out = Sample(np.clip(image, 0.0, 1.0), relabel_sequential(inst), out.id, out.meta)
    return out


def _tile_starts(extent: int, size: int, stride: int) -> list:
    starts = list(range(0, extent - size + 1, stride))
    if starts[-1] + size < extent:
        starts.append(extent - size)
    return starts


def tile(s: Sample, size: int, stride: int) -> List[Sample]:
    """Overlapping size×size crops; the last row/column of tiles is anchored to the border."""
    h, w = s.instances.shape
    if size > h or size > w or stride < 1:
        raise DataError(f"{s.id}: cannot tile {h}×{w} with size {size}, stride {stride}")
    tiles = []
    for y in _tile_starts(h, size, stride):
        for x in _tile_starts(w, size, stride):
            tiles.append(Sample(
                s.image[y:y + size, x:x + size].copy(),
                relabel_sequential(s.instances[y:y + size, x:x + size]),
                f"{s.id}_r{y}_c{x}",
                {**s.meta, "origin": (y, x)},
            ))
    return tiles


# ---------------------------------------------------------------- synthetic nuclei

_BACKGROUND = np.array([0.93, 0.80, 0.88])
_HEMATOXYLIN = np.array([0.30, 0.16, 0.50])


def requested_count(size: int, density: float, radius: tuple = (5.0, 9.0)) -> int:
    """Nuclei needed to cover roughly ``density`` of a size×size image."""
    mean_r = 0.5 * (radius[0] + radius[1])
    return int(round(density * size * size / (np.pi * mean_r * mean_r)))


def _ellipse(size: int, cy: float, cx: float, a: float, b: float, theta: float):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / a
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / b
    rho2 = u * u + v * v
    return rho2 <= 1.0, rho2


def _place_nuclei(rng, size, count, overlap, prune, radius, max_tries, min_pixels):
    instances = np.zeros((size, size), dtype=np.int32)
    rho2_map = np.zeros((size, size))
    centers, params = [], []
    for _ in range(count):
        tries = 0
        while True:
            tries += 1
            a, b = rng.uniform(*radius, size=2)
            theta = rng.uniform(0.0, np.pi)
            if centers and overlap > 0 and rng.random() < 0.5:
                # nestle against an existing nucleus so contacts actually occur
                cy0, cx0, r0 = centers[rng.integers(len(centers))]
                phi = rng.uniform(0.0, 2 * np.pi)
                dist = (r0 + max(a, b)) * rng.uniform(0.55, 0.95)
                cy, cx = cy0 + dist * np.sin(phi), cx0 + dist * np.cos(phi)
            else:
                cy, cx = rng.uniform(0, size, size=2)
            inside, rho2 = _ellipse(size, cy, cx, a, b, theta)
            if _acceptable(instances, inside, overlap, min_pixels):
                break
            if tries >= max_tries:
                if prune:
                    inside = None
                    break
                if tries >= 100 * max_tries:
                    raise DataError(f"could not place {count} nuclei at overlap {overlap}; enable pruning")
        if inside is None:
            continue
        label = len(params) + 1
        instances[inside] = label
        rho2_map[inside] = rho2[inside]
        centers.append((cy, cx, max(a, b)))
        params.append(dict(center=(cy, cx), axes=(a, b), theta=theta,
                           darkness=rng.uniform(0.55, 0.95)))
    return instances, rho2_map, params


def _acceptable(instances, inside, overlap, min_pixels) -> bool:
    area = int(inside.sum())
    if area < min_pixels:
        return False
    covered = instances[inside]
    if np.count_nonzero(covered) > overlap * area:
        return False
    for lab in np.unique(covered[covered > 0]):
        own = instances == lab
        remaining = own & ~inside
        # occluded nuclei keep at least half their area and stay in one piece
        if remaining.sum() < 0.5 * own.sum():
            return False
        if ndimage.label(remaining, structure=_KERNEL)[1] != 1:
            return False
    return True


def _render(rng, instances, rho2_map, params, size) -> np.ndarray:
    shade = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma=max(size / 8, 1.0))
    shade = 0.06 * shade / (np.abs(shade).max() + 1e-12)
    image = np.broadcast_to(_BACKGROUND, (size, size, 3)) + shade[..., None]
    image = np.array(image)
    for label, p in enumerate(params, start=1):
        sel = instances == label
        if not sel.any():
            continue
        # lighter core, darker rim
        d = p["darkness"] * (0.7 + 0.3 * rho2_map[sel])[:, None]
        image[sel] = (1.0 - d) * _BACKGROUND + d * _HEMATOXYLIN
    image += rng.normal(scale=0.03, size=image.shape)
    image = ndimage.gaussian_filter(image, sigma=(0.6, 0.6, 0))
    return np.clip(image, 0.0, 1.0)


def synth_generate(n_images: int, size: int, density: float, overlap: float, seed: int,
                   prune: bool = True, radius: tuple = (5.0, 9.0), max_tries: int = 50,
                   min_pixels: int = 12) -> List[Sample]:
    """Random elliptical nuclei on a smoothly shaded, noisy background.

    ``density`` is the target area fraction. ``overlap`` is the largest share
    of a new nucleus that may fall on earlier ones (which it then occludes).
    With ``prune`` a nucleus that cannot be placed in ``max_tries`` draws is
    dropped; without it the generator keeps drawing so the requested count is
    always met. Each image uses its own stream derived from ``(seed, index)``.
    """
    if not 0.0 <= overlap <= 1.0 or density < 0:
        raise DataError("density must be >= 0 and overlap in [0, 1]")
    count = requested_count(size, density, radius)
    samples = []
    for i in range(n_images):
        rng = sample_rng(seed, i)
        instances, rho2_map, params = _place_nuclei(rng, size, count, overlap, prune, radius,
                                                     max_tries, min_pixels)
        image = _render(rng, instances, rho2_map, params, size)
        samples.append(Sample(image, instances, f"synth_{i:04d}",
                              {"requested": count, "placed": len(params)}))
    return samples


# ---------------------------------------------------------------- PNG I/O


def write_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def read_image(path) -> np.ndarray:
    try:
        im = Image.open(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.max(initial=0) > 65535 or labels.min(initial=0) < 0:
        raise DataError(f"labels out of 16-bit range in {path}")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def read_labels(path) -> np.ndarray:
    try:
        im = Image.open(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read label map {path}: {exc}") from exc
    arr = np.asarray(im)
    if arr.ndim != 2:
        raise DataError(f"label map {path} must be single-channel, got shape {arr.shape}")
    return arr.astype(np.int32)


def write_prob(path, prob: np.ndarray) -> None:
    """Probability map as 16-bit grayscale, value = round(p * 65535)."""
    arr = np.clip(np.rint(np.asarray(prob, dtype=np.float64) * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def read_prob(path) -> np.ndarray:
    try:
        im = Image.open(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read probability map {path}: {exc}") from exc
    arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[..., 0]
    scale = 65535.0 if arr.dtype == np.uint16 or arr.max(initial=0) > 255 else 255.0
    return arr.astype(np.float64) / scale


def save_dataset(samples: List[Sample], out_dir) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image(out / "images" / f"{s.id}.png", s.image)
        write_labels(out / "labels" / f"{s.id}.png", s.instances)


def load_dataset(data_dir, ids: Optional[List[str]] = None) -> List[Sample]:
    root = Path(data_dir)
    img_dir, lab_dir = root / "images", root / "labels"
    if not img_dir.is_dir() or not lab_dir.is_dir():
        raise DataError(f"{root} must contain images/ and labels/ directories")
    names = ids if ids is not None else sorted(p.stem for p in img_dir.glob("*.png"))
    if not names:
        raise DataError(f"no images found in {img_dir}")
    samples = []
    for name in names:
        lab_path = lab_dir / f"{name}.png"
        if not lab_path.exists():
            raise DataError(f"missing label map {lab_path}")
        samples.append(Sample(read_image(img_dir / f"{name}.png"), read_labels(lab_path), name))
    return samples
