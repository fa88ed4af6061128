"""Instance recovery from foreground and contour maps.

Seeds are the 8-connected components of ``mask & ~edge``. They then grow in
rounds: in every round each seed, in ascending id order, dilates by a 3×3
all-ones kernel and claims the still-unlabelled foreground pixels it touches.
Growth stops once the foreground is covered. Foreground components that
contain no seed at all would never be reached; they become fresh instances.

All functions accept a single H×W map or a stack B×H×W that is processed
image by image (no interaction across the batch axis).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class ComponentStats:
    counts: np.ndarray  # (K,) pixel counts, index k-1 for label k
    bboxes: np.ndarray  # (K, 4) rows as (r0, c0, r1, c1), half-open
    centroids: np.ndarray  # (K, 2) as (row, col)


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def _structure(ndim: int) -> np.ndarray:
    if ndim == 2:
        return _EIGHT
    s = np.zeros((3, 3, 3), dtype=bool)
    s[1] = _EIGHT
    return s


def _label(binary: np.ndarray) -> tuple:
    """8-connected labels numbered by first encounter in a row-major scan, per image."""
    binary = np.asarray(binary, dtype=bool)
    if binary.ndim not in (2, 3):
        raise DimensionError(f"expected an H×W or B×H×W map, got shape {binary.shape}")
    labels, total = ndimage.label(binary, structure=_structure(binary.ndim))
    labels = labels.astype(np.int32)
    if total == 0:
        return labels, np.zeros(binary.shape[:-2], dtype=np.int64) if binary.ndim == 3 else 0
    # ndimage does not promise scan order; renumber by first occurrence
    flat = labels.reshape(-1)
    ids, first = np.unique(flat, return_index=True)
    if ids[0] == 0:
        ids, first = ids[1:], first[1:]
    order = ids[np.argsort(first, kind="stable")]
    lut = np.zeros(total + 1, dtype=np.int32)
    lut[order] = np.arange(1, len(order) + 1, dtype=np.int32)
    labels = lut[labels]
    if binary.ndim == 2:
        return labels, int(total)
    # global scan order visits images in sequence, so each image holds a
    # contiguous id range; shifting it to start at 1 gives per-image labels
    big = np.iinfo(np.int32).max
    lo = np.where(labels > 0, labels, big).min(axis=(1, 2))
    hi = labels.max(axis=(1, 2))
    counts = np.where(hi > 0, hi - lo + 1, 0)
    offsets = np.where(hi > 0, lo - 1, 0)
    labels = np.where(labels > 0, labels - offsets[:, None, None], 0).astype(np.int32)
    return labels, counts


def connected_components(binary: np.ndarray) -> tuple:
    """8-connected labelling of a single binary map plus per-component statistics."""
    binary = np.asarray(binary)
    if binary.ndim != 2:
        raise DimensionError(f"connected_components expects an H×W map, got shape {binary.shape}")
    labels, k = _label(binary)
    counts = np.bincount(labels.reshape(-1), minlength=k + 1)[1:]
    bboxes = np.zeros((k, 4), dtype=np.int64)
    centroids = np.zeros((k, 2))
    for i, sl in enumerate(ndimage.find_objects(labels, max_label=k)):
        if sl is not None:
            bboxes[i] = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
    if k:
        centroids = np.array(ndimage.center_of_mass(labels > 0, labels, np.arange(1, k + 1))).reshape(k, 2)
    return labels, ComponentStats(counts, bboxes, centroids)


def is_mask_fully_covered(objects: np.ndarray, mask: np.ndarray) -> bool:
    return not np.any((np.asarray(mask) != 0) & (np.asarray(objects) == 0))


def _min_neighbour_label(objects: np.ndarray) -> np.ndarray:
    """Smallest positive label among the 3×3 neighbourhood (0 if none)."""
    big = np.iinfo(np.int32).max
    lab = np.where(objects > 0, objects, big).astype(np.int32)
    best = ndimage.minimum_filter(lab, footprint=_structure(lab.ndim), mode="constant", cval=big)
    return np.where(best == big, 0, best)


def grow_seeds(objects: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Claim rounds until nothing more can be claimed.

    Within one round ids are processed in ascending order and only unlabelled
    pixels are claimed, so a pixel goes to the smallest id adjacent to it at the
    start of the round. That is computed for all ids at once here.
    """
    objects = objects.copy()
    mask = np.asarray(mask) != 0
    while True:
        open_px = mask & (objects == 0)
        if not open_px.any():
            break
        claim = _min_neighbour_label(objects)
        claim = np.where(open_px, claim, 0)
        if not claim.any():
            break
        objects = np.where(claim > 0, claim, objects)
    return objects


def _erode_seeds(seeds: np.ndarray, iterations: int) -> np.ndarray:
    if iterations <= 0:
        return seeds
    return ndimage.binary_erosion(seeds, structure=_structure(seeds.ndim), iterations=iterations,
                                  border_value=1)


def instance_segment(mask: np.ndarray, edge: np.ndarray, erosion_iters: int = 0) -> np.ndarray:
    """Turn binary foreground and contour maps into an instance label map."""
    mask = np.asarray(mask) != 0
    edge = np.asarray(edge) != 0
    if mask.shape != edge.shape:
        raise DimensionError(f"mask shape {mask.shape} != edge shape {edge.shape}")
    if mask.ndim not in (2, 3):
        raise DimensionError(f"expected an H×W or B×H×W map, got shape {mask.shape}")
    seeds = _erode_seeds(mask & ~edge, erosion_iters)
    objects, n_seeds = _label(seeds)
    objects = grow_seeds(objects, mask)

    leftover = mask & (objects == 0)
    if leftover.any():
        extra, _ = _label(leftover)
        offset = np.asarray(n_seeds)
        if objects.ndim == 3:
            offset = offset[:, None, None]
        objects = np.where(extra > 0, extra + offset, objects).astype(np.int32)
    return objects


def segment_probabilities(mask_prob: np.ndarray, edge_prob: np.ndarray, threshold: float = 0.5,
                          erosion_iters: int = 0) -> np.ndarray:
    return instance_segment(binarize(mask_prob, threshold), binarize(edge_prob, threshold), erosion_iters)
