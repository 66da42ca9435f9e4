"""Target masks from infrared attention maps.

The map is thresholded at half its maximum, the foreground is labelled with
8-connectivity and only the three largest components are kept.  Masks are
constants as far as differentiation is concerned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import tensor as T
from .tensor import ShapeError, Tensor

THRESHOLD_FRACTION = 0.5
KEEP_COMPONENTS = 3
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Component:
    label: int
    area: int
    pixels: np.ndarray  # (n, 2) row/col indices in row-major order

    @property
    def first_index(self) -> tuple[int, int]:
        return int(self.pixels[0, 0]), int(self.pixels[0, 1])


def threshold_map(attention: np.ndarray) -> np.ndarray:
    """1 where the map reaches half of its maximum; all zeros when the max is not positive."""
    a = np.asarray(attention, dtype=np.float64)
    if a.size == 0:
        raise ShapeError("threshold_map: empty attention map")
    peak = a.max()
    if peak <= 0:
        return np.zeros(a.shape, dtype=np.uint8)
    return (a >= THRESHOLD_FRACTION * peak).astype(np.uint8)


def connected_components(binary: np.ndarray) -> list[Component]:
    """8-connected foreground components, largest first.

    Equal areas are ordered by the row-major index of each component's first pixel.
    """
    b = np.asarray(binary) != 0
    labels, n = ndimage.label(b, structure=_EIGHT)
    comps = []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    starts = np.concatenate([[0], np.cumsum(counts)])
    w = b.shape[1]
    for lab in range(1, n + 1):
        idx = order[starts[lab]:starts[lab + 1]]  # already ascending: stable sort
        comps.append(Component(lab, int(idx.size), np.stack([idx // w, idx % w], axis=1)))
    comps.sort(key=lambda c: (-c.area, c.first_index))
    return comps


def extract_target_mask(attention: np.ndarray, keep: int = KEEP_COMPONENTS) -> np.ndarray:
    binary = threshold_map(attention)
    mask = np.zeros(binary.shape, dtype=np.uint8)
    for comp in connected_components(binary)[:keep]:
        mask[comp.pixels[:, 0], comp.pixels[:, 1]] = 1
    return mask


def extract_target_masks(attention: np.ndarray) -> np.ndarray:
    """Batched version: [B,1,H,W] maps -> [B,1,H,W] masks (float64)."""
    a = np.asarray(attention)
    out = np.zeros(a.shape)
    for i in range(a.shape[0]):
        out[i, 0] = extract_target_mask(a[i, 0])
    return out


def label_image(binary: np.ndarray) -> np.ndarray:
    """Label map where component rank k (largest first) gets label k + 1."""
    b = np.asarray(binary)
    out = np.zeros(b.shape, dtype=np.int64)
    for rank, comp in enumerate(connected_components(b)):
        out[comp.pixels[:, 0], comp.pixels[:, 1]] = rank + 1
    return out


def apply_mask(image, mask: np.ndarray):
    """Zero the background.  Tensors keep their graph; gradient flows only through mask=1.

    A 2-d mask is broadcast over leading batch/channel axes.
    """
    m = np.asarray(mask, dtype=np.float64)
    data = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if m.shape[-2:] != data.shape[-2:] or m.ndim > data.ndim or \
            (m.ndim == data.ndim and m.shape != data.shape):
        raise ShapeError(f"apply_mask: mask {m.shape} does not fit image {data.shape}")
    keep = np.broadcast_to(m != 0, data.shape)
    # np.where rather than a product: background becomes +0.0 whatever it held
    out = np.where(keep, data, 0.0)
    if isinstance(image, Tensor):
        return T.record("apply_mask", out, (image,), lambda g: (np.where(keep, g, 0.0),))
    return out
