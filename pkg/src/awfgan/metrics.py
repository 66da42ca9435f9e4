"""Fusion quality metrics: MI, EN, SD, SF, VIFF and SCD.

All functions take images with intensities in [0, 1].  Histogram-based
metrics quantise into 256 uniform bins and use log base 2.
A is the infrared source, B the visible source and F the fused image.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

LEVELS = 256

VIFF_SIGMAS = (1.0, 2.0, 4.0, 8.0)
VIFF_SCALE_WEIGHTS = (1.0, 0.0, 0.15, 1.0)
VIFF_BLOCK = 8
VIFF_NOISE_VAR = 2.0
VIFF_EPS = 1e-10
VIFF_MIN_SIZE = 32


def _img(x) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {a.shape}")
    return a


def _same(*imgs: np.ndarray) -> None:
    shapes = {i.shape for i in imgs}
    if len(shapes) != 1:
        raise ValueError(f"image size mismatch: {sorted(shapes)}")


def quantize(x) -> np.ndarray:
    """Map [0, 1] intensities to integer levels 0..255 (256 uniform bins)."""
    return np.clip(np.floor(_img(x) * LEVELS), 0, LEVELS - 1).astype(np.int64)


def _entropy_of(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0  # no negative zero for constant images


def entropy(f) -> float:
    q = quantize(f)
    p = np.bincount(q.ravel(), minlength=LEVELS) / q.size
    return _entropy_of(p)


def _pair_mi(x: np.ndarray, f: np.ndarray) -> float:
    qx, qf = quantize(x).ravel(), quantize(f).ravel()
    joint = np.bincount(qx * LEVELS + qf, minlength=LEVELS * LEVELS).reshape(LEVELS, LEVELS)
    joint = joint / qx.size
    px = joint.sum(axis=1)
    pf = joint.sum(axis=0)
    nz = joint > 0
    outer = np.outer(px, pf)
    return float((joint[nz] * np.log2(joint[nz] / outer[nz])).sum())


def mutual_information(a, b, f) -> float:
    a, b, f = _img(a), _img(b), _img(f)
    _same(a, b, f)
    return _pair_mi(a, f) + _pair_mi(b, f)


def _centered(x: np.ndarray) -> np.ndarray:
    # shifting by a sample first makes constant inputs centre to exact zeros
    d = x - x.flat[0]
    return d - d.mean()


def standard_deviation(f) -> float:
    f = _img(f)
    return float(np.sqrt(np.mean(_centered(f) ** 2)))


def spatial_frequency(f) -> float:
    f = _img(f)
    if min(f.shape) < 2:
        raise ValueError(f"spatial frequency needs at least 2x2, got {f.shape}")
    mn = f.size
    rf2 = np.sum(np.diff(f, axis=1) ** 2) / mn
    cf2 = np.sum(np.diff(f, axis=0) ** 2) / mn
    return float(np.sqrt(rf2 + cf2))


def pearson(x, y) -> float:
    """Pearson correlation; 0 when either input has zero variance."""
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    dx, dy = _centered(x), _centered(y)
    den = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if den == 0:
        return 0.0
    return float(np.sum(dx * dy) / den)


def scd(a, b, f, variant: str = "direct") -> float:
    """Sum of correlations.

    ``variant="direct"`` gives r(A, F) + r(B, F); ``"difference"`` gives the
    correlation-of-differences form r(A, F - B) + r(B, F - A).
    """
    a, b, f = _img(a), _img(b), _img(f)
    _same(a, b, f)
    if variant == "direct":
        return pearson(a, f) + pearson(b, f)
    if variant == "difference":
        return pearson(a, f - b) + pearson(b, f - a)
    raise ValueError(f"unknown SCD variant {variant!r}")


def _block_stats(x: np.ndarray, y: np.ndarray, block: int):
    h, w = (x.shape[0] // block) * block, (x.shape[1] // block) * block

    def blocks(z):
        return z[:h, :w].reshape(h // block, block, w // block, block).transpose(0, 2, 1, 3) \
            .reshape(-1, block * block)

    bx, by = blocks(x), blocks(y)
    mx, my = bx.mean(axis=1, keepdims=True), by.mean(axis=1, keepdims=True)
    vx = np.mean((bx - mx) ** 2, axis=1)
    vy = np.mean((by - my) ** 2, axis=1)
    cxy = np.mean((bx - mx) * (by - my), axis=1)
    return vx, vy, cxy


def _fidelity_terms(vs: np.ndarray, vf: np.ndarray, cov: np.ndarray, noise: float):
    """Per-block (distorted, reference) information under the gain + additive-noise model."""
    eps = VIFF_EPS
    g = cov / (vs + eps)
    sv = vf - g * cov
    flat_src = vs < eps
    g = np.where(flat_src, 0.0, g)
    sv = np.where(flat_src, vf, sv)
    vs = np.where(flat_src, 0.0, vs)
    flat_fused = vf < eps
    g = np.where(flat_fused, 0.0, g)
    sv = np.where(flat_fused, 0.0, sv)
    neg = g < 0
    sv = np.where(neg, vf, sv)
    g = np.where(neg, 0.0, g)
    sv = np.maximum(sv, eps)
    num = np.log2(1.0 + g * g * vs / (sv + noise))
    den = np.log2(1.0 + vs / noise)
    return num, den


def viff(a, b, f) -> float:
    """Multi-scale visual information fidelity of F with respect to both sources.

    At each of four scales the images (rescaled to 0..255) are Gaussian
    low-passed with sigma 1, 2, 4, 8, split into 8x8 blocks, and the
    information F preserves about each source is compared to the information
    the sources carry (additive visual noise of variance 2).  Per-scale
    ratios are combined with weights (1, 0, 0.15, 1) / 2.15.  F = A = B gives 1.
    """
    a, b, f = _img(a), _img(b), _img(f)
    _same(a, b, f)
    if min(a.shape) < VIFF_MIN_SIZE:
        raise ValueError(f"viff needs images of at least {VIFF_MIN_SIZE}x{VIFF_MIN_SIZE}, got {a.shape}")
    a, b, f = a * 255.0, b * 255.0, f * 255.0
    weights = np.asarray(VIFF_SCALE_WEIGHTS) / np.sum(VIFF_SCALE_WEIGHTS)
    total = 0.0
    for sigma, wk in zip(VIFF_SIGMAS, weights):
        la, lb, lf = (ndimage.gaussian_filter(z, sigma, mode="reflect", truncate=4.0) for z in (a, b, f))
        num = den = 0.0
        for src in (la, lb):
            vs, vf, cov = _block_stats(src, lf, VIFF_BLOCK)
            n, d = _fidelity_terms(vs, vf, cov, VIFF_NOISE_VAR)
            num += n.sum()
            den += d.sum()
        if den > 0:
            total += wk * num / den
    return float(total)


@dataclass
class MetricReport:
    mi: float
    en: float
    sd: float
    sf: float
    viff: float
    scd: float

    FIELDS = ("mi", "en", "sd", "sf", "viff", "scd")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def values(self) -> list[float]:
        return [getattr(self, k) for k in self.FIELDS]


def evaluate_pair(a, b, f, scd_variant: str = "direct") -> MetricReport:
    a, b, f = _img(a), _img(b), _img(f)
    _same(a, b, f)
    return MetricReport(
        mi=mutual_information(a, b, f),
        en=entropy(f),
        sd=standard_deviation(f),
        sf=spatial_frequency(f),
        viff=viff(a, b, f),
        scd=scd(a, b, f, scd_variant),
    )
