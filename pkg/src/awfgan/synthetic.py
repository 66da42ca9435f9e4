"""Synthetic infrared/visible pairs for smoke tests and demos.

The infrared image is dark with a few bright Gaussian "targets"; the visible
image is a mid-grey texture (oriented gratings plus noise) in which the
targets are barely visible.
"""

from __future__ import annotations

import numpy as np


def toy_pair(rng: np.random.Generator, size: int = 64, n_targets: int | None = None
             ) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    n_targets = int(rng.integers(1, 4)) if n_targets is None else n_targets
    ir = 0.12 + 0.03 * rng.standard_normal((size, size))
    target = np.zeros((size, size))
    for _ in range(n_targets):
        cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
        r = rng.uniform(0.04, 0.09) * size
        target = np.maximum(target, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
    ir = ir + 0.8 * target

    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(0.15, 0.45)
    phase = rng.uniform(0, 2 * np.pi)
    grating = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    checker = np.sign(np.sin(2 * np.pi * xx / rng.integers(6, 12)) * np.sin(2 * np.pi * yy / rng.integers(6, 12)))
    vi = 0.5 + 0.18 * grating + 0.08 * checker + 0.05 * rng.standard_normal((size, size)) + 0.1 * target
    return np.clip(ir, 0.0, 1.0), np.clip(vi, 0.0, 1.0)


def toy_dataset(n: int = 8, size: int = 64, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    return [toy_pair(rng, size) for _ in range(n)]
