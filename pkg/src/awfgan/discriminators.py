"""Wasserstein critics.

``SpatialCritic`` scores masked single-channel images; ``FrequencyCritic``
scores Haar subband stacks, extracting each band separately with a grouped
convolution and re-weighting the bands with a squeeze-and-excitation block.
Neither critic has a saturating output or any normalisation layer.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import Network, Params, conv_params, fc_params
from .tensor import ShapeError, Tensor

SLOPE = 0.2
SPA_WIDTHS = (16, 32, 64, 64)
FRE_GROUP_WIDTH = 4
SE_REDUCTION = 4
FRE_TAIL_WIDTHS = (32, 64)
HIDDEN = 64


class SpatialCritic(Network):
    """Four conv/maxpool/leaky-ReLU stages then a 2-layer head."""

    def __init__(self, params: Params, image_size: int):
        super().__init__(params)
        self.image_size = image_size

    @staticmethod
    def flat_features(image_size: int) -> int:
        s = image_size
        for _ in SPA_WIDTHS:
            s //= 2
        return SPA_WIDTHS[-1] * s * s

    @classmethod
    def init(cls, rng: np.random.Generator, image_size: int) -> "SpatialCritic":
        if image_size < 16:
            raise ShapeError(f"spatial critic needs images of at least 16x16, got {image_size}")
        p: Params = {}
        cin = 1
        for i, cout in enumerate(SPA_WIDTHS):
            p.update(conv_params(rng, f"conv{i}", cin, cout, 3))
            cin = cout
        p.update(fc_params(rng, "fc0", cls.flat_features(image_size), HIDDEN))
        p.update(fc_params(rng, "fc1", HIDDEN, 1))
        return cls(p, image_size)

    def __call__(self, x: Tensor) -> Tensor:
        """[B,1,S,S] -> [B,1] scores."""
        s = self.image_size
        if x.data.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (s, s):
            raise ShapeError(f"spatial critic expects [B,1,{s},{s}], got {x.shape}")
        p = self.params
        h = x
        for i in range(len(SPA_WIDTHS)):
            h = T.conv2d(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"], padding=1)
            h = T.leaky_relu(T.maxpool2d(h, 2, 2), SLOPE)
        h = T.reshape(h, (h.shape[0], -1))
        h = T.leaky_relu(T.fully_connected(h, p["fc0.weight"], p["fc0.bias"]), SLOPE)
        return T.fully_connected(h, p["fc1.weight"], p["fc1.bias"])


class FrequencyCritic(Network):
    """Grouped per-band extraction, SE re-weighting, two conv/pool stages, 2-layer head."""

    def __init__(self, params: Params, image_size: int):
        super().__init__(params)
        self.image_size = image_size

    @property
    def band_size(self) -> int:
        return (self.image_size + 1) // 2

    @staticmethod
    def flat_features(image_size: int) -> int:
        s = (image_size + 1) // 2
        for _ in FRE_TAIL_WIDTHS:
            s //= 2
        return FRE_TAIL_WIDTHS[-1] * s * s

    @classmethod
    def init(cls, rng: np.random.Generator, image_size: int) -> "FrequencyCritic":
        if (image_size + 1) // 2 < 8:
            raise ShapeError(f"frequency critic needs subbands of at least 8x8, got image size {image_size}")
        width = 4 * FRE_GROUP_WIDTH
        p: Params = {}
        p.update(conv_params(rng, "gcem", 4, width, 3, groups=4))
        p.update(fc_params(rng, "se0", width, width // SE_REDUCTION))
        p.update(fc_params(rng, "se1", width // SE_REDUCTION, width))
        cin = width
        for i, cout in enumerate(FRE_TAIL_WIDTHS):
            p.update(conv_params(rng, f"tail{i}", cin, cout, 3))
            cin = cout
        p.update(fc_params(rng, "fc0", cls.flat_features(image_size), HIDDEN))
        p.update(fc_params(rng, "fc1", HIDDEN, 1))
        return cls(p, image_size)

    def _check(self, x: Tensor) -> None:
        s = self.band_size
        if x.data.ndim != 4 or x.shape[1] != 4:
            raise ShapeError(f"frequency critic expects 4 subband channels, got shape {x.shape}")
        if x.shape[2:] != (s, s):
            raise ShapeError(f"frequency critic expects {s}x{s} subbands, got {x.shape[2]}x{x.shape[3]}")

    def gcem(self, x: Tensor) -> Tensor:
        """Per-band features before SE weighting; output group g (channels 4g..4g+3) sees only band g."""
        self._check(x)
        p = self.params
        return T.leaky_relu(T.conv2d(x, p["gcem.weight"], p["gcem.bias"], padding=1, groups=4), SLOPE)

    def se_weights(self, features: Tensor) -> Tensor:
        """Per-channel weights in (0, 1), shape [B,C]."""
        p = self.params
        z = T.global_avg_pool(features)
        z = T.leaky_relu(T.fully_connected(z, p["se0.weight"], p["se0.bias"]), SLOPE)
        return T.sigmoid(T.fully_connected(z, p["se1.weight"], p["se1.bias"]))

    def __call__(self, x: Tensor) -> Tensor:
        """[B,4,S/2,S/2] -> [B,1] scores."""
        p = self.params
        h = self.gcem(x)
        wts = self.se_weights(h)
        h = T.mul(h, T.reshape(wts, wts.shape + (1, 1)))
        for i in range(len(FRE_TAIL_WIDTHS)):
            h = T.conv2d(h, p[f"tail{i}.weight"], p[f"tail{i}.bias"], padding=1)
            h = T.leaky_relu(T.maxpool2d(h, 2, 2), SLOPE)
        h = T.reshape(h, (h.shape[0], -1))
        h = T.leaky_relu(T.fully_connected(h, p["fc0.weight"], p["fc0.bias"]), SLOPE)
        return T.fully_connected(h, p["fc1.weight"], p["fc1.bias"])


def d_spa_score(masked_image: Tensor, critic: SpatialCritic) -> Tensor:
    return critic(masked_image)


def d_fre_score(subband_stack: Tensor, critic: FrequencyCritic) -> Tensor:
    return critic(subband_stack)
