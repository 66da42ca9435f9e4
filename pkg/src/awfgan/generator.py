"""Two-branch fusion generator with spatial attention.

Each branch (infrared / visible) runs two shallow 3x3 convolutions (1->16->32),
three residual blocks at 32 channels and a spatial attention module whose map
re-weights the branch features.  The trunk concatenates both branches (64
channels), applies three residual blocks and squeezes 64->32->16->1 with 1x1
convolutions; a sigmoid keeps the fused image in [0, 1].
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import Network, Params, conv_params
from .tensor import ShapeError, Tensor

SLOPE = 0.2
BRANCH_WIDTHS = (16, 32)
TRUNK_WIDTH = 64
SQUEEZE = (32, 16, 1)
SAM_KERNEL = 7


def resblock(x: Tensor, params: Params, name: str) -> Tensor:
    """x + conv(lrelu(conv(x))), both 3x3 with size-preserving padding."""
    w1 = params[f"{name}.conv1.weight"]
    if x.shape[1] != w1.shape[1]:
        raise ShapeError(f"resblock {name}: input has {x.shape[1]} channels, block width is {w1.shape[1]}")
    h = T.conv2d(x, w1, params[f"{name}.conv1.bias"], padding=1)
    h = T.leaky_relu(h, SLOPE)
    h = T.conv2d(h, params[f"{name}.conv2.weight"], params[f"{name}.conv2.bias"], padding=1)
    return T.add(x, h)


def sam(features: Tensor, params: Params, name: str) -> Tensor:
    """Spatial attention map [B,1,H,W] in (0, 1) from channel mean and max."""
    pooled = T.concat([T.channel_mean(features), T.channel_max(features)], axis=1)
    pad = params[f"{name}.weight"].shape[-1] // 2
    return T.sigmoid(T.conv2d(pooled, params[f"{name}.weight"], params[f"{name}.bias"], padding=pad))


def apply_attention(features: Tensor, attention: Tensor) -> Tensor:
    """Scale every channel of ``features`` by the single-channel map."""
    if attention.shape[1] != 1 or attention.shape[2:] != features.shape[2:] \
            or attention.shape[0] != features.shape[0]:
        raise ShapeError(f"apply_attention: map {attention.shape} does not fit features {features.shape}")
    return T.mul(features, attention)


def _resblock_params(rng, name, width) -> Params:
    p = conv_params(rng, f"{name}.conv1", width, width, 3)
    p.update(conv_params(rng, f"{name}.conv2", width, width, 3))
    return p


def _branch_params(rng, name) -> Params:
    c1, c2 = BRANCH_WIDTHS
    p = conv_params(rng, f"{name}.shallow1", 1, c1, 3)
    p.update(conv_params(rng, f"{name}.shallow2", c1, c2, 3))
    for i in range(3):
        p.update(_resblock_params(rng, f"{name}.res{i}", c2))
    p.update(conv_params(rng, f"{name}.sam", 2, 1, SAM_KERNEL))
    return p


class Generator(Network):
    def __init__(self, params: Params):
        super().__init__(params)

    @classmethod
    def init(cls, rng: np.random.Generator) -> "Generator":
        p: Params = {}
        p.update(_branch_params(rng, "ir"))
        p.update(_branch_params(rng, "vi"))
        for i in range(3):
            p.update(_resblock_params(rng, f"trunk.res{i}", TRUNK_WIDTH))
        cin = TRUNK_WIDTH
        for i, cout in enumerate(SQUEEZE):
            p.update(conv_params(rng, f"trunk.squeeze{i}", cin, cout, 1))
            cin = cout
        return cls(p)

    def _branch(self, x: Tensor, name: str) -> tuple[Tensor, Tensor]:
        p = self.params
        h = T.leaky_relu(T.conv2d(x, p[f"{name}.shallow1.weight"], p[f"{name}.shallow1.bias"], padding=1), SLOPE)
        h = T.leaky_relu(T.conv2d(h, p[f"{name}.shallow2.weight"], p[f"{name}.shallow2.bias"], padding=1), SLOPE)
        for i in range(3):
            h = resblock(h, p, f"{name}.res{i}")
        att = sam(h, p, f"{name}.sam")
        return apply_attention(h, att), att

    def __call__(self, ir: Tensor, vi: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Return (fused, ir_attention, vi_attention), all [B,1,H,W]."""
        if ir.shape != vi.shape:
            raise ShapeError(f"infrared {ir.shape} and visible {vi.shape} inputs differ in shape")
        if ir.data.ndim != 4 or ir.shape[1] != 1:
            raise ShapeError(f"generator expects [B,1,H,W] inputs, got {ir.shape}")
        fi, ai = self._branch(ir, "ir")
        fv, av = self._branch(vi, "vi")
        h = T.concat([fi, fv], axis=1)
        p = self.params
        for i in range(3):
            h = resblock(h, p, f"trunk.res{i}")
        for i in range(len(SQUEEZE)):
            h = T.conv2d(h, p[f"trunk.squeeze{i}.weight"], p[f"trunk.squeeze{i}.bias"])
            if i < len(SQUEEZE) - 1:
                h = T.leaky_relu(h, SLOPE)
        return T.sigmoid(h), ai, av


def generate(ir: np.ndarray, vi: np.ndarray, generator: Generator
             ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fuse one H x W image pair; returns (fused, ir_attention, vi_attention) as arrays."""
    ir = np.asarray(ir, dtype=np.float64)
    vi = np.asarray(vi, dtype=np.float64)
    if ir.shape != vi.shape:
        raise ShapeError(f"infrared image {ir.shape} and visible image {vi.shape} differ in size")
    with T.no_grad():
        fused, ai, av = generator(Tensor(ir[None, None]), Tensor(vi[None, None]))
    return fused.data[0, 0], ai.data[0, 0], av.data[0, 0]
