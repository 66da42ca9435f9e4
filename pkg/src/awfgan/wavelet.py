"""Single-level orthonormal 2-D Haar analysis and synthesis.

For every 2x2 block ``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2
    HL = (a - b + c - d) / 2
    LH = (a + b - c - d) / 2
    HH = (a - b - c + d) / 2

Odd heights/widths are padded by replicating the last row/column.  Subband
stacks always use the channel order (LL, HL, LH, HH).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, record

SUBBAND_ORDER = ("LL", "HL", "LH", "HH")


@dataclass
class SubbandSet:
    LL: np.ndarray
    LH: np.ndarray
    HL: np.ndarray
    HH: np.ndarray

    def __post_init__(self):
        shapes = {b.shape for b in (self.LL, self.LH, self.HL, self.HH)}
        if len(shapes) != 1:
            raise ShapeError(f"subbands disagree in shape: {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.LL.shape

    def bands(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """The four bands in stacking order (LL, HL, LH, HH)."""
        return self.LL, self.HL, self.LH, self.HH

    def energy(self) -> float:
        return float(sum(np.sum(np.square(getattr(b, "data", b))) for b in self.bands()))


def _pad_even(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    ph, pw = h % 2, w % 2
    if not (ph or pw):
        return x
    pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, pad, mode="edge")


def _analysis(x: np.ndarray) -> np.ndarray:
    """[..., H, W] (even) -> [..., 4, H/2, W/2] in (LL, HL, LH, HH) order."""
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return 0.5 * np.stack([a + b + c + d, a - b + c - d, a + b - c - d, a - b - c + d], axis=-3)


def _synthesis(s: np.ndarray) -> np.ndarray:
    """Inverse of ``_analysis`` (the transform is its own transpose)."""
    ll, hl, lh, hh = (s[..., i, :, :] for i in range(4))
    h2, w2 = ll.shape[-2:]
    out = np.empty(ll.shape[:-2] + (2 * h2, 2 * w2))
    out[..., 0::2, 0::2] = 0.5 * (ll + hl + lh + hh)
    out[..., 0::2, 1::2] = 0.5 * (ll - hl + lh - hh)
    out[..., 1::2, 0::2] = 0.5 * (ll + hl - lh - hh)
    out[..., 1::2, 1::2] = 0.5 * (ll - hl - lh + hh)
    return out


def _unpad_grad(g: np.ndarray, h: int, w: int) -> np.ndarray:
    if g.shape[-1] != w:
        extra = g[..., :, w:].sum(axis=-1)
        g = g[..., :, :w].copy()
        g[..., :, w - 1] += extra
    if g.shape[-2] != h:
        extra = g[..., h:, :].sum(axis=-2)
        g = g[..., :h, :].copy()
        g[..., h - 1, :] += extra
    return g


def _check_size(shape: tuple[int, ...]) -> None:
    if len(shape) < 2:
        raise ShapeError(f"haar_dwt2 needs at least a 2-d input, got shape {shape}")
    h, w = shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError(f"haar_dwt2 needs H, W >= 2, got {h}x{w}")


def _analysis_op(x: Tensor) -> Tensor:
    """Differentiable ``[..., H, W]`` -> ``[..., 4, H/2, W/2]``."""
    _check_size(x.shape)
    h, w = x.shape[-2:]
    out = _analysis(_pad_even(x.data))
    return record("haar_analysis", out, (x,), lambda g: (_unpad_grad(_synthesis(g), h, w),))


def _band(stack: Tensor, i: int) -> Tensor:
    def fn(g):
        full = np.zeros(stack.shape)
        full[..., i, :, :] = g
        return (full,)

    return record("subband", stack.data[..., i, :, :], (stack,), fn)


def haar_dwt2(image) -> SubbandSet:
    """Decompose an image (or stack ``[..., H, W]``) into its four Haar subbands.

    A Tensor input gives Tensor bands that stay on its graph.
    """
    if isinstance(image, Tensor):
        stack = _analysis_op(image)
        ll, hl, lh, hh = (_band(stack, i) for i in range(4))
        return SubbandSet(LL=ll, LH=lh, HL=hl, HH=hh)
    x = np.asarray(image, dtype=np.float64)
    _check_size(x.shape)
    s = _analysis(_pad_even(x))
    return SubbandSet(LL=s[..., 0, :, :], HL=s[..., 1, :, :], LH=s[..., 2, :, :], HH=s[..., 3, :, :])


def haar_idwt2(subbands: SubbandSet) -> np.ndarray:
    """Reconstruct the (even-sized, padded) image from its subbands."""
    return _synthesis(np.stack(subbands.bands(), axis=-3))


def stack_subbands(subbands: SubbandSet) -> np.ndarray:
    """Stack bands along a new channel axis, order (LL, HL, LH, HH).

    A 2-d band set gives ``[1, 4, H/2, W/2]``; batched bands ``[B, H/2, W/2]``
    give ``[B, 4, H/2, W/2]``.
    """
    s = np.stack(subbands.bands(), axis=-3)
    return s[None] if s.ndim == 3 else s


def unstack_subbands(stack: np.ndarray) -> SubbandSet:
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim < 3 or stack.shape[-3] != 4:
        raise ShapeError(f"expected 4 subband channels on axis -3, got shape {stack.shape}")
    if stack.ndim == 4 and stack.shape[0] == 1:
        stack = stack[0]
    return SubbandSet(LL=stack[..., 0, :, :], HL=stack[..., 1, :, :],
                      LH=stack[..., 2, :, :], HH=stack[..., 3, :, :])


def haar_stack(x: Tensor) -> Tensor:
    """Differentiable analysis of ``[B, 1, H, W]`` into the ``[B, 4, H/2, W/2]`` subband stack."""
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"haar_stack expects [B, 1, H, W], got {x.shape}")
    _check_size(x.shape)
    h, w = x.shape[-2:]
    out = _analysis(_pad_even(x.data))[:, 0]  # [B,1,4,h,w] -> [B,4,h,w]

    def fn(g):
        return (_unpad_grad(_synthesis(g[:, None]), h, w),)

    return record("haar_stack", out, (x,), fn)
