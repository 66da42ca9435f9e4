# %% [markdown]
"""
Haar subbands and target masks
==============================

The frequency critic never sees pixels, only the four Haar subbands.
The spatial critic never sees the background, only the target mask.
This walk-through builds both views for one synthetic pair.
"""

# %%
import numpy as np

from awfgan.mask import apply_mask, connected_components, extract_target_mask, threshold_map
from awfgan.synthetic import toy_pair
from awfgan.wavelet import SUBBAND_ORDER, haar_dwt2, haar_idwt2

rng = np.random.default_rng(0)
ir, vi = toy_pair(rng, size=64, n_targets=3)
print("ir", ir.shape, "range", ir.min().round(3), ir.max().round(3))
print("vi", vi.shape, "range", vi.min().round(3), vi.max().round(3))

# %% [markdown]
"""
One analysis level halves each side.  The transform is orthonormal, so the
subband energies add up to the image energy and synthesis undoes analysis.
"""

# %%
bands = haar_dwt2(vi)
for name in SUBBAND_ORDER:
    b = getattr(bands, name)
    print(f"{name}: shape {b.shape}, energy {np.sum(b * b):9.3f}")
print("image energy", round(float(np.sum(vi * vi)), 3), "subband total", round(bands.energy(), 3))
print("reconstruction error", np.abs(haar_idwt2(bands) - vi).max())

# %% [markdown]
"""
The grating in the visible image is vertical, so its energy sits in the
horizontal-detail band.  A smooth image keeps nearly everything in LL.
"""

# %%
smooth = np.outer(np.linspace(0, 1, 64), np.linspace(0, 1, 64))
s = haar_dwt2(smooth)
print("smooth image: LL share", round(np.sum(s.LL ** 2) / s.energy(), 6))

# %% [markdown]
"""
Masks: threshold at half the peak, then keep the three largest
8-connected regions.  Here the infrared image itself plays the role of an
attention map; in training the generator's infrared attention is used.
"""

# %%
binary = threshold_map(ir)
mask = extract_target_mask(ir)
print("regions above threshold:", [c.area for c in connected_components(binary)])
print("regions kept:", [c.area for c in connected_components(mask)])

masked = apply_mask(ir, mask)
print("masked image keeps", int(mask.sum()), "of", mask.size, "pixels;",
      "background is exactly zero:", not masked[mask == 0].any())
