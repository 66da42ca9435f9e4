# %% [markdown]
"""
Fusion metrics on controlled blends
===================================

A fused image that copies one source, averages both, or ignores both
should rank accordingly.  No network is involved here.
"""

# %%
import numpy as np

from awfgan.metrics import MetricReport, evaluate_pair, scd
from awfgan.synthetic import toy_pair

rng = np.random.default_rng(4)
ir, vi = toy_pair(rng, size=64)
candidates = {
    "copy ir": ir,
    "copy vi": vi,
    "average": 0.5 * (ir + vi),
    "max": np.maximum(ir, vi),
    "flat 0.5": np.full_like(ir, 0.5),
    "noise": rng.uniform(size=ir.shape),
}

print("candidate ", "  ".join(f"{k:>6}" for k in MetricReport.FIELDS))
for name, f in candidates.items():
    rep = evaluate_pair(ir, vi, f)
    print(f"{name:10}", "  ".join(f"{v:6.3f}" for v in rep.values()))

# %% [markdown]
"""
Two readings of SCD exist: correlations of the sources with the fused image,
and correlations of each source with what the fused image adds beyond the
other source.  Both are available.
"""

# %%
f = candidates["average"]
print("scd direct    ", round(scd(ir, vi, f), 4))
print("scd difference", round(scd(ir, vi, f, variant="difference"), 4))
