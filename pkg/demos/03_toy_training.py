# %% [markdown]
"""
A short training run
====================

Eight synthetic pairs: bright blobs on a dark infrared frame, a textured
visible frame.  A few dozen steps on 32x32 crops is enough to watch the
content loss fall; the acceptance suite runs the longer 64x64 version.
"""

# %%
import numpy as np

from awfgan.metrics import evaluate_pair
from awfgan.synthetic import toy_dataset
from awfgan.trainer import TrainConfig, fuse, initial_checkpoint, train

data = toy_dataset(n=8, size=32, seed=0)
config = TrainConfig(epochs=3, n_critic=2, batch_size=2, image_size=32, seed=0)

rows = []
final = train(data, config, on_step=lambda row, models: rows.append(row))
for r in rows[::3]:
    print(f"step {r['step']:3d}  L_con {r['L_con']:.4f}  L_adv {r['L_adv']:+.4f}  "
          f"gap_spa {r['gap_spa']:+.4f}  gap_fre {r['gap_fre']:+.4f}")

# %% [markdown]
"""
Fuse the first pair with the untrained and the trained generator and score
both with the six metrics.
"""

# %%
ir, vi = data[0]
for label, ckpt in (("initial", initial_checkpoint(config)), ("trained", final)):
    f = fuse(ir, vi, ckpt)
    rep = evaluate_pair(ir, vi, f)
    print(label.ljust(8), "  ".join(f"{k}={v:.3f}" for k, v in rep.as_dict().items()))
