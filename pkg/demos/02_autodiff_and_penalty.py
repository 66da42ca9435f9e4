# %% [markdown]
"""
The autodiff engine and the gradient penalty
============================================

Everything trains on a small reverse-mode engine over numpy arrays.
We check one op against finite differences, then look at the WGAN-GP
penalty on critics whose answer is known in closed form.
"""

# %%
import numpy as np

from awfgan import tensor as T
from awfgan.gradcheck import check_gradients
from awfgan.losses import gradient_penalty
from awfgan.tensor import Tensor

rng = np.random.default_rng(1)
x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
b = Tensor(rng.standard_normal(3), requires_grad=True)


def loss():
    y = T.leaky_relu(T.conv2d(x, w, b, padding=1))
    return T.tensor_sum(T.square(y))


for r in check_gradients(loss, [x, w, b], rng, names=["x", "w", "b"]):
    print(f"{r.name}: max relative error {r.max_rel_error:.2e}")

# %% [markdown]
"""
A linear critic D(x) = <w, x> has input gradient w everywhere, so the
penalty (|grad| - 1)^2 must equal (|w| - 1)^2 whatever the interpolates are.
"""


# %%
class Linear:
    def __init__(self, w):
        self.w = Tensor(w[None], requires_grad=True)
        self.b = Tensor([0.0], requires_grad=True)

    def __call__(self, x):
        return T.fully_connected(T.reshape(x, (x.shape[0], -1)), self.w, self.b)


real, fake = rng.uniform(size=(4, 1, 8, 8)), rng.uniform(size=(4, 1, 8, 8))
for norm in (0.5, 1.0, 3.0):
    v = rng.standard_normal(64)
    gp = gradient_penalty(Linear(norm * v / np.linalg.norm(v)), real, fake, rng)
    print(f"|w| = {norm}: penalty {gp.value:.12f}, expected {(norm - 1) ** 2:.12f}")
