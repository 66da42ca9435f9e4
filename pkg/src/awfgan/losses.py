"""Training objectives for the generator and both critics.

Generator:  L_G = L_adv + lambda * L_con
            L_con = MSE(ir, fused) + gamma * (1 - SSIM(vi, fused))
            L_adv = -mean D_spa(mask * fused) - mean D_fre(haar(fused))
Critics:    L_D = -mean D(real) + mean D(fake) + coef * GP

The gradient penalty needs the gradient of an input-gradient norm with respect
to the critic parameters.  The engine does not do double-backward, so that
term is replaced by a central difference of the critic along the unit
input-gradient direction.  The two shifted passes replay the activation
pattern of the interpolate, so they stay on the piece of the (piecewise
smooth) critic that holds there; the difference is then exact for
piecewise-linear critics and O(step^2) accurate through the SE sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .mask import apply_mask
from .tensor import ShapeError, Tensor
from .wavelet import haar_stack

SSIM_C = 9e-4
SSIM_WINDOW = 11
GP_STEP = 1e-4


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1.0
    gamma: float = 1.0
    alpha: float = 10.0
    beta: float = 10.0

    def __post_init__(self):
        for k, v in self.as_dict().items():
            if not v >= 0:
                raise ValueError(f"loss weight {k} must be >= 0, got {v}")

    def as_dict(self) -> dict[str, float]:
        return {"lambda": self.lam, "gamma": self.gamma, "alpha": self.alpha, "beta": self.beta}


def _as_batch(x) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim == 2:
        x = T.reshape(x, (1, 1) + x.shape)
    if x.data.ndim != 4:
        raise ShapeError(f"expected an image [H,W] or batch [B,1,H,W], got shape {x.shape}")
    return x


def _same_shape(op: str, *xs: Tensor) -> None:
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"{op}: shape mismatch {sorted(shapes)}")


def mse(x, y) -> Tensor:
    """Mean squared difference, averaged over pixels (and batch)."""
    x, y = _as_batch(x), _as_batch(y)
    _same_shape("mse", x, y)
    return T.tensor_mean(T.square(T.sub(x, y)))


def _local_mean(x: Tensor, window: int | None) -> Tensor:
    if window is None:
        return T.reshape(T.global_avg_pool(x), (x.shape[0], x.shape[1], 1, 1))
    kernel = Tensor(np.full((1, 1, window, window), 1.0 / (window * window)))
    return T.conv2d(x, kernel, Tensor(np.zeros(1)))


def ssim_paper(x, y, c: float = SSIM_C, window: int | None = SSIM_WINDOW) -> Tensor:
    """Mean of (2 cov + C) / (var_x + var_y + C) over sliding windows.

    ``window=None`` uses one global window per image; images smaller than
    the window fall back to that mode.
    """
    x, y = _as_batch(x), _as_batch(y)
    _same_shape("ssim", x, y)
    if window is not None and min(x.shape[2:]) < window:
        window = None
    mx, my = _local_mean(x, window), _local_mean(y, window)
    vx = T.sub(_local_mean(T.square(x), window), T.square(mx))
    vy = T.sub(_local_mean(T.square(y), window), T.square(my))
    cxy = T.sub(_local_mean(T.mul(x, y), window), T.mul(mx, my))
    num = T.add_scalar(T.scalar_mul(cxy, 2.0), c)
    den = T.add_scalar(T.add(vx, vy), c)
    return T.tensor_mean(T.div(num, den))


def content_loss(ir, vi, fused, weights: LossWeights = LossWeights()) -> Tensor:
    ir, vi, fused = _as_batch(ir), _as_batch(vi), _as_batch(fused)
    _same_shape("content_loss", ir, vi, fused)
    structure = T.add_scalar(T.neg(ssim_paper(vi, fused)), 1.0)
    return T.add(mse(ir, fused), T.scalar_mul(structure, weights.gamma))


def adv_loss(fused: Tensor, mask: np.ndarray, d_spa, d_fre) -> Tensor:
    fused = _as_batch(fused)
    s_spa = T.tensor_mean(d_spa(apply_mask(fused, mask)))
    s_fre = T.tensor_mean(d_fre(haar_stack(fused)))
    return T.neg(T.add(s_spa, s_fre))


@dataclass
class GradientPenalty:
    value: float            # mean over the batch of (||grad|| - 1)^2
    norms: np.ndarray       # per-sample input-gradient norms
    interpolates: np.ndarray
    directions: np.ndarray  # unit input-gradient directions (zero where the gradient vanishes)
    coefs: np.ndarray       # d(value)/d(directional derivative), per sample
    branches: list          # activation pattern of the critic at the interpolates


def _interpolate(real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    eps = rng.uniform(0.0, 1.0, size=(real.shape[0],) + (1,) * (real.ndim - 1))
    return eps * real + (1.0 - eps) * fake


def gradient_penalty(critic, real, fake, rng: np.random.Generator) -> GradientPenalty:
    """Penalty on the critic's input-gradient norm at random interpolates."""
    real = real.data if isinstance(real, Tensor) else np.asarray(real, dtype=np.float64)
    fake = fake.data if isinstance(fake, Tensor) else np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise ShapeError(f"gradient_penalty: real {real.shape} and fake {fake.shape} differ")
    xt = _interpolate(real, fake, rng)
    leaf = Tensor(xt, requires_grad=True)
    with T.capture_branches() as branches:
        score = critic(leaf)
    (g,) = T.grad(T.tensor_sum(score), [leaf])
    b = g.shape[0]
    norms = np.sqrt((g.reshape(b, -1) ** 2).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    directions = np.where((norms > 0).reshape((b,) + (1,) * (g.ndim - 1)),
                          g / safe.reshape((b,) + (1,) * (g.ndim - 1)), 0.0)
    value = float(np.mean((norms - 1.0) ** 2))
    coefs = 2.0 * (norms - 1.0) / b
    return GradientPenalty(value, norms, xt, directions, coefs, branches)


@dataclass
class CriticLoss:
    objective: Tensor   # same parameter gradient as the loss; not its value
    value: float
    real_score: float
    fake_score: float
    penalty: float

    @property
    def wasserstein_gap(self) -> float:
        return self.real_score - self.fake_score


def critic_loss(critic, real, fake, coef: float, rng: np.random.Generator,
                step: float = GP_STEP) -> CriticLoss:
    """-mean D(real) + mean D(fake) + coef * GP.

    ``objective`` has the parameter gradient of this loss.  Its penalty part is
    the central difference (D(x+) - D(x-)) / (2 step) weighted by
    d GP / d(directional derivative), with x+- the interpolates shifted along
    their unit input-gradient directions and evaluated on the interpolates'
    activation pattern.
    """
    real = real.data if isinstance(real, Tensor) else np.asarray(real, dtype=np.float64)
    fake = fake.data if isinstance(fake, Tensor) else np.asarray(fake, dtype=np.float64)
    gp = gradient_penalty(critic, real, fake, rng)
    b = real.shape[0]
    scores = critic(Tensor(np.concatenate([real, fake], axis=0)))
    w = np.concatenate([np.full(b, -1.0 / b), np.full(b, 1.0 / b)])[:, None]
    objective = T.tensor_sum(T.mul(scores, Tensor(w)))
    if coef != 0.0:
        shifted = np.concatenate([gp.interpolates + step * gp.directions,
                                  gp.interpolates - step * gp.directions], axis=0)
        with T.replay_branches(gp.branches, copies=2):
            pair = critic(Tensor(shifted))
        scale = coef * gp.coefs / (2.0 * step)
        objective = T.add(objective, T.tensor_sum(T.mul(pair, Tensor(np.concatenate([scale, -scale])[:, None]))))
    s = scores.data[:, 0]
    real_score, fake_score = float(s[:b].mean()), float(s[b:].mean())
    value = -real_score + fake_score + coef * gp.value
    return CriticLoss(objective, value, real_score, fake_score, gp.value)


def d_spa_loss(ir, fused, mask: np.ndarray, critic, alpha: float,
               rng: np.random.Generator) -> CriticLoss:
    ir, fused = _as_batch(ir), _as_batch(fused)
    _same_shape("d_spa_loss", ir, fused)
    return critic_loss(critic, apply_mask(ir.data, mask), apply_mask(fused.data, mask), alpha, rng)


def d_fre_loss(vi, fused, critic, beta: float, rng: np.random.Generator) -> CriticLoss:
    vi, fused = _as_batch(vi), _as_batch(fused)
    _same_shape("d_fre_loss", vi, fused)
    with T.no_grad():
        real, fake = haar_stack(vi).data, haar_stack(fused).data
    return critic_loss(critic, real, fake, beta, rng)
