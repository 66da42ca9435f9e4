"""Central finite-difference checks of the engine's reverse-mode gradients."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

FD_STEP = 1e-5


@dataclass
class GradCheck:
    name: str
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max(initial=0.0))

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor); the floor stops tiny gradients from dominating."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], rng: np.random.Generator,
                    n_coords: int = 20, step: float = FD_STEP, names: Sequence[str] | None = None,
                    pooled: bool = False, freeze_branches: bool = False) -> list[GradCheck]:
    """Compare d fn()/d t against central differences at random coordinates.

    ``fn`` must rebuild the scalar from the current ``.data`` of ``tensors`` on
    every call.  By default each tensor gets ``min(n_coords, size)`` distinct
    coordinates; with ``pooled`` the ``n_coords`` coordinates are spread over
    all tensors (a random tensor, then a random entry) and one combined result
    is returned.

    ``freeze_branches`` evaluates the perturbed passes on the leaky-ReLU /
    max branches of the unperturbed pass.  Large networks have so many kinks
    that a step of 1e-5 routinely crosses one, and the difference quotient
    then measures the jump rather than the derivative.
    """
    capture = T.capture_branches() if freeze_branches else contextlib.nullcontext([])
    with capture as store:
        loss = fn()
    grads = T.grad(loss, list(tensors))
    names = list(names) if names is not None else [t.name or f"input{i}" for i, t in enumerate(tensors)]

    def numeric(t: Tensor, c: int) -> float:
        flat = t.data.reshape(-1)  # a view: writes perturb the tensor in place
        old = flat[c]
        vals = []
        for x in (old + step, old - step):
            flat[c] = x
            with T.no_grad(), (T.replay_branches(store) if freeze_branches else contextlib.nullcontext()):
                vals.append(fn().item())
        flat[c] = old
        return (vals[0] - vals[1]) / (2.0 * step)

    if pooled:
        picks = [(int(i), int(rng.integers(tensors[i].size))) for i in rng.integers(len(tensors), size=n_coords)]
        analytic = np.array([grads[i].reshape(-1)[c] for i, c in picks])
        num = np.array([numeric(tensors[i], c) for i, c in picks])
        return [GradCheck("pooled", analytic, num, rel_error(analytic, num))]

    out = []
    for name, t, g in zip(names, tensors, grads):
        coords = rng.choice(t.size, size=min(n_coords, t.size), replace=False)
        num = np.array([numeric(t, int(c)) for c in coords])
        analytic = g.reshape(-1)[coords]
        out.append(GradCheck(name, analytic, num, rel_error(analytic, num)))
    return out
