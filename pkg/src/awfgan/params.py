"""Parameter containers and initialisation shared by the three networks."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

Params = dict[str, Tensor]


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def conv_params(rng: np.random.Generator, name: str, cin: int, cout: int, k: int,
                groups: int = 1) -> Params:
    fan_in = (cin // groups) * k * k
    return {
        f"{name}.weight": Tensor(he_normal(rng, (cout, cin // groups, k, k), fan_in),
                                 requires_grad=True, name=f"{name}.weight"),
        f"{name}.bias": Tensor(np.zeros(cout), requires_grad=True, name=f"{name}.bias"),
    }


def fc_params(rng: np.random.Generator, name: str, n_in: int, n_out: int) -> Params:
    return {
        f"{name}.weight": Tensor(he_normal(rng, (n_out, n_in), n_in),
                                 requires_grad=True, name=f"{name}.weight"),
        f"{name}.bias": Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.bias"),
    }


class Network:
    """Base class: a named, ordered collection of learnable tensors."""

    def __init__(self, params: Params):
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state lacks parameters: {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} != expected {p.shape}")
            p.data = arr.copy()
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def fill_(self, value: float) -> None:
        """Set every parameter to ``value`` (mostly for degenerate-network tests)."""
        for p in self.params.values():
            p.data[...] = value
