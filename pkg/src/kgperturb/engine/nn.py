"""Small module system: parameter registration, train/eval mode, dtype casting."""
from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    training = True

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for k, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{k}", item
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        yield f"{name}.{k}", item

    def _own_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value

    def _own_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(())

    def parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, p in self._own_parameters():
            out[prefix + name] = p
        for name, child in self.named_children():
            out.update(child.parameters(prefix + name + "."))
        return out

    def buffers(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, b in self._own_buffers():
            out[prefix + name] = b
        for name, child in self.named_children():
            out.update(child.buffers(prefix + name + "."))
        return out

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {k: p.data.copy() for k, p in self.parameters().items()}
        state.update({k: b.copy() for k, b in self.buffers().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params, buffers = self.parameters(), self.buffers()
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state dict missing {sorted(missing)[:5]}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.data.dtype)
        for k, b in buffers.items():
            b[...] = state[k]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.named_children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype) -> "Module":
        for _, p in self._own_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self._cast_buffers(dtype)
        for _, child in self.named_children():
            child.astype(dtype)
        return self

    def _cast_buffers(self, dtype):
        pass

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = Tensor(glorot(rng, n_in, n_out), requires_grad=True)
        self.bias = Tensor(np.zeros((1, n_out), dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, n: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones((1, n), dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros((1, n), dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros((1, n), dtype=np.float32)
        self.running_var = np.ones((1, n), dtype=np.float32)
        self.momentum = momentum
        self.eps = eps

    def _own_buffers(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var

    def _cast_buffers(self, dtype):
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class MLP(Module):
    """Stack of Linear layers; hidden layers get [batch-norm] -> activation -> [dropout]."""

    def __init__(self, widths, rng: np.random.Generator, batch_norm: bool = False, dropout: float = 0.0,
                 bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        widths = list(widths)
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.norms = [BatchNorm(w, bn_momentum, bn_eps) for w in widths[1:-1]] if batch_norm else []
        self.dropout = dropout

    @property
    def out_width(self) -> int:
        return self.layers[-1].weight.shape[1]

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                if self.norms:
                    x = self.norms[k](x)
                x = T.relu(x)
                x = T.dropout(x, self.dropout, rng, self.training)
        return x
