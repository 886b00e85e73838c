"""AdamW with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping

import numpy as np

from ..exceptions import NonFiniteGradient, ShapeMismatch
from .tensor import Tensor


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "weight_decay": self.weight_decay}


def adamw_step(params: List[np.ndarray], grads: List[np.ndarray], state: AdamWState) -> None:
    """One in-place AdamW update of ``params``.

    Decay is applied to the weights first (w <- w - lr*wd*w), then the
    bias-corrected Adam step.
    """
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters, {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for k, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient {k}: {g.shape} vs parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient {k} has non-finite entries")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if state.weight_decay:
            p -= p.dtype.type(state.lr * state.weight_decay) * p
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


class AdamW:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01, check_finite: bool = False):
        self.params: Dict[str, Tensor] = dict(params)
        self.state = AdamWState(lr, betas[0], betas[1], eps, weight_decay)
        self.check_finite = check_finite

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        tensors = list(self.params.values())
        adamw_step([p.data for p in tensors], [p.grad for p in tensors], self.state)
        if self.check_finite:
            for name, p in self.params.items():
                if not np.all(np.isfinite(p.data)):
                    raise NonFiniteGradient(f"parameter {name} became non-finite")
