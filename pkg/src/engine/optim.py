"""Optimizers over a ModelInstance's params/grads"""

from typing import Dict

import numpy as np

from src.engine.model import ModelInstance


class SGD:

    def __init__(self, model: ModelInstance, lr: float):
        self.model = model
        self.lr = lr

    def step(self) -> Dict[str, float]:
        return self.model.sgd_step(self.lr)


class AdamW:
    """Adam with decoupled weight decay"""

    def __init__(self, model: ModelInstance, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.model = model
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {lid: {n: np.zeros_like(p) for n, p in g.items()} for lid, g in model.params.items()}
        self.v = {lid: {n: np.zeros_like(p) for n, p in g.items()} for lid, g in model.params.items()}

    def step(self) -> Dict[str, float]:
        self.t += 1
        correction1 = 1 - self.beta1 ** self.t
        correction2 = 1 - self.beta2 ** self.t
        report = {}
        for layer_id, group in self.model.params.items():
            largest = 0.0
            for name, param in group.items():
                grad = self.model.grads[layer_id][name]
                m, v = self.m[layer_id][name], self.v[layer_id][name]
                m *= self.beta1
                m += (1 - self.beta1) * grad
                v *= self.beta2
                v += (1 - self.beta2) * grad * grad
                before = param.copy()
                param *= 1 - self.lr * self.weight_decay
                param -= (self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)).astype(param.dtype)
                if param.size:
                    largest = max(largest, float(np.max(np.abs(param - before))))
            report[layer_id] = largest
        return report


def make_optimizer(name: str, model: ModelInstance, lr: float):
    if name == "SGD":
        return SGD(model, lr)
    if name == "AdamW":
        return AdamW(model, lr)
    raise ValueError(f"unknown optimizer {name!r}")
