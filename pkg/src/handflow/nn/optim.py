"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.05
    total_steps: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")


def schedule_lr(step, cfg: OptimizerConfig):
    """Learning rate at a 1-based step: linear warmup to peak, cosine decay to 0."""
    warmup = cfg.warmup_fraction * cfg.total_steps
    if warmup > 0 and step < warmup:
        return cfg.learning_rate * step / warmup
    if cfg.total_steps <= warmup:
        return cfg.learning_rate
    frac = (step - warmup) / (cfg.total_steps - warmup)
    frac = min(max(frac, 0.0), 1.0)
    return cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * frac))


class AdamW:
    """Decoupled-weight-decay Adam over a {name: Tensor} parameter mapping."""

    def __init__(self, named_params, cfg: OptimizerConfig):
        self.params = dict(named_params)
        self.cfg = cfg
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        """Apply one update using the gradients currently stored on the parameters."""
        self.step_count += 1
        c = self.cfg
        lr = schedule_lr(self.step_count, c)
        b1t = 1.0 - c.beta1**self.step_count
        b2t = 1.0 - c.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + c.eps)
            if c.weight_decay:
                update = update + c.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)
        return lr

    def state_dict(self):
        return {
            "step_count": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k]).copy()
            self.v[k] = np.asarray(state["v"][k]).copy()
