from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamWState:
    exp_avg: list[np.ndarray]
    exp_avg_sq: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    weight_decay: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor], **kwargs) -> "AdamWState":
        return cls(
            exp_avg=[np.zeros_like(p.data) for p in params],
            exp_avg_sq=[np.zeros_like(p.data) for p in params],
            **kwargs,
        )


def adamw_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamWState) -> None:
    """One AdamW update, in place: decoupled decay, then the bias-corrected Adam step."""
    if len(params) != len(state.exp_avg):
        raise ValueError("optimizer state does not match parameter list")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    lr = state.lr
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if m.shape != p.data.shape:
            raise ValueError(f"moment buffer {m.shape} does not match parameter {p.data.shape}")
        p.data *= 1 - lr * state.weight_decay
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class AdamW:
    params: list[Tensor]
    lr: float = 1e-3
    weight_decay: float = 1e-5
    state: AdamWState = field(init=False)

    def __post_init__(self):
        self.state = AdamWState.for_params(self.params, lr=self.lr, weight_decay=self.weight_decay)

    def set_lr(self, lr: float) -> None:
        self.state.lr = lr

    def step(self) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def lr_schedule(epoch: int, total_epochs: int, lr0: float = 1e-3, lr_min: float = 1e-8) -> float:
    """Linear decay from ``lr0`` at epoch 0 to ``lr_min`` at the last epoch."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if total_epochs == 1:
        return lr0
    frac = epoch / (total_epochs - 1)
    return lr0 + (lr_min - lr0) * frac
