"""AdamW with decoupled weight decay and a linear warmup/decay schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class LinearWarmupSchedule:
    """Linear warmup to ``peak_lr`` followed by linear decay to zero.

    The rate at step ``s`` during warmup is ``peak * s / warmup_steps`` --
    zero at s=0. After ``total_steps`` the rate is clamped at zero.
    """

    peak_lr: float
    warmup_steps: int
    total_steps: int

    def rate_at(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be >= 0")
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.peak_lr * step / self.warmup_steps
        if step >= self.total_steps:
            return 0.0
        if self.total_steps <= self.warmup_steps:
            return self.peak_lr
        return self.peak_lr * (self.total_steps - step) / (self.total_steps - self.warmup_steps)


class AdamW:
    """Standard AdamW; weight decay is decoupled and scaled by the step rate.

    ``step_count`` is the number of completed updates; the update performed
    next reads its learning rate at that index (so the very first update of
    a warmed-up schedule applies rate 0 while still advancing the moments).
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        schedule: LinearWarmupSchedule,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.schedule = schedule
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[Tensor, Tensor]) -> None:
        lr = self.schedule.rate_at(self.step_count)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g_t = grads.get(p)
            g = g_t.data if g_t is not None else 0.0
            if g_t is not None and g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * (update + self.weight_decay * p.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.m[name] = np.array(arrays[f"opt.m.{name}"])
            self.v[name] = np.array(arrays[f"opt.v.{name}"])
        self.step_count = int(step_count)
