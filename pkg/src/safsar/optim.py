"""Adam optimizer over a parameter store; frozen tensors are never touched."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .numerics import ParamStore, Tensor


class Adam:
    """Standard Adam with bias correction, applied in place to trainable tensors."""

    def __init__(
        self,
        store: ParamStore,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.store.trainable():
            g = grads.get(p)
            if g is None:
                continue
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            if self.lr == 0.0:
                continue
            m_hat = m / (1.0 - b1 ** self._t)
            v_hat = v / (1.0 - b2 ** self._t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
