"""Adamax with per-partition learning rates and global-norm clipping."""

from __future__ import annotations

from collections import OrderedDict
from typing import Mapping

import numpy as np

from .autodiff import DimensionError, Tensor


class Adamax:
    """Infinity-norm Adam variant.

    ``groups`` maps a partition name to an ordered name->Tensor mapping; the
    learning rate for each partition is looked up in ``lr_map`` at step time,
    so the two-stage schedule can change rates without rebuilding state.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = OrderedDict()
        self.u: dict[str, np.ndarray] = OrderedDict()

    def step(self, groups: Mapping[str, Mapping[str, Tensor]], lr_map: Mapping[str, float]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = 1.0 - b1 ** self.t
        for part, params in groups.items():
            lr = lr_map[part]
            for name, p in params.items():
                key = f"{part}/{name}"
                g = p.grad
                if g is None:
                    g = np.zeros_like(p.data)
                elif g.shape != p.data.shape:
                    raise DimensionError(f"{key}: grad shape {g.shape} != param shape {p.data.shape}")
                m = self.m.get(key)
                u = self.u.get(key)
                if m is None:
                    m = np.zeros_like(p.data)
                    u = np.zeros_like(p.data)
                m = b1 * m + (1.0 - b1) * g
                u = np.maximum(b2 * u, np.abs(g))
                self.m[key], self.u[key] = m, u
                p.data = p.data - (lr / corr) * m / (u + self.eps)
                p.grad = None

    def state_records(self) -> list[tuple[str, np.ndarray]]:
        recs = [("__t__", np.array([float(self.t)]))]
        recs += [(f"m:{k}", v) for k, v in self.m.items()]
        recs += [(f"u:{k}", v) for k, v in self.u.items()]
        return recs

    def load_records(self, records: Mapping[str, np.ndarray]) -> None:
        self.t = int(records["__t__"][0])
        self.m = OrderedDict((k[2:], v.copy()) for k, v in records.items() if k.startswith("m:"))
        self.u = OrderedDict((k[2:], v.copy()) for k, v in records.items() if k.startswith("u:"))


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale grads in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if total > max_norm:
        k = max_norm / (total + 1e-12)
        for p in params:
            p.grad = p.grad * k
    return total
