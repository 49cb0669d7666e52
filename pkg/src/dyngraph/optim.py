"""Adam with bias correction over named parameter collections."""

from __future__ import annotations

import warnings

import numpy as np

from .autodiff import Parameter


class AdamState:
    """First/second moment buffers keyed by parameter name."""

    def __init__(self, params: dict[str, Parameter]):
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.step = 0


def adam_step(
    params: dict[str, Parameter],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update.

    Parameters with a non-finite gradient are skipped (moments untouched)
    with a warning; non-trainable parameters are never updated.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        if not p.trainable:
            continue
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != param shape {p.data.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            warnings.warn(f"non-finite gradient for {name!r}; update skipped", RuntimeWarning)
            continue
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
