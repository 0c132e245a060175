"""Central finite-difference verification of analytic gradients.

The relative error uses max(|analytic|, |numeric|, 1e-3) as denominator so
near-zero gradients do not inflate the ratio; all math is float64 and the
caller must run with dropout disabled (deterministic loss).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from xane.nn.layers import Module, Parameter

EPS = 1e-3
REL_FLOOR = 1e-3


def max_relative_error(params: list[tuple[str, Parameter]],
                       compute_loss: Callable[[], float],
                       compute_grads: Callable[[], float],
                       eps: float = EPS,
                       max_elems_per_tensor: int | None = None,
                       rng: np.random.Generator | None = None) -> tuple[float, str]:
    """Largest relative disagreement over all checked parameter elements.

    compute_grads must zero, forward, backward and leave gradients on the
    parameters; compute_loss is forward-only. Returns (max_rel, location).
    """
    compute_grads()
    analytic = {name: p.grad.copy() for name, p in params}
    worst, where = 0.0, ""
    for name, p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        if max_elems_per_tensor is not None and n > max_elems_per_tensor:
            gen = rng if rng is not None else np.random.default_rng(0)
            idx = gen.choice(n, size=max_elems_per_tensor, replace=False)
        else:
            idx = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = compute_loss()
            flat[i] = orig - eps
            f_minus = compute_loss()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), REL_FLOOR)
            if rel > worst:
                worst, where = rel, f"{name}[{i}]"
    return worst, where


def check_module(module: Module, loss_fn: Callable[[Module], float],
                 grad_fn: Callable[[Module], float], **kw) -> tuple[float, str]:
    """Convenience wrapper: checks every parameter of `module`.

    loss_fn(module) runs a forward pass and returns the scalar loss;
    grad_fn(module) additionally backpropagates into parameter grads.
    """
    module.train(False)

    def compute_loss():
        return loss_fn(module)

    def compute_grads():
        module.zero_grad()
        return grad_fn(module)

    return max_relative_error(module.named_parameters(), compute_loss,
                              compute_grads, **kw)
