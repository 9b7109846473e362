"""Adam optimizer over named parameter collections."""

from __future__ import annotations

import numpy as np

from .errors import ContractError

__all__ = ["AdamState", "adam_step"]


class AdamState:
    """First/second moment accumulators plus hyperparameters.

    Moment arrays are created lazily and always shape-match their
    parameters; the step counter is strictly increasing.
    """

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.98, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params, state):
    """Apply one Adam update to every parameter, then zero their grads.

    ``params`` is a dict mapping names to tensors whose ``grad`` slots
    must already be populated (a missing grad is a contract error).
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {name!r} has no gradient")
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None
