"""Minimal numpy Adam and cosine learning-rate schedule."""

import math

import numpy as np


def cosine_lr(step, total_steps, lr_max, lr_min=0.0):
    """Cosine-annealed learning rate at ``step`` of ``total_steps`` (step 0 gives ``lr_max``)."""
    if total_steps <= 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


class Adam:
    """Adam over a dict of named numpy parameters, updated in place.

    Parameters
    ----------
    params : dict[str, np.ndarray]
        Arrays to optimise. They are modified in place by :meth:`step`.
    lr : float
        Default learning rate, overridable per call.
    betas : tuple of float
    eps : float
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def reset_state(self, name, index, axis=0):
        """Zero the moment estimates of a slice (e.g. resampled neurons)."""
        sl = [slice(None)] * self.m[name].ndim
        sl[axis] = index
        self.m[name][tuple(sl)] = 0.0
        self.v[name][tuple(sl)] = 0.0
