"""Adam with bias correction plus a reduce-on-plateau schedule."""

import numpy as np

from .errors import DivergenceError


class Adam:
    """Standard Adam update over an ordered list of named parameters."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {}
        self._v = {}

    def step(self, named_params, grads):
        """Update parameters in place from a {name: gradient} mapping."""
        self.step_count += 1
        t = self.step_count
        for name, param in named_params:
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for {name}")
            if name not in self._m:
                self._m[name] = np.zeros_like(param)
                self._v[name] = np.zeros_like(param)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` when a metric stops improving.

    ``mode="max"`` treats larger metric values as better (the validation
    mean recall). The rate never drops below ``floor`` and is never raised,
    so a zero learning rate stays zero.
    """

    def __init__(self, optimizer, factor=0.1, patience=5, floor=1e-5, mode="max"):
        if mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.floor = floor
        self.mode = mode
        self.best = None
        self.stale_epochs = 0

    @property
    def learning_rate(self):
        return self.optimizer.learning_rate

    def update(self, metric):
        """Record one epoch's metric; returns the (possibly reduced) rate."""
        improved = (
            self.best is None
            or (self.mode == "max" and metric > self.best)
            or (self.mode == "min" and metric < self.best)
        )
        if improved:
            self.best = metric
            self.stale_epochs = 0
        else:
            self.stale_epochs += 1
            if self.stale_epochs >= self.patience:
                lr = self.optimizer.learning_rate
                if lr > self.floor:
                    self.optimizer.learning_rate = max(lr * self.factor, self.floor)
                self.stale_epochs = 0
        return self.optimizer.learning_rate
