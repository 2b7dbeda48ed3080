"""First-order optimizers over lists of engine parameters.

Both keep per-parameter state keyed by position and skip parameters whose
gradient is None (nothing on the loss path reached them this step).
"""

import numpy as np


class Optimizer:
    def __init__(self, params, lr):
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        raise NotImplementedError


class RMSprop(Optimizer):
    """theta -= lr * g / (sqrt(v) + eps) with v an EMA of g^2."""

    def __init__(self, params, lr=1e-3, decay=0.99, eps=1e-8):
        super().__init__(params, lr)
        if not 0 <= decay < 1:
            raise ValueError(f"decay must be in [0, 1), got {decay}")
        self.decay = decay
        self.eps = eps
        self.v = [None] * len(self.params)

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.v[i] is None:
                self.v[i] = np.zeros_like(p.data)
            self.v[i] = self.decay * self.v[i] + (1.0 - self.decay) * g * g
            p.data = p.data - self.lr * g / (np.sqrt(self.v[i]) + self.eps)


class RAdam(Optimizer):
    """Rectified Adam.

    Uses the plain (unrectified) bias-corrected first moment while the
    variance estimate is unreliable (rho_t <= 4) and switches to the
    variance-rectified update once enough steps have accumulated.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        for name, b in (("beta1", beta1), ("beta2", beta2)):
            if not 0 <= b < 1:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [None] * len(self.params)
        self.v = [None] * len(self.params)

    def step(self):
        self.t += 1
        t = self.t
        b1, b2 = self.beta1, self.beta2
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        b2t = b2 ** t
        rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.m[i] is None:
                self.m[i] = np.zeros_like(p.data)
                self.v[i] = np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1 ** t)
            if rho_t > 4.0:
                r_num = (rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                r_den = (rho_inf - 4.0) * (rho_inf - 2.0) * rho_t
                rect = np.sqrt(r_num / r_den)
                v_hat = np.sqrt(self.v[i] / (1.0 - b2t))
                p.data = p.data - self.lr * rect * m_hat / (v_hat + self.eps)
            else:
                p.data = p.data - self.lr * m_hat


def make_optimizer(name, params, lr):
    name = name.lower()
    if name == "rmsprop":
        return RMSprop(params, lr=lr)
    if name == "radam":
        return RAdam(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r} (expected rmsprop or radam)")
