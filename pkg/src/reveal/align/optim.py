import numpy as np


class AdamW:
    """Adam with decoupled weight decay over a dict of numpy arrays.

    Parameters are updated in place. Names listed in ``no_decay`` skip the
    weight-decay shrinkage.
    """

    def __init__(self, lr=2.42e-4, betas=(0.9, 0.999), eps=8.61e-7, weight_decay=0.0232, no_decay=("beta",)):
        if lr < 0 or eps <= 0 or weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0 and eps > 0")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1 - self.beta1**self.t
        bc2 = 1 - self.beta2**self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            if self.weight_decay and name not in self.no_decay:
                p *= 1 - self.lr * self.weight_decay
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
