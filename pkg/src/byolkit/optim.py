"""Adaptive-moment optimizer with decoupled weight decay."""

import numpy as np


class AdamW:
    def __init__(self, named_params, lr, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0, frozen=()):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.frozen = set(frozen)
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items() if n not in self.frozen}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items() if n not in self.frozen}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            if name in self.frozen or p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            upd = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                upd = upd + self.weight_decay * p.data
            p.data = p.data - self.lr * upd

    def state_dict(self):
        d = {"t": self.t}
        for n in self.m:
            d[f"m.{n}"] = self.m[n]
            d[f"v.{n}"] = self.v[n]
        return d

    def load_state_dict(self, d):
        self.t = int(d["t"])
        for n in self.m:
            self.m[n] = np.array(d[f"m.{n}"], copy=True)
            self.v[n] = np.array(d[f"v.{n}"], copy=True)
