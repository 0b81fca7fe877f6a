"""Modules, layers, and initializers on top of the autodiff engine."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def rng_for(seed, *path):
    """Deterministic, splittable stream: one generator per (seed, path)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path)))


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(np.ascontiguousarray(data), requires_grad=True)


class Buffer:
    """Named non-trainable state (BN running statistics)."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.ascontiguousarray(data)


class Module:
    def __init__(self):
        self.training = True

    def _children(self):
        for name, v in vars(self).items():
            if isinstance(v, Module):
                yield name, v
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, v in vars(self).items():
            if isinstance(v, Parameter):
                yield prefix + name, v
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix=""):
        for name, v in vars(self).items():
            if isinstance(v, Buffer):
                yield prefix + name, v
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        d = {name: p.data for name, p in self.named_parameters()}
        d.update({name: b.data for name, b in self.named_buffers()})
        return d

    def load_state_dict(self, d):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(d)
        extra = set(d) - (set(own) | set(bufs))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in d.items():
            tgt = own[name] if name in own else bufs[name]
            if tgt.data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {tgt.data.shape} vs {arr.shape}")
            tgt.data = np.ascontiguousarray(arr.astype(tgt.data.dtype, copy=True))

    def param_nbytes_hash(self):
        """Order-stable hash over raw parameter bytes (freeze-contract checks)."""
        import hashlib

        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def trunc_normal(rng, shape, std, dtype):
    x = rng.standard_normal(shape) * std
    return np.clip(x, -2 * std, 2 * std).astype(dtype)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, dtype=np.float32, init="he"):
        super().__init__()
        if init == "he":
            w = he_normal(rng, (d_in, d_out), d_in, dtype)
        else:
            w = trunc_normal(rng, (d_in, d_out), 0.02, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.weight)
        if self.bias is not None:
            y = ad.add(y, self.bias)
        return y


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, pad=0, bias=False, dtype=np.float32):
        super().__init__()
        fan_in = c_in * k * k
        self.weight = Parameter(he_normal(rng, (c_out, c_in, k, k), fan_in, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None
        self.stride = stride
        self.pad = pad

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm(Module):
    """Works for (N,C) and (N,C,H,W) inputs.

    `locked` pins the running statistics (eval-mode normalization) even while
    the surrounding model trains; used by frozen backbone stages.
    """

    def __init__(self, c, dtype=np.float32, eps=1e-5, momentum=0.1):
        super().__init__()
        self.weight = Parameter(np.ones(c, dtype=dtype))
        self.bias = Parameter(np.zeros(c, dtype=dtype))
        self.running_mean = Buffer(np.zeros(c, dtype=dtype))
        self.running_var = Buffer(np.ones(c, dtype=dtype))
        self.eps = eps
        self.momentum = momentum
        self.locked = False

    def __call__(self, x):
        training = self.training and not self.locked
        return ad.batch_norm(
            x, self.weight, self.bias, self.running_mean.data, self.running_var.data,
            training=training, momentum=self.momentum, eps=self.eps,
        )


class LayerNorm(Module):
    def __init__(self, d, dtype=np.float32, eps=1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(d, dtype=dtype))
        self.bias = Parameter(np.zeros(d, dtype=dtype))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.weight, self.bias, eps=self.eps)


def freeze_module(module):
    for _, p in module.named_parameters():
        p.requires_grad = False
    for m in module.modules():
        if isinstance(m, BatchNorm):
            m.locked = True
    module.eval()
    return module
