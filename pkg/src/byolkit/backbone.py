"""Residual ConvNet family with named tap points and freeze masks.

Families: r18 (basic blocks), r50 (bottleneck), wide50/wide101 (2x mid
width). width_multiplier scales every base width, rounded to the nearest
positive integer; bottleneck stage outputs are expansion (4x) times the
rounded mid width. The desk profile uses width_multiplier=1/8 so the full
96x96 tap-point geometry is exercised at ~1.5% of the parameters.

wide101's widening factor is not standard-defined here; it reuses wide50's
2x factor.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import BatchNorm, Conv2d, Module, Parameter, rng_for

TAPS = ("layer1", "layer2", "layer3", "layer4")

FAMILIES = {
    "r18": dict(block="basic", blocks=(2, 2, 2, 2), widths=(64, 128, 256, 512)),
    "r50": dict(block="bottleneck", blocks=(3, 4, 6, 3), widths=(64, 128, 256, 512)),
    "wide50": dict(block="bottleneck", blocks=(3, 4, 6, 3), widths=(128, 256, 512, 1024)),
    "wide101": dict(block="bottleneck", blocks=(3, 4, 23, 3), widths=(128, 256, 512, 1024)),
}

EXPANSION = {"basic": 1, "bottleneck": 4}


@dataclass(frozen=True)
class BackboneConfig:
    family: str = "r18"
    width_multiplier: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.width_multiplier <= 0:
            raise ValueError("width_multiplier must be > 0")

    def stage_widths(self):
        """(mid, out) channel widths per stage after the multiplier."""
        fam = FAMILIES[self.family]
        exp = EXPANSION[fam["block"]]
        mids = tuple(max(1, round(w * self.width_multiplier)) for w in fam["widths"])
        return mids, tuple(m * exp for m in mids)

    @property
    def stem_width(self):
        return max(1, round(64 * self.width_multiplier))


def _ceil_div(a, b):
    return -(-a // b)


def feature_shape(config, tap, input_hw):
    """(C, H, W) of the feature map at `tap` for a square input."""
    if tap not in TAPS:
        raise ValueError(f"unknown tap {tap!r}")
    if input_hw < 32:
        raise ValueError(f"input {input_hw} too small for the tap stride product")
    _, outs = config.stage_widths()
    k = TAPS.index(tap)
    s = input_hw
    s = _ceil_div(s, 2)  # stem conv stride 2
    s = _ceil_div(s, 2)  # stem pool stride 2
    for _ in range(k):
        s = _ceil_div(s, 2)
    if s < 1:
        raise ValueError(f"input {input_hw} collapses below 1x1 at {tap}")
    return outs[k], s, s


class BasicBlock(Module):
    def __init__(self, c_in, c_out, stride, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, pad=1, dtype=dtype)
        self.bn1 = BatchNorm(c_out, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, stride=1, pad=1, dtype=dtype)
        self.bn2 = BatchNorm(c_out, dtype=dtype)
        self.bn2.weight.data[:] = 0.0  # zero-init residual branch
        if stride != 1 or c_in != c_out:
            self.down_conv = Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype)
            self.down_bn = BatchNorm(c_out, dtype=dtype)
        else:
            self.down_conv = None
            self.down_bn = None

    def __call__(self, x):
        y = ad.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return ad.relu(ad.add(y, skip))


class Bottleneck(Module):
    def __init__(self, c_in, mid, stride, rng, dtype):
        super().__init__()
        c_out = 4 * mid
        self.conv1 = Conv2d(c_in, mid, 1, rng, dtype=dtype)
        self.bn1 = BatchNorm(mid, dtype=dtype)
        self.conv2 = Conv2d(mid, mid, 3, rng, stride=stride, pad=1, dtype=dtype)
        self.bn2 = BatchNorm(mid, dtype=dtype)
        self.conv3 = Conv2d(mid, c_out, 1, rng, dtype=dtype)
        self.bn3 = BatchNorm(c_out, dtype=dtype)
        self.bn3.weight.data[:] = 0.0
        if stride != 1 or c_in != c_out:
            self.down_conv = Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype)
            self.down_bn = BatchNorm(c_out, dtype=dtype)
        else:
            self.down_conv = None
            self.down_bn = None

    def __call__(self, x):
        y = ad.relu(self.bn1(self.conv1(x)))
        y = ad.relu(self.bn2(self.conv2(y)))
        y = self.bn3(self.conv3(y))
        skip = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return ad.relu(ad.add(y, skip))


class Backbone(Module):
    def __init__(self, config, rng=None, dtype=np.float32):
        super().__init__()
        if rng is None:
            rng = rng_for(0, 11)
        self.config = config
        fam = FAMILIES[config.family]
        mids, outs = config.stage_widths()
        stem = config.stem_width
        self.conv1 = Conv2d(3, stem, 7, rng, stride=2, pad=3, dtype=dtype)
        self.bn1 = BatchNorm(stem, dtype=dtype)
        c_in = stem
        for si, (n_blocks, mid, out) in enumerate(zip(fam["blocks"], mids, outs)):
            stride = 1 if si == 0 else 2
            blocks = []
            for bi in range(n_blocks):
                s = stride if bi == 0 else 1
                if fam["block"] == "basic":
                    blocks.append(BasicBlock(c_in, out, s, rng, dtype))
                else:
                    blocks.append(Bottleneck(c_in, mid, s, rng, dtype))
                c_in = out
            setattr(self, f"layer{si + 1}", blocks)
        self.out_dim = outs[-1]

    def __call__(self, x, tap=None):
        """Forward to `tap` (or layer4 when None). x: Tensor (N,3,H,W)."""
        y = ad.max_pool2d(ad.relu(self.bn1(self.conv1(x))), 3, 2, 1)
        upto = TAPS.index(tap) + 1 if tap is not None else 4
        for si in range(upto):
            for block in getattr(self, f"layer{si + 1}"):
                y = block(y)
        return y

    def pooled(self, x):
        """Global average pooled layer4 features: (N, out_dim)."""
        return ad.mean(self(x), axis=(2, 3))


@dataclass(frozen=True)
class FreezeMask:
    tap: str
    frozen: frozenset
    trainable: frozenset


def _stage_prefixes(tap):
    k = TAPS.index(tap) + 1
    return ("conv1.", "bn1.") + tuple(f"layer{i}." for i in range(1, k + 1))


def freeze_through(backbone, tap):
    """Freeze stem plus stages 1..tap: params non-trainable, BN stats locked."""
    prefixes = _stage_prefixes(tap)
    frozen, trainable = set(), set()
    for name, p in backbone.named_parameters():
        if name.startswith(prefixes):
            p.requires_grad = False
            frozen.add(name)
        else:
            trainable.add(name)
    for attr in ("conv1", "bn1") + tuple(f"layer{i}" for i in range(1, TAPS.index(tap) + 2)):
        obj = getattr(backbone, attr)
        mods = obj if isinstance(obj, list) else [obj]
        for m in mods:
            for sub in m.modules():
                if isinstance(sub, BatchNorm):
                    sub.locked = True
    return FreezeMask(tap, frozenset(frozen), frozenset(trainable))


def count_params(config):
    """Exact count of trainable scalars (convs + BN affine) at this width."""
    model = Backbone(config, rng_for(0, 12))
    return sum(p.data.size for _, p in model.named_parameters())
