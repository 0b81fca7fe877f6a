"""Transformer heads over raw images or tapped feature maps.

patchify zero-pads H,W to the next multiple of p and embeds each flattened
p x p x C patch with a learned linear map; token count is
ceil(H/p)*ceil(W/p) in row-major patch order. The class-token head adds a
learned positional table (sized at construction); the seq_pool head uses
neither class token nor positional embedding. The conv tokenizer is a small
conv->rectifier->maxpool stack whose surviving spatial positions become
tokens (CCT naming: CCT-L/kxc = L encoder layers, kxk kernel, c conv layers).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import Conv2d, LayerNorm, Linear, Module, Parameter, rng_for, trunc_normal


def patch_count(h, w, p):
    return math.ceil(h / p) * math.ceil(w / p)


@dataclass(frozen=True)
class TransformerConfig:
    n_classes: int
    depth: int = 6
    heads: int = 4
    dim: int = 128
    mlp_ratio: float = 2.0
    head_kind: str = "class_token"   # class_token | seq_pool
    tokenizer: str = "patchify"      # patchify | conv
    patch: int = 8
    conv_layers: int = 1
    conv_kernel: int = 3

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.head_kind not in ("class_token", "seq_pool"):
            raise ValueError(f"unknown head_kind {self.head_kind!r}")
        if self.tokenizer not in ("patchify", "conv"):
            raise ValueError(f"unknown tokenizer {self.tokenizer!r}")
        if self.head_kind == "class_token" and self.tokenizer == "conv":
            raise ValueError("conv tokenizer is seq_pool-only (compact transformers)")


class PatchEmbed(Module):
    def __init__(self, in_shape, p, dim, rng, dtype=np.float32):
        super().__init__()
        c, h, w = in_shape
        self.in_shape = in_shape
        self.p = p
        self.pad_h = (-h) % p
        self.pad_w = (-w) % p
        self.n_tokens = patch_count(h, w, p)
        self.proj = Linear(c * p * p, dim, rng, dtype=dtype, init="trunc")

    def __call__(self, x):
        n = x.shape[0]
        c, h, w = self.in_shape
        p = self.p
        if self.pad_h or self.pad_w:
            x = ad.pad2d(x, 0, self.pad_h, 0, self.pad_w)
        gh, gw = (h + self.pad_h) // p, (w + self.pad_w) // p
        x = ad.reshape(x, (n, c, gh, p, gw, p))
        x = ad.transpose(x, (0, 2, 4, 1, 3, 5))
        x = ad.reshape(x, (n, gh * gw, c * p * p))
        return self.proj(x)


def attention(q, k, v):
    """softmax(QK^T/sqrt(d_head))V. q,k,v: (..., T, d_head) Tensors."""
    d = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(d))
    weights = ad.softmax(scores, axis=-1)
    return ad.matmul(weights, v), weights


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng, dtype=np.float32):
        super().__init__()
        self.heads = heads
        self.d_head = dim // heads
        self.qkv = Linear(dim, 3 * dim, rng, dtype=dtype, init="trunc")
        self.proj = Linear(dim, dim, rng, dtype=dtype, init="trunc")

    def __call__(self, x):
        n, t, d = x.shape
        qkv = self.qkv(x)
        qkv = ad.reshape(qkv, (n, t, 3, self.heads, self.d_head))
        qkv = ad.transpose(qkv, (2, 0, 3, 1, 4))  # (3, n, heads, t, d_head)
        q = ad.index(qkv, 0)
        k = ad.index(qkv, 1)
        v = ad.index(qkv, 2)
        mixed, _ = attention(q, k, v)
        mixed = ad.transpose(mixed, (0, 2, 1, 3))
        mixed = ad.reshape(mixed, (n, t, d))
        return self.proj(mixed)


class EncoderBlock(Module):
    """Pre-norm: x + attn(LN(x)); x + mlp(LN(x))."""

    def __init__(self, dim, heads, mlp_ratio, rng, dtype=np.float32):
        super().__init__()
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        hidden = int(dim * mlp_ratio)
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype, init="trunc")
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype, init="trunc")

    def __call__(self, x):
        x = ad.add(x, self.attn(self.ln1(x)))
        x = ad.add(x, self.fc2(ad.gelu(self.fc1(self.ln2(x)))))
        return x


class SeqPool(Module):
    """Learned softmax-weighted average over tokens: w = softmax(g(x))."""

    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        self.g = Linear(dim, 1, rng, dtype=dtype, init="trunc")

    def __call__(self, x):
        logits = ad.transpose(self.g(x), (0, 2, 1))      # (N, 1, T)
        weights = ad.softmax(logits, axis=-1)
        pooled = ad.matmul(weights, x)                   # (N, 1, d)
        return ad.reshape(pooled, (x.shape[0], x.shape[2])), weights


class ConvTokenizer(Module):
    """conv kxk -> rectifier -> maxpool(3,2,1), repeated; positions = tokens."""

    def __init__(self, in_shape, n_layers, kernel, dim, rng, dtype=np.float32):
        super().__init__()
        c, h, w = in_shape
        chans = [max(dim // 2, 1)] * (n_layers - 1) + [dim]
        self.convs = []
        for c_out in chans:
            self.convs.append(Conv2d(c, c_out, kernel, rng, stride=1,
                                     pad=kernel // 2, bias=True, dtype=dtype))
            c = c_out
            h = -(-h // 2)
            w = -(-w // 2)
            if h < 1 or w < 1:
                raise ValueError("spatial size collapsed below 1x1 in conv tokenizer")
        self.out_hw = (h, w)
        self.n_tokens = h * w

    def __call__(self, x):
        for conv in self.convs:
            x = ad.max_pool2d(ad.relu(conv(x)), 3, 2, 1)
        n, c = x.shape[0], x.shape[1]
        x = ad.reshape(x, (n, c, -1))
        return ad.transpose(x, (0, 2, 1))


class TransformerClassifier(Module):
    """ViT (class_token) or CVT/CCT (seq_pool) over images or feature maps."""

    def __init__(self, config, in_shape, seed, dtype=np.float32):
        super().__init__()
        rng = rng_for(seed, 30)
        self.config = config
        d = config.dim
        if config.tokenizer == "patchify":
            self.tokenizer = PatchEmbed(in_shape, config.patch, d, rng, dtype)
        else:
            self.tokenizer = ConvTokenizer(in_shape, config.conv_layers,
                                           config.conv_kernel, d, rng, dtype)
        n_tokens = self.tokenizer.n_tokens
        if config.head_kind == "class_token":
            self.cls_token = Parameter(trunc_normal(rng, (1, 1, d), 0.02, dtype))
            self.pos_embed = Parameter(trunc_normal(rng, (1, n_tokens + 1, d), 0.02, dtype))
            self.pool = None
        else:
            self.cls_token = None
            self.pos_embed = None
            self.pool = SeqPool(d, rng, dtype)
        self.blocks = [EncoderBlock(d, config.heads, config.mlp_ratio, rng, dtype)
                       for _ in range(config.depth)]
        self.ln_f = LayerNorm(d, dtype=dtype)
        self.head = Linear(d, config.n_classes, rng, dtype=dtype, init="trunc")
        self.n_tokens = n_tokens

    def encode(self, tokens):
        """Run encoder blocks + final norm over a (N,T,d) token Tensor."""
        for block in self.blocks:
            tokens = block(tokens)
        return self.ln_f(tokens)

    def forward_tokens(self, tokens):
        n = tokens.shape[0]
        if self.config.head_kind == "class_token":
            if tokens.shape[1] + 1 != self.pos_embed.shape[1]:
                raise ValueError(
                    f"token count {tokens.shape[1]} does not match positional table "
                    f"{self.pos_embed.shape[1] - 1}"
                )
            cls = ad.broadcast_to(self.cls_token, (n, 1, self.config.dim))
            tokens = ad.concat([cls, tokens], axis=1)
            tokens = ad.add(tokens, self.pos_embed)
            encoded = self.encode(tokens)
            pooled = ad.index(encoded, (slice(None), 0))
        else:
            encoded = self.encode(tokens)
            pooled, _ = self.pool(encoded)
        return self.head(pooled)

    def __call__(self, x):
        return self.forward_tokens(self.tokenizer(x))


def vit_forward(model, x):
    return model(x)


def cct_name(depth, kernel, conv_layers):
    return f"CCT{depth}/{kernel}x{conv_layers}"
