"""Layers with explicit forward/backward passes.

Every layer follows one protocol::

    y, cache = layer.forward(params, x)
    dx = layer.backward(params, cache, dy, grads)

``params`` and ``grads`` are flat ``name -> ndarray`` dicts; ``backward``
accumulates parameter gradients into ``grads`` in place. Layers hold only
their names and shapes, never arrays, so one parameter dict can be copied,
perturbed or serialized freely.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..errors import NumericalError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def trunc_normal(rng, shape, std=0.02):
    return np.clip(rng.standard_normal(shape), -2.0, 2.0) * std


def gelu(x):
    """Exact (erf) GELU; returns ``(y, cache)``."""
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return x * cdf, (x, cdf)


def gelu_backward(cache, dy):
    x, cdf = cache
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _fold(x):
    return x.reshape(-1, x.shape[-1])


class Linear:
    def __init__(self, name, d_in, d_out, bias=True):
        self.name, self.d_in, self.d_out, self.bias = name, d_in, d_out, bias

    def init(self, rng, params):
        params[f"{self.name}.weight"] = trunc_normal(rng, (self.d_in, self.d_out))
        if self.bias:
            params[f"{self.name}.bias"] = np.zeros(self.d_out)

    def forward(self, params, x):
        y = x @ params[f"{self.name}.weight"]
        if self.bias:
            y = y + params[f"{self.name}.bias"]
        return y, x

    def backward(self, params, x, dy, grads):
        grads[f"{self.name}.weight"] += _fold(x).T @ _fold(dy)
        if self.bias:
            grads[f"{self.name}.bias"] += _fold(dy).sum(axis=0)
        return dy @ params[f"{self.name}.weight"].T


class LayerNorm:
    """Normalization over the last axis, with optional learned affine."""

    def __init__(self, name, dim, eps=1e-6, affine=True):
        self.name, self.dim, self.eps, self.affine = name, dim, eps, affine

    def init(self, rng, params):
        if self.affine:
            params[f"{self.name}.weight"] = np.ones(self.dim)
            params[f"{self.name}.bias"] = np.zeros(self.dim)

    def normalize(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + self.eps)
        return xc * inv, inv

    def forward(self, params, x):
        xhat, inv = self.normalize(x)
        y = xhat
        if self.affine:
            y = xhat * params[f"{self.name}.weight"] + params[f"{self.name}.bias"]
        return y, (xhat, inv)

    def backward(self, params, cache, dy, grads):
        xhat, inv = cache
        if self.affine:
            grads[f"{self.name}.weight"] += _fold(dy * xhat).sum(axis=0)
            grads[f"{self.name}.bias"] += _fold(dy).sum(axis=0)
            dy = dy * params[f"{self.name}.weight"]
        m1 = dy.mean(axis=-1, keepdims=True)
        m2 = (dy * xhat).mean(axis=-1, keepdims=True)
        return (dy - m1 - xhat * m2) * inv


class GroupNorm:
    """GroupNorm over ``(N, C, L)`` inputs with per-channel affine."""

    def __init__(self, name, groups, channels, eps=1e-5):
        if channels % groups:
            raise ValueError("channels must be divisible by groups")
        self.name, self.groups, self.channels, self.eps = name, groups, channels, eps

    def init(self, rng, params):
        params[f"{self.name}.weight"] = np.ones(self.channels)
        params[f"{self.name}.bias"] = np.zeros(self.channels)

    def forward(self, params, x):
        N, C, L = x.shape
        g = x.reshape(N, self.groups, -1)
        gc = g - g.mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt((gc * gc).mean(axis=-1, keepdims=True) + self.eps)
        xhat = (gc * inv).reshape(N, C, L)
        y = xhat * params[f"{self.name}.weight"][:, None] + params[f"{self.name}.bias"][:, None]
        return y, (xhat, inv)

    def backward(self, params, cache, dy, grads):
        xhat, inv = cache
        N, C, L = xhat.shape
        grads[f"{self.name}.weight"] += (dy * xhat).sum(axis=(0, 2))
        grads[f"{self.name}.bias"] += dy.sum(axis=(0, 2))
        dxhat = (dy * params[f"{self.name}.weight"][:, None]).reshape(N, self.groups, -1)
        xh = xhat.reshape(N, self.groups, -1)
        dx = (dxhat - dxhat.mean(axis=-1, keepdims=True)
              - xh * (dxhat * xh).mean(axis=-1, keepdims=True)) * inv
        return dx.reshape(N, C, L)


def conv_out_len(length, kernel, stride, padding):
    return (length + 2 * padding - kernel) // stride + 1


class Conv1d:
    """Bias-free 1-D convolution over ``(N, C_in, L)`` by im2col."""

    def __init__(self, name, c_in, c_out, kernel, stride=1, padding=0):
        self.name = name
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def init(self, rng, params):
        bound = 1.0 / math.sqrt(self.c_in * self.kernel)
        params[f"{self.name}.weight"] = rng.uniform(-bound, bound, (self.c_out, self.c_in, self.kernel))

    def _taps(self, L):
        L_out = conv_out_len(L, self.kernel, self.stride, self.padding)
        return np.arange(L_out)[:, None] * self.stride + np.arange(self.kernel)[None, :]

    def forward(self, params, x):
        N, C, L = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (self.padding, self.padding)))
        cols = xp[:, :, self._taps(L)]  # (N, C_in, L_out, k)
        y = np.einsum("nclk,ock->nol", cols, params[f"{self.name}.weight"], optimize=True)
        return y, (cols, L)

    def backward(self, params, cache, dy, grads):
        cols, L = cache
        W = params[f"{self.name}.weight"]
        grads[f"{self.name}.weight"] += np.einsum("nol,nclk->ock", dy, cols, optimize=True)
        dcols = np.einsum("nol,ock->nclk", dy, W, optimize=True)
        N = dy.shape[0]
        dxp = np.zeros((N, self.c_in, L + 2 * self.padding), dtype=dy.dtype)
        taps = self._taps(L)
        for j in range(self.kernel):
            dxp[:, :, taps[:, j]] += dcols[:, :, :, j]
        return dxp[:, :, self.padding:self.padding + L]


class TemporalConv:
    """Three conv -> GroupNorm -> GELU stages turning ``(N, w)`` patches into ``(N, 8 * L_out)``."""

    def __init__(self, name="conv", patch_len=200, channels=8, groups=4):
        self.name, self.patch_len, self.channels = name, patch_len, channels
        self.stages = [
            (Conv1d(f"{name}.conv1", 1, channels, 15, 8, 7), GroupNorm(f"{name}.norm1", groups, channels)),
            (Conv1d(f"{name}.conv2", channels, channels, 3, 1, 1), GroupNorm(f"{name}.norm2", groups, channels)),
            (Conv1d(f"{name}.conv3", channels, channels, 3, 1, 1), GroupNorm(f"{name}.norm3", groups, channels)),
        ]

    def lengths(self):
        """Sequence length after each stage."""
        out, L = [], self.patch_len
        for conv, _ in self.stages:
            L = conv_out_len(L, conv.kernel, conv.stride, conv.padding)
            out.append(L)
        return out

    @property
    def out_dim(self):
        return self.channels * self.lengths()[-1]

    def init(self, rng, params):
        for conv, norm in self.stages:
            conv.init(rng, params)
            norm.init(rng, params)

    def forward(self, params, x):
        if x.shape[-1] != self.patch_len:
            raise ValueError(f"patch length {x.shape[-1]} != configured {self.patch_len}")
        h = x.reshape(-1, 1, self.patch_len)
        caches = []
        for conv, norm in self.stages:
            h, c_conv = conv.forward(params, h)
            h, c_norm = norm.forward(params, h)
            h, c_act = gelu(h)
            caches.append((c_conv, c_norm, c_act))
        N = h.shape[0]
        return h.reshape(*x.shape[:-1], self.out_dim), (caches, h.shape, x.shape)

    def backward(self, params, cache, dy, grads):
        caches, h_shape, x_shape = cache
        dh = dy.reshape(h_shape)
        for (conv, norm), (c_conv, c_norm, c_act) in zip(reversed(self.stages), reversed(caches)):
            dh = gelu_backward(c_act, dh)
            dh = norm.backward(params, c_norm, dh, grads)
            dh = conv.backward(params, c_conv, dh, grads)
        return dh.reshape(x_shape)


class Attention:
    """Multi-head self-attention with LayerNorm applied to queries and keys per head."""

    def __init__(self, name, dim, heads, qk_affine=True, eps=1e-6):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.name, self.dim, self.heads = name, dim, heads
        self.d_head = dim // heads
        self.qkv = Linear(f"{name}.qkv", dim, 3 * dim)
        self.proj = Linear(f"{name}.proj", dim, dim)
        self.q_norm = LayerNorm(f"{name}.q_norm", self.d_head, eps, qk_affine)
        self.k_norm = LayerNorm(f"{name}.k_norm", self.d_head, eps, qk_affine)

    def init(self, rng, params):
        for layer in (self.qkv, self.proj, self.q_norm, self.k_norm):
            layer.init(rng, params)

    def forward(self, params, x):
        B, N, _ = x.shape
        qkv, c_qkv = self.qkv.forward(params, x)
        qkv = qkv.reshape(B, N, 3, self.heads, self.d_head).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]  # (B, h, N, dh)
        qn, c_q = self.q_norm.forward(params, q)
        kn, c_k = self.k_norm.forward(params, k)
        scale = 1.0 / math.sqrt(self.d_head)
        attn = softmax(qn @ kn.transpose(0, 1, 3, 2) * scale)
        o = (attn @ v).transpose(0, 2, 1, 3).reshape(B, N, self.dim)
        y, c_proj = self.proj.forward(params, o)
        return y, (c_qkv, c_q, c_k, qn, kn, v, attn, c_proj)

    def backward(self, params, cache, dy, grads):
        c_qkv, c_q, c_k, qn, kn, v, attn, c_proj = cache
        B, h, N, dh = v.shape
        scale = 1.0 / math.sqrt(dh)
        do = self.proj.backward(params, c_proj, dy, grads)
        do = do.reshape(B, N, h, dh).transpose(0, 2, 1, 3)
        dattn = do @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ do
        ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
        dqn = ds @ kn
        dkn = ds.transpose(0, 1, 3, 2) @ qn
        dq = self.q_norm.backward(params, c_q, dqn, grads)
        dk = self.k_norm.backward(params, c_k, dkn, grads)
        dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, N, 3 * self.dim)
        return self.qkv.backward(params, c_qkv, dqkv, grads)


class Block:
    """Pre-norm residual block: attention then GELU MLP, each scaled by a learned layer-scale."""

    def __init__(self, name, dim, heads, mlp_hidden, layer_scale_init=1e-3, qk_affine=True):
        self.name, self.dim, self.layer_scale_init = name, dim, layer_scale_init
        self.norm1 = LayerNorm(f"{name}.norm1", dim)
        self.attn = Attention(f"{name}.attn", dim, heads, qk_affine)
        self.norm2 = LayerNorm(f"{name}.norm2", dim)
        self.fc1 = Linear(f"{name}.fc1", dim, mlp_hidden)
        self.fc2 = Linear(f"{name}.fc2", mlp_hidden, dim)

    def init(self, rng, params):
        for layer in (self.norm1, self.attn, self.norm2, self.fc1, self.fc2):
            layer.init(rng, params)
        params[f"{self.name}.gamma1"] = np.full(self.dim, self.layer_scale_init)
        params[f"{self.name}.gamma2"] = np.full(self.dim, self.layer_scale_init)

    def forward(self, params, x):
        g1, g2 = params[f"{self.name}.gamma1"], params[f"{self.name}.gamma2"]
        h, c_n1 = self.norm1.forward(params, x)
        a, c_attn = self.attn.forward(params, h)
        x1 = x + g1 * a
        h, c_n2 = self.norm2.forward(params, x1)
        h, c_fc1 = self.fc1.forward(params, h)
        h, c_act = gelu(h)
        m, c_fc2 = self.fc2.forward(params, h)
        y = x1 + g2 * m
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite activation in {self.name}")
        return y, (c_n1, a, c_attn, c_n2, c_fc1, c_act, m, c_fc2)

    def backward(self, params, cache, dy, grads):
        c_n1, a, c_attn, c_n2, c_fc1, c_act, m, c_fc2 = cache
        g1, g2 = params[f"{self.name}.gamma1"], params[f"{self.name}.gamma2"]
        grads[f"{self.name}.gamma2"] += _fold(dy * m).sum(axis=0)
        dh = self.fc2.backward(params, c_fc2, dy * g2, grads)
        dh = gelu_backward(c_act, dh)
        dh = self.fc1.backward(params, c_fc1, dh, grads)
        dx1 = dy + self.norm2.backward(params, c_n2, dh, grads)
        grads[f"{self.name}.gamma1"] += _fold(dx1 * a).sum(axis=0)
        dh = self.attn.backward(params, c_attn, dx1 * g1, grads)
        return dx1 + self.norm1.backward(params, c_n1, dh, grads)
