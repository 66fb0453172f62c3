"""Network building blocks: sensor encoders, the conditional denoiser, and
parameter bookkeeping."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from diffpf import tensor as T

FEATURE_DIM = 128
TIME_EMBED_DIM = 32


class ParamStore(OrderedDict):
    """Ordered name -> Tensor mapping; insertion order is the save/load order."""

    def __setitem__(self, name, value):
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        super().__setitem__(name, value)

    def count(self):
        return int(np.sum([p.size for p in self.values()])) if self else 0

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def state(self):
        return OrderedDict((k, v.data) for k, v in self.items())

    def load(self, arrays):
        missing = set(self) ^ set(arrays)
        if missing:
            raise KeyError(f"parameter sets differ: {sorted(missing)}")
        for k, p in self.items():
            a = np.asarray(arrays[k])
            if a.shape != p.shape:
                raise ValueError(f"{k}: shape {a.shape} != {p.shape}")
            p.data = a.astype(p.dtype, copy=True)


class Module:
    """Minimal container: subclasses set ``self.params`` / child modules."""

    def named_parameters(self, prefix=""):
        out = []
        for name, value in vars(self).items():
            if isinstance(value, T.Tensor) and value.requires_grad:
                out.append((prefix + name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix + name + "."))
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        out.extend(v.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def param_store(self):
        store = ParamStore()
        for name, p in self.named_parameters():
            store[name] = p
        return store


class Linear(Module):
    def __init__(self, n_in, n_out, rng, zero=False, dtype=np.float32):
        bound = 1.0 / math.sqrt(n_in)
        w = np.zeros((n_in, n_out)) if zero else rng.uniform(-bound, bound, size=(n_in, n_out))
        self.weight = T.Tensor(w.astype(dtype), requires_grad=True)
        self.bias = T.Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, rng, k=3, stride=2, padding=1, dtype=np.float32):
        bound = 1.0 / math.sqrt(c_in * k * k)
        self.weight = T.Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype),
                               requires_grad=True)
        self.bias = T.Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


def conv_out(n, k=3, stride=2, padding=1):
    return (n + 2 * padding - k) // stride + 1


class SensorEncoder(Module):
    """Three stride-2 3x3 conv stages (16/32/64 channels, silu), flatten, linear to 128."""

    channels = (16, 32, 64)

    def __init__(self, in_shape, rng, feature_dim=FEATURE_DIM, dtype=np.float32):
        c, h, w = in_shape
        self.in_shape = tuple(in_shape)
        self.convs = []
        for out_c in self.channels:
            self.convs.append(Conv2d(c, out_c, rng, dtype=dtype))
            c, h, w = out_c, conv_out(h), conv_out(w)
        self.flat_dim = c * h * w
        self.head = Linear(self.flat_dim, feature_dim, rng, dtype=dtype)
        self.feature_dim = feature_dim

    def __call__(self, obs):
        x = T.as_tensor(obs)
        if tuple(x.shape[1:]) != self.in_shape:
            raise T.ShapeError(f"encoder configured for {self.in_shape}, got batch of {x.shape[1:]}")
        for conv in self.convs:
            x = T.silu(conv(x))
        x = T.reshape(x, (x.shape[0], self.flat_dim))
        return self.head(x)


class VectorEncoder(Module):
    """Two-layer MLP encoder for low-dimensional (non-image) observations."""

    def __init__(self, in_dim, rng, feature_dim=FEATURE_DIM, dtype=np.float32):
        self.in_shape = (in_dim,)
        self.l1 = Linear(in_dim, feature_dim, rng, dtype=dtype)
        self.l2 = Linear(feature_dim, feature_dim, rng, dtype=dtype)
        self.feature_dim = feature_dim

    def __call__(self, obs):
        x = T.as_tensor(obs)
        if tuple(x.shape[1:]) != self.in_shape:
            raise T.ShapeError(f"encoder configured for {self.in_shape}, got batch of {x.shape[1:]}")
        return self.l2(T.silu(self.l1(x)))


def make_encoder(in_shape, rng, dtype=np.float32):
    if len(in_shape) == 3:
        return SensorEncoder(in_shape, rng, dtype=dtype)
    return VectorEncoder(in_shape[0], rng, dtype=dtype)


def sinusoidal_embed(k, dim=TIME_EMBED_DIM):
    """Interleaved (sin, cos) pairs of k / 10000^(2i/dim); ``k`` scalar or 1-D array."""
    if dim <= 0 or dim % 2:
        raise ValueError(f"embedding dimension must be even and positive, got {dim}")
    k = np.asarray(k, dtype=np.float64)
    if np.any(k < 0):
        raise ValueError("diffusion step index must be non-negative")
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    ang = k[..., None] * freqs
    out = np.empty(ang.shape[:-1] + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


class DenoiserNet(Module):
    """Noise predictor: concat(x_k, embed(k), c) -> 128 -> 64 -> 128, with the
    first hidden stage concatenated into the output layer (skip connection)."""

    def __init__(self, state_dim, cond_dim, rng, time_dim=TIME_EMBED_DIM, skip=True, dtype=np.float32):
        self.state_dim = state_dim
        self.cond_dim = cond_dim
        self.time_dim = time_dim
        self.skip = skip
        self.dtype = dtype
        self.l1 = Linear(state_dim + time_dim + cond_dim, 128, rng, dtype=dtype)
        self.l2 = Linear(128, 64, rng, dtype=dtype)
        self.l3 = Linear(64, 128, rng, dtype=dtype)
        self.out = Linear(256, state_dim, rng, zero=True, dtype=dtype)

    def __call__(self, x_k, k, c):
        x_k, c = T.as_tensor(x_k), T.as_tensor(c)
        if c.shape[-1] != self.cond_dim:
            raise T.ShapeError(f"condition width {c.shape[-1]} != configured {self.cond_dim}")
        if x_k.shape[-1] != self.state_dim:
            raise T.ShapeError(f"state width {x_k.shape[-1]} != configured {self.state_dim}")
        k = np.broadcast_to(np.asarray(k), (x_k.shape[0],))
        emb = T.Tensor(sinusoidal_embed(k, self.time_dim).astype(self.dtype))
        h1 = T.silu(self.l1(T.concat([x_k, emb, c], axis=1)))
        h3 = T.silu(self.l3(T.silu(self.l2(h1))))
        # the ablated variant feeds zeros in place of h1 to keep shapes fixed
        skip = h1 if self.skip else T.Tensor(np.zeros(h1.shape, dtype=h1.dtype))
        return self.out(T.concat([h3, skip], axis=1))

    def predict_noise(self, x_k, k, c):
        """Single-vector convenience wrapper around the batched forward pass."""
        with T.no_grad():
            out = self(np.asarray(x_k, dtype=self.dtype)[None], np.array([k]),
                       np.asarray(c, dtype=self.dtype)[None])
        return out.data[0]
