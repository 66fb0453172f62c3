"""DDPM machinery: noise schedule, forward corruption, reverse step, the
posterior sampling loop and the noise-prediction loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from diffpf import tensor as T

COSINE_OFFSET = 0.008
MIN_ALPHA = 0.001


class GaussianDraw:
    """Seeded standard-normal stream; identical seeds give identical sequences."""

    def __init__(self, seed):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def normal(self, shape):
        return self.rng.standard_normal(shape)

    def integers(self, low, high, size=None):
        return self.rng.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.rng.uniform(low, high, size=size)

    def spawn_seed(self):
        return int(self.rng.integers(0, 2**62))


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step coefficients; arrays have length K + 1 and index 0 holds the
    ``alpha_bar_0 = 1`` convention (other entries at 0 are unused)."""

    K: int
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def beta_coef(self):
        b = np.zeros(self.K + 1)
        b[1:] = 1.0 / np.sqrt(self.alpha[1:])
        return b

    @property
    def gamma_coef(self):
        g = np.zeros(self.K + 1)
        g[1:] = -(1.0 - self.alpha[1:]) / np.sqrt(1.0 - self.alpha_bar[1:])
        return g

    def check_step(self, k):
        k = np.asarray(k)
        if np.any(k < 1) or np.any(k > self.K):
            raise ValueError(f"diffusion step must lie in [1, {self.K}], got {k}")

    def to_dict(self):
        return {"K": self.K, "alpha_bar": [float(a) for a in self.alpha_bar]}

    @classmethod
    def from_dict(cls, d):
        ab = np.asarray(d["alpha_bar"], dtype=np.float64)
        return _from_alpha_bar(int(d["K"]), ab)


def _from_alpha_bar(K, alpha_bar):
    alpha = np.ones(K + 1)
    alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
    sigma = np.zeros(K + 1)
    var = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * (1.0 - alpha[1:])
    sigma[1:] = np.sqrt(np.maximum(var, 0.0))
    sigma[1] = 0.0
    return NoiseSchedule(K, alpha, alpha_bar, sigma)


def build_schedule(K):
    """Cosine alpha-bar schedule with offset 0.008, every alpha_k >= 0.001."""
    if int(K) != K or K < 1:
        raise ValueError(f"number of diffusion steps must be a positive integer, got {K}")
    K = int(K)
    s = COSINE_OFFSET

    def f(k):
        return math.cos((k / K + s) / (1 + s) * math.pi / 2) ** 2

    raw = np.array([f(k) / f(0) for k in range(K + 1)])
    alpha = np.ones(K + 1)
    alpha[1:] = np.clip(raw[1:] / raw[:-1], MIN_ALPHA, 1.0)
    alpha_bar = np.cumprod(alpha)
    return _from_alpha_bar(K, alpha_bar)


def q_sample(x0, k, eps, sched):
    """sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps, batched over the leading
    axis when ``k`` is an array. k = 0 is accepted and returns x0 (alpha_bar_0 = 1)."""
    if np.any(np.asarray(k) < 0) or np.any(np.asarray(k) > sched.K):
        raise ValueError(f"diffusion step must lie in [0, {sched.K}], got {k}")
    ab = sched.alpha_bar[np.asarray(k)]
    if isinstance(x0, T.Tensor) or isinstance(eps, T.Tensor):
        raise TypeError("q_sample expects arrays; corruption needs no gradient")
    x0, eps = np.asarray(x0), np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != state shape {x0.shape}")
    if np.ndim(ab) > 0:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_step(x_k, k, eps_hat, sched, z):
    """beta_k (x_k + gamma_k eps_hat) + sigma_k z."""
    sched.check_step(k)
    b = sched.beta_coef[k]
    g = sched.gamma_coef[k]
    out = b * (np.asarray(x_k) + g * np.asarray(eps_hat))
    if sched.sigma[k] > 0:
        out = out + sched.sigma[k] * np.asarray(z)
    return out


def sample_chains(cond, sched, denoiser, seeds):
    """Run one reverse chain per row of ``cond`` (B × cond_dim); chain i draws all
    of its noise from ``GaussianDraw(seeds[i])``. Returns B × state_dim."""
    cond = np.asarray(cond, dtype=denoiser.dtype)
    d = denoiser.state_dim
    draws = [GaussianDraw(int(s)) for s in seeds]
    x = np.stack([g.normal(d) for g in draws])
    with T.no_grad():
        for k in range(sched.K, 0, -1):
            eps_hat = denoiser(x.astype(denoiser.dtype), np.full(len(x), k), cond).data
            if sched.sigma[k] > 0:
                z = np.stack([g.normal(d) for g in draws])
            else:
                z = None
            x = reverse_step(x, k, eps_hat.astype(np.float64), sched, z)
    return x


def sample_batch(cond, sched, denoiser, draw):
    """Like :func:`sample_chains` but with all noise taken from one shared ``draw``."""
    cond = np.asarray(cond, dtype=denoiser.dtype)
    shape = (len(cond), denoiser.state_dim)
    x = draw.normal(shape)
    with T.no_grad():
        for k in range(sched.K, 0, -1):
            eps_hat = denoiser(x.astype(denoiser.dtype), np.full(len(x), k), cond).data
            z = draw.normal(shape) if sched.sigma[k] > 0 else None
            x = reverse_step(x, k, eps_hat.astype(np.float64), sched, z)
    return x


def sample_posterior(c, sched, denoiser, draw):
    """One reverse-diffusion sample x_0 for a single condition vector."""
    seed = draw.spawn_seed() if isinstance(draw, GaussianDraw) else int(draw)
    return sample_chains(np.asarray(c)[None], sched, denoiser, [seed])[0]


def ddpm_loss(x0_batch, k_batch, c_batch, denoiser, draw, sched, eps=None):
    """Mean over the batch of ||eps - eps_theta(q_sample(x0, k, eps), k, c)||^2.

    ``c_batch`` may be a Tensor carrying gradients back into the encoders.
    ``eps`` overrides the draw (used by tests with oracle denoisers).
    """
    x0 = np.asarray(x0_batch, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] == 0:
        raise ValueError(f"ddpm_loss: expected a non-empty batch of states, got shape {x0.shape}")
    k = np.asarray(k_batch)
    if eps is None:
        eps = draw.normal(x0.shape)
    xk = q_sample(x0, k, eps, sched)
    pred = denoiser(T.Tensor(xk.astype(denoiser.dtype)), k, c_batch)
    resid = T.sub(T.Tensor(eps.astype(denoiser.dtype)), pred)
    return T.scale(T.sum(T.square(resid)), 1.0 / x0.shape[0])
