"""The DiffPF recursion: predict, encode, fuse, sample equally weighted
posterior particles by reverse diffusion, and average."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from diffpf import kernels
from diffpf import nn
from diffpf import tensor as T
from diffpf.diffusion import sample_chains
from diffpf.normalize import encoded_dim

HEATMAP_SIZE = 32
HEATMAP_BANDWIDTH = 2.0


# ---------------------------------------------------------------- particle sets


@dataclass
class ParticleSet:
    """N equally weighted states; there is deliberately no weight field."""

    particles: np.ndarray

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=np.float64))

    @property
    def N(self):
        return self.particles.shape[0]

    @property
    def state_dim(self):
        return self.particles.shape[1]


@dataclass
class FilterState:
    particles: ParticleSet
    t: int
    rng: np.random.Generator
    predicted: ParticleSet | None = None


class PointPrior:
    def __init__(self, point, spread=0.0):
        self.point = np.asarray(point, dtype=np.float64)
        self.spread = np.broadcast_to(np.asarray(spread, dtype=np.float64), self.point.shape)

    def sample(self, rng, n):
        return self.point + rng.standard_normal((n, self.point.size)) * self.spread


class UniformPrior:
    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        if np.any(self.high <= self.low):
            raise ValueError(f"uniform prior over a degenerate region [{self.low}, {self.high}]")

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, size=(n, self.low.size))


class TaskPrior:
    """The task's own uninformative prior (e.g. uniform over maze free space)."""

    def __init__(self, task):
        self.task = task

    def sample(self, rng, n):
        return self.task.sample_prior(rng, n)


def init_filter(prior, N, seed):
    if N < 1:
        raise ValueError(f"particle count must be >= 1, got {N}")
    rng = np.random.default_rng(seed)
    return FilterState(ParticleSet(prior.sample(rng, N)), 0, rng)


# ---------------------------------------------------------------- model


class DiffPFModel(nn.Module):
    """Sensor encoder, optional heatmap encoder, and conditional denoiser for one task."""

    def __init__(self, task, normalizer, schedule, N, rng, phase=1, dtype=np.float32):
        self.task = task
        self.normalizer = normalizer
        self.schedule = schedule
        self.N = int(N)
        self.phase = int(phase)
        self.fuse_mode = task.fuse_mode
        self.enc_dim = encoded_dim(task.state_dim, task.angular)
        self.sensor = nn.make_encoder(tuple(task.obs_shape()), rng, dtype=dtype)
        if self.fuse_mode == "heatmap":
            self.heatmap = nn.SensorEncoder((1, HEATMAP_SIZE, HEATMAP_SIZE), rng, dtype=dtype)
            self.summary_dim = self.heatmap.feature_dim
        else:
            self.summary_dim = self.N * self.enc_dim
        self.cond_dim = self.sensor.feature_dim + self.summary_dim
        self.denoiser = nn.DenoiserNet(self.enc_dim, self.cond_dim, rng, dtype=dtype)
        self.dtype = dtype
        self.clamped = 0

    def architecture(self):
        return {"obs_shape": list(self.task.obs_shape()), "enc_dim": self.enc_dim,
                "cond_dim": self.cond_dim, "summary_dim": self.summary_dim, "N": self.N,
                "fuse_mode": self.fuse_mode, "feature_dim": self.sensor.feature_dim,
                "time_dim": self.denoiser.time_dim, "K": self.schedule.K}

    def encode(self, obs):
        """Batch of stored observations -> feature Tensor (B, 128)."""
        return self.sensor(T.Tensor(self.task.prepare_obs(obs)))

    def heatmaps(self, particles):
        """(B, N, 2) positions -> (B, 1, 32, 32) splatted heatmaps."""
        grid, n_clamped = self.task.to_grid(particles)
        self.clamped += n_clamped
        return kernels.splat(grid, HEATMAP_SIZE, HEATMAP_BANDWIDTH)[:, None].astype(self.dtype)

    def summary(self, particles):
        """(B, N, d) predicted particles in state units -> summary Tensor (B, summary_dim)."""
        particles = np.asarray(particles, dtype=np.float64)
        if self.fuse_mode == "heatmap":
            return self.heatmap(T.Tensor(self.heatmaps(particles)))
        B, N, _ = particles.shape
        if N != self.N:
            raise ValueError(f"flatten fusion was configured for {self.N} particles, got {N}")
        z = self.normalizer.normalize(particles).reshape(B, N * self.enc_dim)
        return T.Tensor(z.astype(self.dtype))

    def condition(self, features, particles=None):
        """Concatenate features with the particle summary (zeros when particles is None)."""
        B = features.shape[0]
        if particles is None:
            summ = T.Tensor(np.zeros((B, self.summary_dim), dtype=self.dtype))
        else:
            summ = self.summary(particles)
        return T.concat([features, summ], axis=1)

    def uses_prior(self):
        return self.phase >= 2


# ---------------------------------------------------------------- operations


def predict(ps, action, task, rng):
    """Propagate every particle through the process model with independent noise."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape[-1] != task.action_dim:
        raise ValueError(f"action has dimension {action.shape[-1]}, task expects {task.action_dim}")
    return ParticleSet(task.predict(ps.particles, action, rng))


def fuse(features, predicted, model, mode=None):
    """Single-step fusion: feature vector (128,) + ParticleSet -> condition vector."""
    if mode is not None and mode != model.fuse_mode:
        raise ValueError(f"fusion mode {mode!r} does not match the model's {model.fuse_mode!r}")
    feats = T.as_tensor(np.asarray(features, dtype=model.dtype)[None])
    parts = predicted.particles[None] if model.uses_prior() else None
    with T.no_grad():
        return model.condition(feats, parts).data[0]


def update(c, N, model, seed):
    """N independent reverse-diffusion chains on condition ``c``; returns de-normalized particles.

    Chain i draws its noise from the stream seeded with ``seed + i``.
    """
    cond = np.repeat(np.asarray(c)[None], N, axis=0)
    z = sample_chains(cond, model.schedule, model.denoiser, [seed + i for i in range(N)])
    return ParticleSet(model.normalizer.denormalize(z))


def estimate(ps, angular=()):
    """Mean of the particles; circular mean for angular columns."""
    x = ps.particles
    out = x.mean(axis=0)
    for i in angular:
        out[i] = np.arctan2(np.sin(x[:, i]).mean(), np.cos(x[:, i]).mean())
    return out


def step(fs, obs, action, model):
    """One filter step: predict -> encode -> fuse -> update -> estimate."""
    task = model.task
    predicted = predict(fs.particles, action, task, fs.rng)
    with T.no_grad():
        feats = model.encode(np.asarray(obs)[None]).data[0]
    c = fuse(feats, predicted, model)
    seed = int(fs.rng.integers(0, 2**62))
    posterior = update(c, fs.particles.N, model, seed)
    new = FilterState(posterior, fs.t + 1, fs.rng, predicted)
    return new, estimate(posterior, task.angular)
