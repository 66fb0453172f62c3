"""Comparison methods: bootstrap particle filter with soft resampling, and an
exact Kalman filter for the linear-Gaussian world."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from diffpf import nn
from diffpf import tensor as T
from diffpf.normalize import encoded_dim

log = logging.getLogger(__name__)


def _logsumexp(a):
    m = np.max(a)
    if not np.isfinite(m):
        return m
    return m + np.log(np.sum(np.exp(a - m)))


@dataclass
class WeightedParticleSet:
    particles: np.ndarray
    log_weights: np.ndarray

    @classmethod
    def uniform(cls, particles):
        particles = np.asarray(particles, dtype=np.float64)
        n = particles.shape[0]
        return cls(particles, np.full(n, -np.log(n)))

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def N(self):
        return self.particles.shape[0]

    def ess(self):
        w = self.weights
        return 1.0 / np.sum(w * w)

    def mean(self, angular=()):
        w = self.weights
        out = w @ self.particles
        for i in angular:
            out[i] = np.arctan2(w @ np.sin(self.particles[:, i]), w @ np.cos(self.particles[:, i]))
        return out


def soft_resample(wps, alpha, rng):
    """Draw indices from alpha*w + (1-alpha)/N and correct the weights by w/q."""
    w = wps.weights
    n = wps.N
    q = alpha * w + (1.0 - alpha) / n
    q = q / q.sum()
    idx = rng.choice(n, size=n, p=q)
    logw = wps.log_weights[idx] - np.log(q[idx])
    logw = logw - _logsumexp(logw)
    return WeightedParticleSet(wps.particles[idx], logw)


def bpf_step(wps, obs, action, task, likelihood, resample_alpha, rng):
    """Propagate, reweight by the observation likelihood, soft-resample."""
    if not 0.0 <= resample_alpha <= 1.0:
        raise ValueError(f"resample_alpha must lie in [0, 1], got {resample_alpha}")
    parts = task.predict(wps.particles, action, rng)
    loglik = likelihood(parts, obs)
    logw = wps.log_weights + loglik
    total = _logsumexp(logw)
    if not np.isfinite(total):
        log.warning("all particle likelihoods vanished; resetting to uniform weights")
        logw = np.full(len(parts), -np.log(len(parts)))
    else:
        logw = logw - total
    return soft_resample(WeightedParticleSet(parts, logw), resample_alpha, rng)


# ---------------------------------------------------------------- learned likelihood


class PointRegressor(nn.Module):
    """Encoder backbone plus a linear head predicting the normalized (encoded) state."""

    def __init__(self, task, normalizer, rng, dtype=np.float32):
        self.task = task
        self.normalizer = normalizer
        self.enc_dim = encoded_dim(task.state_dim, task.angular)
        self.sensor = nn.make_encoder(tuple(task.obs_shape()), rng, dtype=dtype)
        self.head = nn.Linear(self.sensor.feature_dim, self.enc_dim, rng, dtype=dtype)
        self.dtype = dtype
        self.residual_var = np.ones(self.enc_dim)

    def __call__(self, obs):
        feats = self.sensor(T.Tensor(self.task.prepare_obs(obs)))
        return self.head(T.silu(feats))

    def predict(self, obs):
        with T.no_grad():
            return self(np.asarray(obs)).data.astype(np.float64)

    def architecture(self):
        return {"obs_shape": list(self.task.obs_shape()), "enc_dim": self.enc_dim}


class GaussianLikelihood:
    """log N(normalize(x); regressor(obs), diag(residual_var)) up to a constant."""

    def __init__(self, regressor):
        self.regressor = regressor

    def __call__(self, particles, obs):
        mu = self.regressor.predict(np.asarray(obs)[None])[0]
        z = self.regressor.normalizer.normalize(particles)
        var = self.regressor.residual_var
        return -0.5 * np.sum((z - mu) ** 2 / var, axis=-1)


# ---------------------------------------------------------------- Kalman


@dataclass
class KalmanBelief:
    mean: np.ndarray
    cov: np.ndarray


def kalman_step(belief, obs, action, F, Q, H, R, B=None):
    """Predict with (F, B, Q), update with (H, R); returns the posterior belief."""
    m = F @ belief.mean
    if B is not None and action is not None and np.size(action):
        m = m + B @ np.asarray(action)
    P = F @ belief.cov @ F.T + Q
    S = H @ P @ H.T + R
    if np.linalg.matrix_rank(S) < S.shape[0]:
        raise np.linalg.LinAlgError("innovation covariance is singular")
    K = np.linalg.solve(S, H @ P).T
    m = m + K @ (np.asarray(obs) - H @ m)
    P = P - K @ S @ K.T
    return KalmanBelief(m, 0.5 * (P + P.T))
