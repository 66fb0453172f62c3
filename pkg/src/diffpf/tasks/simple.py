"""Low-dimensional sanity worlds: linear-Gaussian and bimodal (|x| observed)."""

from __future__ import annotations

import numpy as np

from diffpf.tasks.base import Task


class LinearGaussianTask(Task):
    """x' = a x + w (w ~ N(0, q I)), z = x + v (v ~ N(0, r I)), 2-D state.

    The prior (state before the first step) is the stationary distribution.
    Noise is drawn per step in the order (w_t, v_t), each a 2-vector.
    """

    name = "lg"
    state_dim = 2
    action_dim = 0
    fuse_mode = "flatten"
    metric = "rmse"
    default_length = 50
    default_particles = 32

    def __init__(self, a=0.9, q=0.1, r=0.5):
        super().__init__(a=a, q=q, r=r)
        self.a, self.q, self.r = a, q, r

    @property
    def stationary_var(self):
        return self.q / (1.0 - self.a**2)

    def obs_shape(self):
        return (self.state_dim,)

    @property
    def process_noise_std(self):
        return np.full(self.state_dim, np.sqrt(self.q))

    def matrices(self):
        d = self.state_dim
        eye = np.eye(d)
        return {"F": self.a * eye, "Q": self.q * eye, "H": eye, "R": self.r * eye,
                "m0": np.zeros(d), "P0": self.stationary_var * eye}

    def transition(self, x, action):
        return self.a * x

    def sample_prior(self, rng, n):
        return rng.standard_normal((n, self.state_dim)) * np.sqrt(self.stationary_var)

    def simulate(self, rng, length):
        d = self.state_dim
        x = self.sample_prior(rng, 1)[0]
        states = np.empty((length, d))
        obs = np.empty((length, d))
        for t in range(length):
            x = self.a * x + np.sqrt(self.q) * rng.standard_normal(d)
            states[t] = x
            obs[t] = x + np.sqrt(self.r) * rng.standard_normal(d)
        return states, np.zeros((length, 0)), obs


class BimodalTask(Task):
    """Scalar AR(1) state observed only through its magnitude: o = |x| + v.

    With a symmetric prior the posterior is symmetric, hence bimodal for any
    observation well away from zero.
    """

    name = "bimodal"
    state_dim = 1
    action_dim = 0
    fuse_mode = "flatten"
    metric = "rmse"
    default_length = 20
    default_particles = 10

    def __init__(self, a=0.9, q=0.19, r_std=0.1):
        super().__init__(a=a, q=q, r_std=r_std)
        self.a, self.q, self.r_std = a, q, r_std

    def obs_shape(self):
        return (1,)

    @property
    def process_noise_std(self):
        return np.array([np.sqrt(self.q)])

    def transition(self, x, action):
        return self.a * x

    def sample_prior(self, rng, n):
        return rng.standard_normal((n, 1)) * np.sqrt(self.q / (1.0 - self.a**2))

    def simulate(self, rng, length):
        x = self.sample_prior(rng, 1)[0]
        states = np.empty((length, 1))
        obs = np.empty((length, 1))
        for t in range(length):
            x = self.a * x + np.sqrt(self.q) * rng.standard_normal(1)
            states[t] = x
            obs[t] = np.abs(x) + self.r_std * rng.standard_normal(1)
        return states, np.zeros((length, 0)), obs
