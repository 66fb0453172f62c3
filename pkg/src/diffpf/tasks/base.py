"""Common task interface consumed by the filter, trainer and CLI."""

from __future__ import annotations

import numpy as np


class Task:
    """A world: simulator, analytic process model, prior and fusion layout.

    Subclasses fill in the class attributes and implement ``simulate``,
    ``transition`` and ``sample_prior``. All state arrays are float64 with the
    state dimension last.
    """

    name = ""
    state_dim = 0
    action_dim = 0
    angular = ()
    fuse_mode = "flatten"
    metric = "rmse"
    position_dims = None  # columns scored by position metrics; None = all
    default_length = 50
    default_particles = 10

    def __init__(self, **params):
        self.params = dict(params)

    # -- simulation ---------------------------------------------------------
    def obs_shape(self):
        raise NotImplementedError

    def simulate(self, rng, length):
        """Return (states[T, d], actions[T, a], obs[T, *obs_shape]) for one sequence."""
        raise NotImplementedError

    # -- filtering ----------------------------------------------------------
    @property
    def process_noise_std(self):
        raise NotImplementedError

    def transition(self, x, action):
        """Noise-free process model applied row-wise to particles x[N, d]."""
        raise NotImplementedError

    def process(self, x, action, noise=None):
        """Process model with optional additive noise (already scaled, N × d)."""
        out = self.transition(np.asarray(x, dtype=np.float64), np.asarray(action, dtype=np.float64))
        if noise is not None:
            out = out + noise
        return self.wrap(out)

    def wrap(self, x):
        if self.angular:
            from diffpf.normalize import wrap_angle

            x = np.array(x, dtype=np.float64, copy=True)
            for i in self.angular:
                x[..., i] = wrap_angle(x[..., i])
        return x

    def predict(self, x, action, rng):
        """Propagate particles with independent process-noise draws."""
        noise = rng.standard_normal(np.shape(x)) * self.process_noise_std
        return self.process(x, action, noise)

    def sample_prior(self, rng, n):
        raise NotImplementedError

    def prepare_obs(self, obs):
        """Map stored observations to encoder input scale."""
        return np.asarray(obs, dtype=np.float32)

    # -- metadata -----------------------------------------------------------
    def metadata(self):
        return {"task": self.name, **self.params}

    def scored(self, x):
        x = np.asarray(x)
        return x if self.position_dims is None else x[..., list(self.position_dims)]
