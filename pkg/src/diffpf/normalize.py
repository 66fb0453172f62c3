"""State normalization; angular components are lifted to (sin, cos) first."""

from __future__ import annotations

import numpy as np


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    out = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def encode_angles(x, angular):
    """Replace each angular column by a (sin, cos) pair, in place of the column."""
    x = np.asarray(x, dtype=np.float64)
    if not angular:
        return x
    cols = []
    for i in range(x.shape[-1]):
        if i in angular:
            cols += [np.sin(x[..., i]), np.cos(x[..., i])]
        else:
            cols.append(x[..., i])
    return np.stack(cols, axis=-1)


def decode_angles(e, angular, state_dim):
    e = np.asarray(e, dtype=np.float64)
    if not angular:
        return e
    cols, j = [], 0
    for i in range(state_dim):
        if i in angular:
            cols.append(np.arctan2(e[..., j], e[..., j + 1]))
            j += 2
        else:
            cols.append(e[..., j])
            j += 1
    return np.stack(cols, axis=-1)


def encoded_dim(state_dim, angular):
    return state_dim + len(angular)


class Normalizer:
    """Per-dimension affine map of encoded states to zero mean, unit variance."""

    def __init__(self, mean, std, angular=(), state_dim=None):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        if np.any(self.std <= 0):
            raise ValueError("normalizer standard deviations must be positive")
        self.angular = tuple(int(a) for a in angular)
        self.state_dim = state_dim if state_dim is not None else len(self.mean) - len(self.angular)

    @classmethod
    def fit(cls, states, angular=()):
        states = np.asarray(states, dtype=np.float64)
        d = states.shape[-1]
        e = encode_angles(states.reshape(-1, d), angular)
        std = e.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(e.mean(axis=0), std, angular, d)

    def normalize(self, x):
        return (encode_angles(x, self.angular) - self.mean) / self.std

    def denormalize(self, z):
        e = np.asarray(z, dtype=np.float64) * self.std + self.mean
        return decode_angles(e, self.angular, self.state_dim)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "angular": list(self.angular), "state_dim": self.state_dim}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["std"], d.get("angular", ()), d.get("state_dim"))


def normalize(x, nrm):
    return nrm.normalize(x)


def denormalize(z, nrm):
    return nrm.denormalize(z)
