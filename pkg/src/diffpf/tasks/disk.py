"""Disk tracking among distractors.

State is the target disk's position in a 128-pixel frame with the origin at
the image centre; renders at other resolutions scale that frame. The action
at step t is the velocity v*_{t-1} that carried the target from t-1 to t.
"""

from __future__ import annotations

import numpy as np

from diffpf import kernels
from diffpf.tasks.base import Task

NATIVE_SIZE = 128
TARGET_RADIUS = 7.0
TARGET_COLOR = (1.0, 0.0, 0.0)
PALETTE = np.array([
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [1.0, 0.5, 0.0],
    [0.5, 0.0, 1.0],
])

HEATMAP_SIZE = 32
HEATMAP_BANDWIDTH = 2.0


def disk_step(x, v, rng=None, f_p=0.05, f_d=0.0075, std_x=0.1, std_v=0.5):
    """One step of the disk dynamics for arrays of positions/velocities (..., 2).

    With ``rng=None`` the step is noise-free.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    speed2 = np.sum(v * v, axis=-1, keepdims=True)
    x_new = x + v
    v_new = v - f_p * x - f_d * speed2 * np.sign(v)
    if rng is not None:
        x_new = x_new + std_x * rng.standard_normal(x.shape)
        v_new = v_new + std_v * rng.standard_normal(v.shape)
    return x_new, v_new


class DiskTask(Task):
    name = "disk"
    state_dim = 2
    action_dim = 2
    fuse_mode = "heatmap"
    metric = "mse"
    default_length = 50
    default_particles = 10
    teacher_std = np.array([2.0, 2.0])  # pixels; the process noise alone is too tight to train on

    def __init__(self, image_size=64, num_distractors=25, f_p=0.05, f_d=0.0075,
                 std_x=0.1, std_v=0.5, init_speed_std=2.0):
        super().__init__(image_size=image_size, num_distractors=num_distractors, f_p=f_p, f_d=f_d,
                         std_x=std_x, std_v=std_v, init_speed_std=init_speed_std)
        self.image_size = int(image_size)
        self.num_distractors = int(num_distractors)
        self.f_p, self.f_d = f_p, f_d
        self.std_x, self.std_v = std_x, std_v
        self.init_speed_std = init_speed_std
        self.half = NATIVE_SIZE / 2.0

    def obs_shape(self):
        return (3, self.image_size, self.image_size)

    @property
    def process_noise_std(self):
        return np.full(2, self.std_x)

    def transition(self, x, action):
        return x + action

    def sample_prior(self, rng, n):
        return rng.uniform(-self.half, self.half, size=(n, 2))

    def prepare_obs(self, obs):
        return (np.asarray(obs, dtype=np.float32) - 0.5) * 2.0

    # -- rendering ----------------------------------------------------------
    def render(self, target, distractors_pos, radii, colors, with_distractors=True):
        img = np.zeros((3, self.image_size, self.image_size), dtype=np.float64)
        scale = NATIVE_SIZE / self.image_size
        centers = [np.asarray(target, dtype=np.float64)[None]]
        rad = [np.array([TARGET_RADIUS])]
        cols = [np.array([TARGET_COLOR])]
        if with_distractors and len(distractors_pos):
            centers.append(distractors_pos)
            rad.append(radii)
            cols.append(colors)
        kernels.render_disks(img, np.concatenate(centers), np.concatenate(rad),
                             np.concatenate(cols), scale, self.half)
        return img

    def target_coverage(self, target, distractors_pos, radii, colors):
        """Fraction of the target's own pixels hidden by distractors."""
        alone = self.render(target, distractors_pos, radii, colors, with_distractors=False)
        full = self.render(target, distractors_pos, radii, colors)
        mask = alone[0] == 1.0
        if not mask.any():
            return 0.0
        visible = (full[0] == 1.0) & (full[1] == 0.0) & (full[2] == 0.0) & mask
        return 1.0 - visible.sum() / mask.sum()

    def simulate(self, rng, length, return_scene=False):
        m = self.num_distractors
        pos = rng.uniform(-self.half, self.half, size=(m + 1, 2))
        vel = rng.standard_normal((m + 1, 2)) * self.init_speed_std
        radii = rng.uniform(3.0, 10.0, size=m)
        colors = PALETTE[rng.integers(0, len(PALETTE), size=m)]
        states = np.empty((length, 2))
        actions = np.empty((length, 2))
        obs = np.empty((length,) + self.obs_shape(), dtype=np.float32)
        scene = []
        for t in range(length):
            actions[t] = vel[0]
            pos, vel = disk_step(pos, vel, rng, self.f_p, self.f_d, self.std_x, self.std_v)
            states[t] = pos[0]
            obs[t] = self.render(pos[0], pos[1:], radii, colors)
            if return_scene:
                scene.append((pos.copy(), radii, colors))
        if return_scene:
            return states, actions, obs, scene
        return states, actions, obs

    # -- fusion geometry ----------------------------------------------------
    def to_grid(self, x):
        """Map positions to heatmap grid coordinates, clamped to the border cells.

        Returns (grid_coords, number_clamped).
        """
        cell = NATIVE_SIZE / HEATMAP_SIZE
        g = (np.asarray(x, dtype=np.float64) + self.half) / cell - 0.5
        clamped = np.clip(g, 0.0, HEATMAP_SIZE - 1.0)
        n_clamped = int(np.any(clamped != g, axis=-1).sum())
        return clamped, n_clamped
