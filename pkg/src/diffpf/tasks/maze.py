"""Global localization in a procedurally generated, 4-fold rotationally
symmetric maze observed through a local occupancy patch.

The map is a square grid of ``BLOCK``-unit blocks (1 = wall). Rotating the
map by 90 degrees about its centre leaves it unchanged, so every pose shares
its noise-free observation with its three rotated images.
"""

from __future__ import annotations

import numpy as np

from diffpf.normalize import wrap_angle
from diffpf.tasks.base import Task

BLOCK = 100.0
PATCH = 32  # rendered patch before cropping
CROP = 24
PIXEL = 10.0  # world units per observation pixel
OBS_NOISE = 20.0 / 255.0
ROBOT_MARGIN = 15.0


def action_from_states(prev, cur):
    """Displacement of ``cur`` relative to ``prev`` expressed in prev's frame: (u, v, dtheta)."""
    prev = np.asarray(prev, dtype=np.float64)
    cur = np.asarray(cur, dtype=np.float64)
    dx = cur[..., 0] - prev[..., 0]
    dy = cur[..., 1] - prev[..., 1]
    c, s = np.cos(prev[..., 2]), np.sin(prev[..., 2])
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return np.stack([u, v, cur[..., 2] - prev[..., 2]], axis=-1)


def maze_process(x, action, noise=None):
    """Move poses x[..., 3] by a local-frame action using the pre-update heading.

    Inverse of :func:`action_from_states`; ``noise`` (already scaled) is added
    before the heading is wrapped into (-pi, pi].
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(action, dtype=np.float64)
    c, s = np.cos(x[..., 2]), np.sin(x[..., 2])
    u, v, dth = a[..., 0], a[..., 1], a[..., 2]
    out = np.stack([x[..., 0] + u * c - v * s,
                    x[..., 1] + u * s + v * c,
                    x[..., 2] + dth], axis=-1)
    if noise is not None:
        out = out + noise
    out[..., 2] = wrap_angle(out[..., 2])
    return out


def _components(free):
    """4-connected components of a boolean grid: list of index arrays."""
    n, m = free.shape
    label = -np.ones(free.shape, dtype=int)
    comps = []
    for r0 in range(n):
        for c0 in range(m):
            if not free[r0, c0] or label[r0, c0] >= 0:
                continue
            stack, cells = [(r0, c0)], []
            label[r0, c0] = len(comps)
            while stack:
                r, c = stack.pop()
                cells.append((r, c))
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < n and 0 <= cc < m and free[rr, cc] and label[rr, cc] < 0:
                        label[rr, cc] = len(comps)
                        stack.append((rr, cc))
            comps.append(cells)
    return comps


def generate_maze(rng, size=12, wall_prob=0.3, min_free=0.45, max_tries=200):
    """Random 4-fold symmetric map with a single connected free region.

    A random quadrant is replicated by rotation; the outer ring is wall.
    Retries until the free space is connected and covers ``min_free`` of the
    interior.
    """
    if size % 2:
        raise ValueError("maze size must be even")
    h = size // 2
    for _ in range(max_tries):
        quad = rng.random((h, h)) < wall_prob
        grid = np.zeros((size, size), dtype=bool)
        grid[:h, :h] = quad
        grid[:h, h:] = np.rot90(quad, -1)
        grid[h:, h:] = np.rot90(quad, 2)
        grid[h:, :h] = np.rot90(quad, 1)
        grid[0, :] = grid[-1, :] = grid[:, 0] = grid[:, -1] = True
        comps = _components(~grid)
        if len(comps) != 1:
            continue
        if len(comps[0]) < min_free * (size - 2) ** 2:
            continue
        assert np.array_equal(grid, np.rot90(grid))
        return grid.astype(np.uint8)
    raise RuntimeError("could not generate a connected symmetric maze")


class MazeTask(Task):
    name = "maze"
    state_dim = 3
    action_dim = 3
    angular = (2,)
    fuse_mode = "flatten"
    metric = "final-rmse"
    position_dims = (0, 1)
    default_length = 100
    default_particles = 20

    def __init__(self, grid, speed=(10.0, 40.0), turn_std=0.15,
                 noise_std=(10.0, 10.0, 0.1)):
        grid = np.asarray(grid, dtype=np.uint8)
        super().__init__(grid=grid.tolist(), speed=list(speed), turn_std=turn_std,
                         noise_std=list(noise_std))
        self.grid = grid
        self.n = grid.shape[0]
        self.extent = self.n * BLOCK
        self.speed = speed
        self.turn_std = turn_std
        self.noise_std = np.asarray(noise_std, dtype=np.float64)
        self.free_blocks = np.argwhere(grid == 0)  # (row, col)
        off = (np.arange(PATCH) - (PATCH - 1) / 2.0) * PIXEL
        # robot frame: rows run forward->back, columns left->right
        self._fwd = -off[:, None] * np.ones((1, PATCH))
        self._left = -off[None, :] * np.ones((PATCH, 1))

    @classmethod
    def generate(cls, rng, size=12, **kw):
        return cls(generate_maze(rng, size), **kw)

    def obs_shape(self):
        return (1, CROP, CROP)

    @property
    def process_noise_std(self):
        return self.noise_std

    def transition(self, x, action):
        return maze_process(x, action)

    def process(self, x, action, noise=None):
        return maze_process(x, action, noise)

    # -- map queries --------------------------------------------------------
    def occupied(self, px, py):
        col = np.floor(np.asarray(px) / BLOCK).astype(int)
        row = np.floor(np.asarray(py) / BLOCK).astype(int)
        inside = (col >= 0) & (col < self.n) & (row >= 0) & (row < self.n)
        out = np.ones(np.shape(col), dtype=bool)
        out[inside] = self.grid[row[inside], col[inside]] == 1
        return out

    def is_free(self, p, margin=ROBOT_MARGIN):
        px, py = p[0], p[1]
        xs = np.array([px - margin, px + margin, px - margin, px + margin, px])
        ys = np.array([py - margin, py - margin, py + margin, py + margin, py])
        return not self.occupied(xs, ys).any()

    def rotate_pose(self, x, quarter_turns=1):
        """Image of pose(s) under the map's rotational symmetry."""
        x = np.array(x, dtype=np.float64, copy=True)
        c = self.extent / 2.0
        for _ in range(quarter_turns % 4):
            dx, dy = x[..., 0] - c, x[..., 1] - c
            x[..., 0], x[..., 1] = c - dy, c + dx
            x[..., 2] = wrap_angle(x[..., 2] + np.pi / 2)
        return x

    def sample_prior(self, rng, n):
        idx = rng.integers(0, len(self.free_blocks), size=n)
        rc = self.free_blocks[idx]
        px = (rc[:, 1] + rng.random(n)) * BLOCK
        py = (rc[:, 0] + rng.random(n)) * BLOCK
        th = rng.uniform(-np.pi, np.pi, size=n)
        return np.stack([px, py, th], axis=1)

    def _sample_start(self, rng):
        while True:
            x = self.sample_prior(rng, 1)[0]
            if self.is_free(x):
                return x

    # -- observation --------------------------------------------------------
    def render_patch(self, pose):
        """Noise-free PATCH × PATCH occupancy patch in the robot frame."""
        px, py, th = pose
        c, s = np.cos(th), np.sin(th)
        wx = px + self._fwd * c - self._left * s
        wy = py + self._fwd * s + self._left * c
        return self.occupied(wx, wy).astype(np.float32)

    def observe(self, pose, rng=None):
        """Cropped, noisy observation (1, CROP, CROP); centre crop and no noise when rng is None."""
        patch = self.render_patch(pose)
        if rng is None:
            oy = ox = (PATCH - CROP) // 2
        else:
            oy, ox = rng.integers(0, PATCH - CROP + 1, size=2)
        obs = patch[oy:oy + CROP, ox:ox + CROP].astype(np.float64)
        if rng is not None:
            obs = obs + OBS_NOISE * rng.standard_normal(obs.shape)
        return obs[None].astype(np.float32)

    def prepare_obs(self, obs):
        return (np.asarray(obs, dtype=np.float32) - 0.5) * 2.0

    # -- simulation ---------------------------------------------------------
    def simulate(self, rng, length):
        x = self._sample_start(rng)
        states = np.empty((length, 3))
        actions = np.empty((length, 3))
        obs = np.empty((length,) + self.obs_shape(), dtype=np.float32)
        for t in range(length):
            th = x[2] + self.turn_std * rng.standard_normal()
            step = rng.uniform(*self.speed)
            cand = np.array([x[0] + step * np.cos(th), x[1] + step * np.sin(th), th])
            if not self.is_free(cand):
                turn = rng.uniform(np.pi / 2, np.pi) * rng.choice([-1.0, 1.0])
                cand = np.array([x[0], x[1], x[2] + turn])
            cand[2] = wrap_angle(cand[2])
            actions[t] = action_from_states(x, cand)
            x = cand
            states[t] = x
            obs[t] = self.observe(x, rng)
        return states, actions, obs

    # -- analysis -----------------------------------------------------------
    def ambiguity_certificate(self, max_groups=8):
        """Groups of distinct poses with pixel-identical noise-free observations.

        Enumerates block-centre poses with axis-aligned headings.
        """
        groups = {}
        for r, c in self.free_blocks:
            for q in range(4):
                pose = ((c + 0.5) * BLOCK, (r + 0.5) * BLOCK, float(wrap_angle(q * np.pi / 2)))
                key = self.observe(pose).tobytes()
                groups.setdefault(key, []).append(pose)
        multi = [g for g in groups.values() if len(g) >= 2]
        multi.sort(key=len, reverse=True)
        return [[list(p) for p in g] for g in multi[:max_groups]]

    def uniform_mse(self, positions):
        """E||u - p||^2 for u uniform over free space, for each position p (..., 2)."""
        centres = (self.free_blocks[:, ::-1] + 0.5) * BLOCK  # (x, y)
        p = np.asarray(positions, dtype=np.float64)[..., None, :]
        d2 = np.sum((centres - p) ** 2, axis=-1).mean(axis=-1)
        return d2 + 2.0 * BLOCK**2 / 12.0

    def metadata(self):
        meta = super().metadata()
        meta["certificate"] = self.ambiguity_certificate()
        return meta
