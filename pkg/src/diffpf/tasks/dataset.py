"""Trajectory datasets: generation and the on-disk directory format.

Layout::

    meta.json    task, counts, shapes, dtype "f32", endianness "little", seed,
                 task parameters, split boundaries, normalization statistics
    states.bin   [S, T, state_dim]      raw little-endian float32, row-major
    actions.bin  [S, T, action_dim]
    obs.bin      [S, T, *obs_shape]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from diffpf.normalize import Normalizer
from diffpf.tasks import make_task

FORMAT_VERSION = 1
_F32 = np.dtype("<f4")
_FILES = ("states", "actions", "obs")


@dataclass
class TrajectoryDataset:
    task: object
    states: np.ndarray
    actions: np.ndarray
    obs: np.ndarray
    num_train: int
    seed: int
    normalizer: Normalizer
    meta: dict = field(default_factory=dict)

    @property
    def num_sequences(self):
        return self.states.shape[0]

    @property
    def seq_len(self):
        return self.states.shape[1]

    @property
    def train(self):
        return slice(0, self.num_train)

    @property
    def test(self):
        return slice(self.num_train, self.num_sequences)

    def split(self, name):
        sl = self.train if name == "train" else self.test
        return self.states[sl], self.actions[sl], self.obs[sl]


def _sequence_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def gen_dataset(task, num_sequences, seq_len, seed, num_test=None):
    """Simulate ``num_sequences`` training plus ``num_test`` test sequences.

    ``task`` is a Task instance or a name; the maze layout is drawn from the
    seed. Sequence i is simulated from its own stream derived from (seed, i).
    """
    if num_sequences < 1 or seq_len < 1:
        raise ValueError("sequence count and length must be positive")
    if num_test is None:
        num_test = max(1, num_sequences // 10)
    if isinstance(task, str):
        if task == "maze":
            from diffpf.tasks.maze import MazeTask

            task = MazeTask.generate(np.random.default_rng([int(seed), 2**32 - 1]))
        else:
            task = make_task(task)
    total = num_sequences + num_test
    states = np.empty((total, seq_len, task.state_dim), dtype=_F32)
    actions = np.empty((total, seq_len, task.action_dim), dtype=_F32)
    obs = np.empty((total, seq_len) + tuple(task.obs_shape()), dtype=_F32)
    for i in range(total):
        s, a, o = task.simulate(_sequence_rng(seed, i), seq_len)
        states[i], actions[i], obs[i] = s, a, o
    nrm = Normalizer.fit(states[:num_sequences].astype(np.float64), task.angular)
    return TrajectoryDataset(task, states, actions, obs, num_sequences, int(seed), nrm,
                             meta=_build_meta(task, states, actions, obs, num_sequences, seed, nrm))


def _build_meta(task, states, actions, obs, num_train, seed, nrm):
    meta = {
        "format_version": FORMAT_VERSION,
        "task": task.name,
        "task_params": task.params,
        "num_sequences": int(states.shape[0]),
        "num_train": int(num_train),
        "num_test": int(states.shape[0] - num_train),
        "seq_len": int(states.shape[1]),
        "state_dim": int(task.state_dim),
        "action_dim": int(task.action_dim),
        "obs_shape": list(task.obs_shape()),
        "dtype": "f32",
        "endianness": "little",
        "seed": int(seed),
        "shapes": {"states": list(states.shape), "actions": list(actions.shape), "obs": list(obs.shape)},
        "normalization": nrm.to_dict(),
    }
    if task.name == "maze":
        meta["certificate"] = task.ambiguity_certificate()
    return meta


def save_dataset(ds, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in _FILES:
        arr = np.ascontiguousarray(getattr(ds, name), dtype=_F32)
        (out / f"{name}.bin").write_bytes(arr.tobytes())
    (out / "meta.json").write_text(json.dumps(ds.meta, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(path):
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no dataset at {root} (missing meta.json)")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"dataset format version {meta.get('format_version')} != {FORMAT_VERSION}")
    if meta.get("dtype") != "f32" or meta.get("endianness") != "little":
        raise ValueError("dataset must be little-endian f32")
    arrays = {}
    for name in _FILES:
        shape = tuple(meta["shapes"][name])
        raw = np.frombuffer((root / f"{name}.bin").read_bytes(), dtype=_F32)
        if raw.size != int(np.prod(shape)):
            raise ValueError(f"{name}.bin holds {raw.size} values, meta declares {shape}")
        arrays[name] = raw.reshape(shape).astype(np.float32)
    task = make_task(meta["task"], **meta["task_params"])
    nrm = Normalizer.from_dict(meta["normalization"])
    return TrajectoryDataset(task, arrays["states"], arrays["actions"], arrays["obs"],
                             meta["num_train"], meta["seed"], nrm, meta)
