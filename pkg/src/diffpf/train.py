"""Two-phase training of the DiffPF model and the baseline point regressor.

Phase 1 conditions the denoiser on observation features only (particle
summary zeroed). Phase 2 starts from a phase-1 checkpoint and adds the
particle prior. Phase-2 conditions come from two sources mixed per batch:

* teacher forcing: predicted particles built around the ground-truth
  previous state, ``pm(x*_{t-1} + delta + zeta_j, a_t)``, where a shared
  offset ``delta`` and per-particle ``zeta_j`` are drawn with the same
  randomly scaled covariance so the truth sits inside the cloud the way it
  does for a calibrated filter;
* filter rollouts: a small pool of filters run alongside training on
  training sequences, one step per iteration, and their predicted particle
  sets are used as conditions.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from diffpf import tensor as T
from diffpf.baselines import PointRegressor
from diffpf.diffusion import GaussianDraw, NoiseSchedule, build_schedule, ddpm_loss, sample_batch
from diffpf.filter import DiffPFModel
from diffpf.normalize import Normalizer, denormalize, normalize  # noqa: F401 - re-exported
from diffpf.tasks import make_task

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_F32 = np.dtype("<f4")


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration, snapshot):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    task: str
    phase: int = 1
    model: str = "diffpf"  # or "regressor"
    lr: float = 1e-3
    lr_min: float = 1e-5
    batch_size: int = 64
    iterations: int = 3000
    K: int = 10
    N: int = 10
    seed: int = 0
    grad_clip: float = 10.0
    rollout_frac: float = 0.5
    tf_scale: tuple = (0.5, 2.0)
    tf_std: list | None = None  # per-dimension teacher-forcing std; defaults to the task's

    def __post_init__(self):
        if self.phase not in (1, 2):
            raise ValueError(f"phase must be 1 or 2, got {self.phase}")
        if self.model not in ("diffpf", "regressor"):
            raise ValueError(f"unknown model kind {self.model!r}")
        for name in ("batch_size", "iterations", "K", "N"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        self.tf_scale = tuple(self.tf_scale)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["tf_scale"] = list(self.tf_scale)
        return d


# ---------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            upd = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = (p.data - upd).astype(p.dtype)


def cosine_lr(i, total, lr, lr_min):
    lo = min(lr_min, lr)
    return lo + 0.5 * (lr - lo) * (1.0 + math.cos(math.pi * i / max(total, 1)))


def clip_grads(params, max_norm):
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(sq)
    if max_norm and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(s)
    return norm


def grads_finite(params):
    return all(p.grad is None or np.all(np.isfinite(p.grad)) for p in params.values())


# ---------------------------------------------------------------- conditions


def teacher_std(task, config):
    if config.tf_std is not None:
        return np.asarray(config.tf_std, dtype=np.float64)
    return np.asarray(getattr(task, "teacher_std", task.process_noise_std), dtype=np.float64)


def teacher_particles(task, prev, actions, N, rng, std, scale_range=(1.0, 1.0),
                      first=None, process_noise=True):
    """Predicted particle sets (B, N, d) around ground-truth previous states.

    Rows flagged in ``first`` (no previous state) start from the task prior.
    """
    prev = np.asarray(prev, dtype=np.float64)
    B, d = prev.shape
    lo, hi = scale_range
    rho = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(B, 1, 1))) if hi > lo else np.full((B, 1, 1), lo)
    s = rho * np.asarray(std)
    delta = rng.standard_normal((B, 1, d)) * s
    zeta = rng.standard_normal((B, N, d)) * s
    base = task.wrap(prev[:, None, :] + delta + zeta)
    if first is not None and np.any(first):
        for b in np.flatnonzero(first):
            base[b] = task.sample_prior(rng, N)
    out = np.empty_like(base)
    for b in range(B):
        if process_noise:
            out[b] = task.predict(base[b], actions[b], rng)
        else:
            out[b] = task.process(base[b], actions[b])
    return out


def make_condition(model, phase, obs, prev=None, actions=None, rng=None, std=None,
                   scale_range=(1.0, 1.0), first=None, process_noise=True, particles=None):
    """Condition batch for training.

    Phase 1: observation features with a zero particle summary. Phase 2: the
    summary of ``particles`` if given, otherwise teacher-forced particles.
    Returns (condition Tensor, particles or None).
    """
    feats = model.encode(obs)
    if phase == 1:
        return model.condition(feats, None), None
    if particles is None:
        particles = teacher_particles(model.task, prev, actions, model.N, rng,
                                      std if std is not None else model.task.process_noise_std,
                                      scale_range, first, process_noise)
    return model.condition(feats, particles), particles


# ---------------------------------------------------------------- training


@dataclass
class Checkpoint:
    model: object
    config: TrainConfig
    trace: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def kind(self):
        return self.config.model


def build_model(config, task, normalizer):
    rng = np.random.default_rng([config.seed, 0])
    if config.model == "regressor":
        return PointRegressor(task, normalizer, rng)
    return DiffPFModel(task, normalizer, build_schedule(config.K), config.N, rng, phase=config.phase)


class _Rollouts:
    """Pool of filters stepping through training sequences, one step per iteration.

    A slot whose posterior strays beyond ``max_z`` normalized units (an early,
    barely trained sampler can diverge) restarts at a fresh random position.
    """

    def __init__(self, model, ds, n, rng, std, scale_range, max_z=8.0):
        self.model, self.ds, self.rng = model, ds, rng
        self.std, self.scale_range, self.max_z = std, scale_range, max_z
        self.T = ds.seq_len
        self.seq = np.zeros(n, dtype=np.int64)
        self.t = np.zeros(n, dtype=np.int64)
        self.post = np.empty((n, model.N, model.task.state_dim))
        self.resets = 0
        for j in range(n):
            self._restart(j, self.rng.integers(0, self.T))

    def _restart(self, j, t):
        m, rng = self.model, self.rng
        self.seq[j] = rng.integers(0, self.ds.num_train)
        self.t[j] = t
        if t == 0:
            self.post[j] = m.task.sample_prior(rng, m.N)
            return
        prev = self.ds.states[self.seq[j], t - 1].astype(np.float64)
        lo, hi = self.scale_range
        s = np.exp(rng.uniform(np.log(lo), np.log(hi))) * self.std
        d = prev.shape[0]
        self.post[j] = m.task.wrap(prev + rng.standard_normal(d) * s + rng.standard_normal((m.N, d)) * s)

    def predicted(self):
        ds, task = self.ds, self.model.task
        out = np.empty_like(self.post)
        for j in range(len(self.seq)):
            out[j] = task.predict(self.post[j], ds.actions[self.seq[j], self.t[j]].astype(np.float64), self.rng)
        return out

    def advance(self, cond, draw):
        m = self.model
        n = len(self.seq)
        z = sample_batch(np.repeat(cond, m.N, axis=0), m.schedule, m.denoiser, draw)
        bad = ~(np.isfinite(z) & (np.abs(z) < self.max_z)).reshape(n, -1).all(axis=1)
        self.post = m.normalizer.denormalize(np.nan_to_num(z)).reshape(n, m.N, -1)
        self.t += 1
        for j in range(n):
            if bad[j]:
                self.resets += 1
                self._restart(j, self.rng.integers(0, self.T))
            elif self.t[j] >= self.T:
                self._restart(j, 0)


def train_loop(config, dataset, init=None, progress=None):
    """Train a model on ``dataset``'s training split.

    ``init`` is the phase-1 checkpoint that phase 2 starts from. Returns a
    :class:`Checkpoint` whose ``trace`` holds one loss value per iteration.
    """
    task = dataset.task
    if config.task != task.name:
        raise ValueError(f"config task {config.task!r} does not match dataset task {task.name!r}")
    if config.phase == 2 and config.model == "diffpf" and init is None:
        raise ValueError("phase 2 requires a phase-1 checkpoint")
    if config.model == "diffpf" and task.fuse_mode == "flatten" and init is not None and init.model.N != config.N:
        raise ValueError(f"checkpoint was trained with N={init.model.N}, config asks for N={config.N}")
    model = build_model(config, task, dataset.normalizer)
    if init is not None:
        if init.config.model != config.model:
            raise ValueError("initial checkpoint holds a different model kind")
        model.param_store().load(init.model.param_store().state())
    params = model.param_store()
    opt = Adam(params, lr=config.lr)
    draw = GaussianDraw([config.seed, 1])
    rng = np.random.default_rng([config.seed, 2])
    states, actions, obs = dataset.split("train")
    S, Tlen = states.shape[:2]
    std = teacher_std(task, config)
    nrm = dataset.normalizer
    B = config.batch_size
    use_rollouts = config.model == "diffpf" and config.phase == 2 and config.rollout_frac > 0
    n_roll = int(round(B * config.rollout_frac)) if use_rollouts else 0
    pool = _Rollouts(model, dataset, n_roll, rng, std, config.tf_scale) if n_roll else None
    trace = []
    skipped = 0
    for it in range(config.iterations):
        n_tf = B - n_roll
        si = rng.integers(0, S, size=n_tf)
        ti = rng.integers(0, Tlen, size=n_tf)
        if pool is not None:
            si = np.concatenate([pool.seq, si])
            ti = np.concatenate([pool.t, ti])
        target = states[si, ti].astype(np.float64)
        o = obs[si, ti]
        params.zero_grad()
        if config.model == "regressor":
            pred = model(o)
            resid = T.sub(pred, T.Tensor(nrm.normalize(target).astype(np.float32)))
            loss = T.scale(T.sum(T.square(resid)), 1.0 / B)
        else:
            particles = None
            if config.phase == 2:
                first = ti[n_roll:] == 0
                prev = states[si[n_roll:], np.maximum(ti[n_roll:] - 1, 0)].astype(np.float64)
                act = actions[si[n_roll:], ti[n_roll:]].astype(np.float64)
                tf = teacher_particles(task, prev, act, model.N, rng, std, config.tf_scale, first)
                particles = tf if pool is None else np.concatenate([pool.predicted(), tf])
            cond, _ = make_condition(model, config.phase, o, particles=particles)
            k = draw.integers(1, model.schedule.K + 1, size=B)
            loss = ddpm_loss(nrm.normalize(target), k, cond, model.denoiser, draw, model.schedule)
        lval = float(loss.data)
        if not math.isfinite(lval):
            raise TrainingDiverged(it, {k_: v.copy() for k_, v in params.state().items()})
        T.backward(loss)
        if grads_finite(params):
            clip_grads(params, config.grad_clip)
            opt.step(cosine_lr(it, config.iterations, config.lr, config.lr_min))
        else:
            skipped += 1
        trace.append(lval)
        if pool is not None:
            pool.advance(cond.data[:n_roll], draw)
        if progress is not None:
            progress(it, lval)
    stats = {"skipped_nonfinite": skipped, "param_count": params.count(),
             "rollout_resets": pool.resets if pool is not None else 0}
    if config.model == "regressor":
        model.residual_var = _residual_var(model, dataset)
    return Checkpoint(model, config, trace, stats)


def _residual_var(model, ds, limit=4000):
    states, _, obs = ds.split("train")
    flat_s = states.reshape(-1, states.shape[-1])[:limit].astype(np.float64)
    flat_o = obs.reshape((-1,) + obs.shape[2:])[:limit]
    preds = np.concatenate([model.predict(flat_o[i:i + 256]) for i in range(0, len(flat_o), 256)])
    var = np.mean((preds - ds.normalizer.normalize(flat_s)) ** 2, axis=0)
    return np.maximum(var, 1e-6)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(ckpt, path):
    """One-line JSON header (newline-terminated) followed by a little-endian f32 blob."""
    model = ckpt.model
    store = model.param_store()
    manifest, blobs, offset = [], [], 0
    for name, p in store.items():
        raw = np.ascontiguousarray(p.data, dtype=_F32).tobytes()
        manifest.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "kind": ckpt.config.model,
        "task": model.task.name,
        "task_params": model.task.params,
        "architecture": model.architecture(),
        "normalizer": model.normalizer.to_dict(),
        "config": ckpt.config.to_dict(),
        "param_count": store.count(),
        "stats": ckpt.stats,
        "tensors": manifest,
    }
    if ckpt.config.model == "diffpf":
        header["schedule"] = model.schedule.to_dict()
        header["phase"] = model.phase
    else:
        header["residual_var"] = [float(v) for v in model.residual_var]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    blob = raw[nl + 1:]
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint format version {header.get('format_version')} "
                         f"is not supported (expected {CHECKPOINT_VERSION})")
    config = TrainConfig.from_dict(header["config"])
    task = make_task(header["task"], **header["task_params"])
    nrm = Normalizer.from_dict(header["normalizer"])
    model = build_model(config, task, nrm)
    if config.model == "diffpf":
        model.schedule = NoiseSchedule.from_dict(header["schedule"])
    else:
        model.residual_var = np.asarray(header["residual_var"])
    arrays = {}
    for ent in header["tensors"]:
        buf = blob[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arrays[ent["name"]] = np.frombuffer(buf, dtype=_F32).reshape(ent["shape"])
    model.param_store().load(arrays)
    if model.param_store().count() != header["param_count"]:
        raise ValueError("parameter count in checkpoint header does not match the architecture")
    return Checkpoint(model, config, [], header.get("stats", {}))
