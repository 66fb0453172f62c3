"""Running filters over held-out sequences and scoring them."""

from __future__ import annotations

import time

import numpy as np

from diffpf import filter as F
from diffpf import tensor as T
from diffpf.baselines import GaussianLikelihood, KalmanBelief, WeightedParticleSet, bpf_step, kalman_step
from diffpf.diffusion import sample_chains


def run_diffpf(model, states, actions, obs, seed, N=None, keep_particles=False):
    """Filter every sequence from the task prior.

    All sequences advance together so the denoiser runs on one large batch,
    but sequence s owns the generator ``default_rng([seed, s])`` and consumes
    it exactly as :func:`diffpf.filter.step` would.
    Returns a dict with ``estimates`` (S, T, d), ``spread`` (per-dimension
    sample std of the posterior particles) and optionally ``particles``.
    """
    task = model.task
    N = model.N if N is None else int(N)
    S, Tlen = states.shape[:2]
    fs = [F.init_filter(F.TaskPrior(task), N, [int(seed), s]) for s in range(S)]
    est = np.empty((S, Tlen, task.state_dim))
    spread = np.empty_like(est)
    kept = np.empty((S, Tlen, N, task.state_dim)) if keep_particles else None
    for t in range(Tlen):
        with T.no_grad():
            feats = model.encode(obs[:, t]).data
        pred = np.stack([F.predict(f.particles, actions[s, t], task, f.rng).particles for s, f in enumerate(fs)])
        with T.no_grad():
            cond = model.condition(T.Tensor(feats), pred if model.uses_prior() else None).data
        seeds = [int(f.rng.integers(0, 2**62)) for f in fs]
        chain_seeds = [sd + i for sd in seeds for i in range(N)]
        z = sample_chains(np.repeat(cond, N, axis=0), model.schedule, model.denoiser, chain_seeds)
        post = model.normalizer.denormalize(z).reshape(S, N, -1)
        for s, f in enumerate(fs):
            ps = F.ParticleSet(post[s])
            fs[s] = F.FilterState(ps, f.t + 1, f.rng, F.ParticleSet(pred[s]))
            est[s, t] = F.estimate(ps, task.angular)
            spread[s, t] = post[s].std(axis=0, ddof=1) if N > 1 else 0.0
        if keep_particles:
            kept[:, t] = post
    out = {"estimates": est, "spread": spread}
    if keep_particles:
        out["particles"] = kept
    return out


def run_bpf(regressor, states, actions, obs, seed, N, resample_alpha=0.5):
    task = regressor.task
    like = GaussianLikelihood(regressor)
    S, Tlen = states.shape[:2]
    est = np.empty((S, Tlen, task.state_dim))
    for s in range(S):
        rng = np.random.default_rng([int(seed), s])
        wps = WeightedParticleSet.uniform(task.sample_prior(rng, N))
        for t in range(Tlen):
            wps = bpf_step(wps, obs[s, t], actions[s, t].astype(np.float64), task, like, resample_alpha, rng)
            est[s, t] = wps.mean(task.angular)
    return {"estimates": est}


def run_kalman(task, states, actions, obs):
    mats = task.matrices()
    Fm, Q, H, R = mats["F"], mats["Q"], mats["H"], mats["R"]
    m0, P0 = mats["m0"], mats["P0"]
    S, Tlen = states.shape[:2]
    est = np.empty((S, Tlen, task.state_dim))
    var = np.empty_like(est)
    for s in range(S):
        b = KalmanBelief(m0.copy(), P0.copy())
        for t in range(Tlen):
            b = kalman_step(b, obs[s, t].astype(np.float64), None, Fm, Q, H, R)
            est[s, t] = b.mean
            var[s, t] = np.diag(b.cov)
    return {"estimates": est, "var": var}


def errors(task, est, states):
    """Per-step squared Euclidean error over the scored dimensions, (S, T)."""
    diff = task.scored(np.asarray(est, dtype=np.float64)) - task.scored(np.asarray(states, dtype=np.float64))
    return np.sum(diff**2, axis=-1)


def score(task, est, states):
    e2 = errors(task, est, states)
    return {
        "mse": float(e2.mean()),
        "rmse": float(np.sqrt(e2.mean())),
        "final_rmse": float(np.sqrt(e2[:, -1].mean())),
        "headline": task.metric,
        "value": _headline(task.metric, e2),
    }


def _headline(metric, e2):
    if metric == "mse":
        return float(e2.mean())
    if metric == "final-rmse":
        return float(np.sqrt(e2[:, -1].mean()))
    return float(np.sqrt(e2.mean()))


def uniform_baseline(task, states):
    """Final-step RMSE of a uniformly random pose estimate (maze only)."""
    final = np.asarray(states[:, -1, :2], dtype=np.float64)
    return float(np.sqrt(np.mean(task.uniform_mse(final))))


def _steady_hz(init, advance, states, steps):
    Tlen, n_seq = states.shape[1], states.shape[0]
    state = init(0)
    elapsed, count = 0.0, 0
    for i in range(steps + 1):
        s, t = divmod(i, Tlen)
        s %= n_seq
        if t == 0 and i:
            state = init(i)
        start = time.perf_counter()
        state = advance(state, s, t)
        if i:
            elapsed += time.perf_counter() - start
            count += 1
    return count / elapsed


def measure_hz(model, states, actions, obs, seed=0, steps=100):
    """Single-sequence DiffPF steps per second, excluding the first step."""
    task = model.task

    def init(i):
        return F.init_filter(F.TaskPrior(task), model.N, seed + i)

    def advance(fs, s, t):
        return F.step(fs, obs[s, t], actions[s, t], model)[0]

    return _steady_hz(init, advance, states, steps)


def measure_hz_bpf(regressor, states, actions, obs, N, seed=0, steps=100, resample_alpha=0.5):
    task = regressor.task
    like = GaussianLikelihood(regressor)
    rng = np.random.default_rng(seed)

    def init(i):
        return WeightedParticleSet.uniform(task.sample_prior(rng, N))

    def advance(wps, s, t):
        wps = bpf_step(wps, obs[s, t], actions[s, t].astype(np.float64), task, like, resample_alpha, rng)
        wps.mean(task.angular)
        return wps

    return _steady_hz(init, advance, states, steps)


def measure_hz_kf(task, states, actions, obs, steps=100):
    mats = task.matrices()

    def init(i):
        return KalmanBelief(mats["m0"].copy(), mats["P0"].copy())

    def advance(b, s, t):
        return kalman_step(b, obs[s, t].astype(np.float64), None, mats["F"], mats["Q"], mats["H"], mats["R"])

    return _steady_hz(init, advance, states, steps)
