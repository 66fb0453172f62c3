import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffpf.baselines import (
    GaussianLikelihood,
    KalmanBelief,
    PointRegressor,
    WeightedParticleSet,
    bpf_step,
    kalman_step,
    soft_resample,
)
from diffpf.normalize import Normalizer
from diffpf.tasks import LinearGaussianTask


def _wps(w, x=None):
    w = np.asarray(w, float)
    x = np.arange(len(w), dtype=float)[:, None] if x is None else x
    return WeightedParticleSet(x, np.log(w / w.sum()))


def test_full_resampling_gives_uniform_weights():
    out = soft_resample(_wps([0.7, 0.1, 0.1, 0.1]), 1.0, np.random.default_rng(0))
    assert np.allclose(out.weights, 0.25, rtol=0, atol=1e-15)
    assert out.ess() == pytest.approx(4.0, rel=1e-12)


def test_uniform_proposal_preserves_selected_weights():
    w = np.array([0.5, 0.25, 0.125, 0.125])
    wps = _wps(w)
    out = soft_resample(wps, 0.0, np.random.default_rng(1))
    idx = out.particles[:, 0].astype(int)
    assert np.allclose(out.weights, w[idx] / w[idx].sum(), rtol=1e-12)


def test_uniform_weights_stay_uniform_for_any_alpha():
    for alpha in (0.0, 0.3, 1.0):
        out = soft_resample(_wps(np.ones(5)), alpha, np.random.default_rng(2))
        assert out.ess() == pytest.approx(5.0, rel=1e-12)


def test_soft_resampling_is_unbiased_in_expectation():
    w = np.array([0.6, 0.2, 0.15, 0.05])
    x = np.array([[1.0], [-2.0], [3.0], [7.0]])
    target = float(w @ x[:, 0])
    rng = np.random.default_rng(3)
    draws = 10_000
    est = np.empty(draws)
    for i in range(draws):
        out = soft_resample(_wps(w, x), 0.5, rng)
        # unnormalized weights 1/N * w/q have mean w; self-normalization adds O(1/N) bias
        q = 0.5 * w + 0.5 / 4
        idx = np.array([np.flatnonzero(x[:, 0] == v)[0] for v in out.particles[:, 0]])
        raw = w[idx] / q[idx]
        assert np.allclose(out.weights, raw / raw.sum(), rtol=1e-12)
        est[i] = np.mean(raw * x[idx, 0])
    assert abs(est.mean() - target) <= 3 * est.std() / np.sqrt(draws)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1.0), min_size=2, max_size=8), st.floats(0, 1), st.integers(0, 2**31))
def test_soft_resample_weights_normalized(w, alpha, seed):
    out = soft_resample(_wps(w), alpha, np.random.default_rng(seed))
    assert out.N == len(w)
    assert out.weights.sum() == pytest.approx(1.0, rel=1e-12)
    assert 1.0 <= out.ess() <= len(w) + 1e-9


def test_bpf_step_rejects_bad_alpha():
    task = LinearGaussianTask()
    with pytest.raises(ValueError):
        bpf_step(_wps(np.ones(3), np.zeros((3, 2))), np.zeros(2), np.zeros(0), task, lambda p, o: np.zeros(3),
                 1.5, np.random.default_rng(0))


def test_bpf_step_resets_when_all_likelihoods_vanish(caplog):
    task = LinearGaussianTask()
    out = bpf_step(_wps(np.ones(4), np.zeros((4, 2))), np.zeros(2), np.zeros(0), task,
                   lambda p, o: np.full(len(p), -np.inf), 0.5, np.random.default_rng(0))
    assert np.allclose(out.weights, 0.25)
    assert "vanished" in caplog.text


def test_gaussian_likelihood_peaks_at_regressor_output():
    task = LinearGaussianTask()
    nrm = Normalizer(np.array([1.0, -1.0]), np.array([2.0, 2.0]))
    reg = PointRegressor(task, nrm, np.random.default_rng(0))
    lik = GaussianLikelihood(reg)
    obs = np.array([0.4, 0.2], np.float32)
    mu = nrm.denormalize(reg.predict(obs[None])[0])
    ll = lik(np.stack([mu, mu + 0.5, mu - 1.0]), obs)
    assert ll[0] == pytest.approx(0.0, abs=1e-9)
    assert ll[0] > ll[1] > ll[2]


# ---------------------------------------------------------------- Kalman


def _scalar(P=1.0, Q=0.0, R=1.0):
    return dict(F=np.eye(1), Q=np.full((1, 1), Q), H=np.eye(1), R=np.full((1, 1), R))


def test_kalman_scalar_example():
    b = kalman_step(KalmanBelief(np.zeros(1), np.eye(1)), np.array([2.0]), None, **_scalar())
    assert b.mean[0] == pytest.approx(1.0, abs=1e-15)
    assert b.cov[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_kalman_trusts_noise_free_observation():
    b = kalman_step(KalmanBelief(np.zeros(1), np.eye(1)), np.array([3.0]), None, **_scalar(R=0.0))
    assert b.mean[0] == pytest.approx(3.0, abs=1e-15)
    assert b.cov[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_kalman_rejects_singular_innovation():
    with pytest.raises(np.linalg.LinAlgError):
        kalman_step(KalmanBelief(np.zeros(1), np.zeros((1, 1))), np.array([1.0]), None, **_scalar(R=0.0))


def test_kalman_control_input():
    b = kalman_step(KalmanBelief(np.zeros(1), np.eye(1)), np.array([0.0]), np.array([2.0]),
                    B=np.eye(1), **_scalar(R=1e12))
    assert b.mean[0] == pytest.approx(2.0, rel=1e-9)


def test_kalman_trace_non_increasing_from_stationary_start():
    task = LinearGaussianTask()
    M = task.matrices()
    _, _, obs = task.simulate(np.random.default_rng(0), 40)
    b = KalmanBelief(M["m0"], M["P0"])
    traces = []
    for o in obs:
        b = kalman_step(b, o, None, M["F"], M["Q"], M["H"], M["R"])
        traces.append(np.trace(b.cov))
    assert np.all(np.diff(traces) <= 1e-12)


def test_kalman_matches_grid_bayes_filter():
    # 1-d chain against a 201-bin discretized Bayes recursion
    f, q, r = 0.9, 0.1, 0.5
    grid = np.linspace(-6, 6, 201)
    dx = grid[1] - grid[0]
    post = np.exp(-0.5 * grid**2 / (q / (1 - f * f)))
    post /= post.sum()
    trans = np.exp(-0.5 * (grid[:, None] - f * grid[None, :]) ** 2 / q)
    trans /= trans.sum(axis=0, keepdims=True)
    b = KalmanBelief(np.zeros(1), np.full((1, 1), q / (1 - f * f)))
    for y in [0.3, -0.8, 1.5, 0.1, -0.4, 2.0, 0.9, -1.2, 0.0, 0.6]:
        post = trans @ post
        post *= np.exp(-0.5 * (y - grid) ** 2 / r)
        post /= post.sum()
        b = kalman_step(b, np.array([y]), None, np.full((1, 1), f), np.full((1, 1), q), np.eye(1),
                        np.full((1, 1), r))
        gm = post @ grid
        gv = post @ (grid - gm) ** 2
        assert b.mean[0] == pytest.approx(gm, abs=dx**2)
        assert b.cov[0, 0] == pytest.approx(gv, abs=dx**2)
