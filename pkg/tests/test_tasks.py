import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffpf.normalize import wrap_angle
from diffpf.tasks import (
    BimodalTask,
    DiskTask,
    LinearGaussianTask,
    MazeTask,
    action_from_states,
    disk_step,
    make_task,
    maze_process,
)
from diffpf.tasks.dataset import gen_dataset, load_dataset, save_dataset
from diffpf.tasks.disk import PALETTE, TARGET_COLOR
from diffpf.tasks.maze import generate_maze

# ---------------------------------------------------------------- disk


@pytest.mark.parametrize("x,v,x_new,v_new", [
    ((0, 0), (0, 0), (0, 0), (0, 0)),
    ((0, 0), (1, 0), (1, 0), (0.9925, 0)),
    ((10, 0), (0, 0), (10, 0), (-0.5, 0)),
])
def test_disk_step_examples(x, v, x_new, v_new):
    xn, vn = disk_step(np.array(x, float), np.array(v, float))
    assert np.allclose(xn, x_new, rtol=0, atol=1e-15)
    assert np.allclose(vn, v_new, rtol=0, atol=1e-15)


def test_disk_dynamics_bounded_noise_free():
    rng = np.random.default_rng(0)
    x = rng.uniform(-64, 64, size=(200, 2))
    v = rng.normal(size=(200, 2)) * 2
    peak = 0.0
    for _ in range(10_000):
        x, v = disk_step(x, v)
        peak = max(peak, np.abs(x).max())
    assert np.all(np.isfinite(x))
    assert peak < 200


def test_disk_render_target_center_red_and_deterministic():
    task = DiskTask(image_size=64)
    img = task.render(np.zeros(2), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)))
    c = 32
    assert np.array_equal(img[:, c, c], TARGET_COLOR)
    assert np.array_equal(img[:, c - 1, c - 1], TARGET_COLOR)
    # 7 px radius in the 128 frame is 3.5 px at 64: 6 px from centre is background
    assert np.array_equal(img[:, c, c + 6], [0, 0, 0])
    again = task.render(np.zeros(2), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)))
    assert np.array_equal(img, again)


def test_disk_render_fully_occluded_target():
    task = DiskTask(image_size=64)
    pos = np.array([[0.0, 0.0]])
    img = task.render(np.zeros(2), pos, np.array([10.0]), PALETTE[:1])
    red = (img[0] == 1) & (img[1] == 0) & (img[2] == 0)
    assert red.sum() == 0
    assert task.target_coverage(np.zeros(2), pos, np.array([10.0]), PALETTE[:1]) == 1.0


def test_palette_excludes_red():
    assert not any(np.array_equal(c, TARGET_COLOR) for c in PALETTE)


def test_disk_occlusion_rate_nonzero():
    task = DiskTask()
    cov = []
    for s in range(10):
        _, _, _, scene = task.simulate(np.random.default_rng(s), 50, return_scene=True)
        for pos, radii, colors in scene:
            cov.append(task.target_coverage(pos[0], pos[1:], radii, colors))
    assert len(cov) == 500
    assert np.mean(np.array(cov) > 0.5) > 0


def test_disk_actions_are_previous_velocities():
    task = DiskTask(num_distractors=0)
    states, actions, _ = task.simulate(np.random.default_rng(3), 20)
    # x_t = x_{t-1} + v_{t-1} + noise(0.1)
    resid = states[1:] - states[:-1] - actions[1:]
    assert np.abs(resid).max() < 0.6


def test_disk_process_model_example():
    task = DiskTask()
    assert np.array_equal(task.process(np.array([[3.0, 4.0]]), np.array([1.0, -1.0])), [[4.0, 3.0]])


# ---------------------------------------------------------------- maze


def test_action_examples():
    assert np.array_equal(action_from_states([1, 2, 0.3], [1, 2, 0.3]), [0, 0, 0])
    assert np.allclose(action_from_states([0, 0, 0], [1, 0, 0]), [1, 0, 0])
    a = action_from_states([0, 0, np.pi / 2], [0, 1, np.pi / 2])
    assert a[0] == pytest.approx(1.0) and a[1] == pytest.approx(0.0, abs=1e-15)


def test_maze_process_examples():
    assert np.allclose(maze_process(np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0])), [1, 0, 0])
    x = np.array([5.0, 6.0, 1.0])
    assert np.array_equal(maze_process(x, np.zeros(3)), x)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2), st.floats(-np.pi, np.pi),
       st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2), st.floats(-np.pi, np.pi))
def test_maze_roundtrip(p0, th0, p1, th1):
    prev = np.array([*p0, th0])
    cur = np.array([*p1, float(wrap_angle(th1))])
    back = maze_process(prev, action_from_states(prev, cur))
    assert np.abs(back[:2] - cur[:2]).max() <= 1e-9
    assert abs(wrap_angle(back[2] - cur[2])) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50))
def test_heading_wraps(th):
    out = maze_process(np.array([0.0, 0.0, th]), np.zeros(3))
    assert -np.pi < out[2] <= np.pi


def test_maze_roundtrip_on_simulated_sequences():
    task = MazeTask.generate(np.random.default_rng(0))
    states, actions, _ = task.simulate(np.random.default_rng(1), 100)
    for t in range(1, 100):
        back = maze_process(states[t - 1], actions[t])
        assert np.abs(back[:2] - states[t, :2]).max() <= 1e-9
        assert abs(wrap_angle(back[2] - states[t, 2])) <= 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_maze_is_symmetric_and_certified(seed):
    task = MazeTask.generate(np.random.default_rng(seed))
    assert np.array_equal(task.grid, np.rot90(task.grid))
    cert = task.ambiguity_certificate()
    assert cert and all(len(g) >= 2 for g in cert)
    for group in cert:
        first = task.observe(group[0])
        for pose in group[1:]:
            assert not np.allclose(pose, group[0])
            assert np.array_equal(task.observe(pose), first)


def test_rotated_pose_sees_identical_patch():
    task = MazeTask.generate(np.random.default_rng(4))
    pose = task._sample_start(np.random.default_rng(9))
    for q in range(1, 4):
        assert np.array_equal(task.render_patch(task.rotate_pose(pose, q)), task.render_patch(pose))


def test_uniform_mse_matches_monte_carlo():
    task = MazeTask.generate(np.random.default_rng(2))
    p = np.array([430.0, 610.0])
    u = task.sample_prior(np.random.default_rng(0), 200_000)[:, :2]
    d2 = np.sum((u - p) ** 2, axis=1)
    assert abs(d2.mean() - task.uniform_mse(p)) <= 3 * d2.std() / np.sqrt(len(d2))


def test_generate_maze_deterministic():
    assert np.array_equal(generate_maze(np.random.default_rng(5)), generate_maze(np.random.default_rng(5)))


# ---------------------------------------------------------------- simple worlds


def test_lg_replay_reproduces_states():
    task = LinearGaussianTask()
    states, actions, obs = task.simulate(np.random.default_rng(8), 30)
    rng = np.random.default_rng(8)
    x = rng.standard_normal(2) * np.sqrt(task.stationary_var)
    for t in range(30):
        x = 0.9 * x + np.sqrt(0.1) * rng.standard_normal(2)
        assert np.array_equal(states[t], x)
        assert np.array_equal(obs[t], x + np.sqrt(0.5) * rng.standard_normal(2))
    assert actions.shape == (30, 0)


def test_bimodal_observation_is_magnitude():
    task = BimodalTask(r_std=0.0)
    states, _, obs = task.simulate(np.random.default_rng(0), 50)
    assert np.array_equal(obs, np.abs(states))


def test_make_task_roundtrip_params():
    for name, task in [("lg", LinearGaussianTask(q=0.2)), ("disk", DiskTask(image_size=32)),
                       ("bimodal", BimodalTask())]:
        assert make_task(name, **task.params).params == task.params
    with pytest.raises(ValueError, match="unknown task"):
        make_task("kitti")


# ---------------------------------------------------------------- datasets


@pytest.mark.parametrize("name", ["lg", "disk", "maze", "bimodal"])
def test_dataset_roundtrip_bit_exact(name, tmp_path):
    ds = gen_dataset(name, 3, 6, seed=11, num_test=1)
    save_dataset(ds, tmp_path / "a")
    back = load_dataset(tmp_path / "a")
    for field in ("states", "actions", "obs"):
        assert np.array_equal(getattr(ds, field), getattr(back, field))
    assert back.meta == ds.meta
    save_dataset(back, tmp_path / "b")
    for f in ("states.bin", "actions.bin", "obs.bin", "meta.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_dataset_same_seed_identical():
    a = gen_dataset("disk", 2, 5, seed=3)
    b = gen_dataset("disk", 2, 5, seed=3)
    assert np.array_equal(a.obs, b.obs) and np.array_equal(a.states, b.states)
    c = gen_dataset("disk", 2, 5, seed=4)
    assert not np.array_equal(a.states, c.states)


def test_dataset_normalizer_uses_train_split_only():
    ds = gen_dataset("lg", 10, 20, seed=0, num_test=5)
    train = ds.states[:10].reshape(-1, 2).astype(np.float64)
    assert np.allclose(ds.normalizer.mean, train.mean(axis=0))
    assert np.allclose(ds.normalizer.std, train.std(axis=0))


def test_dataset_meta_declares_shapes(tmp_path):
    ds = gen_dataset("lg", 4, 7, seed=1)
    assert ds.meta["state_dim"] == 2 and ds.meta["seq_len"] == 7
    assert ds.meta["dtype"] == "f32" and ds.meta["endianness"] == "little"
    save_dataset(ds, tmp_path)
    raw = (tmp_path / "states.bin").read_bytes()
    assert len(raw) == 4 * int(np.prod(ds.meta["shapes"]["states"]))
    assert np.array_equal(np.frombuffer(raw, "<f4").reshape(ds.states.shape), ds.states)


def test_load_dataset_rejects_truncated(tmp_path):
    ds = gen_dataset("lg", 2, 5, seed=1)
    save_dataset(ds, tmp_path)
    (tmp_path / "obs.bin").write_bytes((tmp_path / "obs.bin").read_bytes()[:-4])
    with pytest.raises(ValueError, match="obs.bin"):
        load_dataset(tmp_path)


def test_maze_dataset_carries_certificate():
    ds = gen_dataset("maze", 2, 5, seed=0)
    assert len(ds.meta["certificate"]) >= 1
    task = ds.task
    g = ds.meta["certificate"][0]
    assert np.array_equal(task.observe(g[0]), task.observe(g[1]))
