import math

import numpy as np
import pytest

import aeail


def test_closed_forms():
    assert aeail.reward_from_error_w(0.0) == 1.0
    assert aeail.reward_from_error_w(1.0) == 0.5
    assert aeail.reward_from_error_w(3.0) == 0.25
    assert abs(aeail.reward_from_error_js(math.log(2.0)) - math.log(2.0)) <= 1e-9
    assert aeail.kl_diag_gaussian_to_prior(np.array([1.0]), np.array([0.0])) == pytest.approx(0.5, abs=1e-12)
    assert aeail.scaled_reward(50.0, 0.0, 100.0) == 0.5
    assert aeail.relative_improvement(0.921, 0.83) == pytest.approx(0.1096, abs=5e-3)
    with pytest.raises(aeail.ConfigError):
        aeail.relative_improvement(1.0, 0.0)


def test_env_step_is_a_double_integrator():
    spec = aeail.make_env_spec("pointmass2d")
    assert (spec.state_dim, spec.action_dim) == (4, 2)
    s = np.array([0.5, -0.25, 0.1, 0.0])
    a = np.array([0.4, -0.2])
    nxt, reward, done = aeail.env_step(spec, s, a)
    dt = spec.dt
    expected = np.concatenate([s[:2] + s[2:] * dt + 0.5 * a * dt * dt, s[2:] + a * dt])
    np.testing.assert_allclose(nxt, expected, rtol=0, atol=1e-15)
    assert reward == pytest.approx(-(0.5**2 + 0.25**2) - 0.01 * (0.4**2 + 0.2**2), abs=1e-15)
    assert not done
    with pytest.raises(aeail.ShapeError):
        aeail.env_step(spec, s, np.zeros(3))


def test_demos_round_trip(tmp_path):
    spec = aeail.make_env_spec("pendulum")
    spec.horizon = 30
    demos = aeail.generate_demos(spec, 3, seed=1)
    assert demos.n_trajectories == 3
    assert demos.features().shape == (3, demos.pair_count)
    path = tmp_path / "d.jsonl"
    aeail.save_demos(path, demos)
    back = aeail.load_demos(path)
    np.testing.assert_array_equal(back.features(), demos.features())
    noisy = aeail.corrupt_demos(demos, 0.3, 2)
    assert noisy.noise_sigma == 0.3
    assert not np.array_equal(noisy.features(), demos.features())


def test_reward_model_update_and_latents():
    spec = aeail.make_env_spec("pointmass2d")
    spec.horizon = 40
    demos = aeail.generate_demos(spec, 2)
    model = aeail.make_reward_model("ae_w", demos, hidden=16, seed=3)
    expert = demos.features()
    generated = expert + 1.0
    before = model.loss(expert, generated)
    for _ in range(20):
        model.update(expert, generated)
    assert model.loss(expert, generated) < before
    assert model.max_abs_parameter() <= 0.99
    r = model.episode_rewards(expert)
    assert r.shape == (expert.shape[1],)
    assert np.all((r > 0.0) & (r <= 1.0))
    assert model.latent_activations(expert).shape == (16, expert.shape[1])


def test_short_training_run_is_deterministic(tmp_path):
    overrides = dict(horizon=20, batch_size=64, iterations=2, bc_iters=0, ae_hidden=8,
                     policy_hidden=8, eval_every=1, eval_rollouts=2,
                     output_dir=str(tmp_path))
    a = aeail.train("reward = ae_js\n", dict(overrides, run_id="a"))
    b = aeail.train("reward = ae_js\n", dict(overrides, run_id="b"))
    assert a["policy_updates"] == 3 * a["reward_updates"] == 6
    assert len(a["metrics"]) == 2
    assert a["metrics"] == b["metrics"]
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert math.isfinite(a["final_scaled_reward"])
    with pytest.raises(aeail.ConfigError):
        aeail.train("", {"batch_size": 0})


def test_resolve_config_defaults():
    text = aeail.resolve_config("seed = 4\n")
    assert "iterations = 300" in text
    assert "run_id = pointmass2d_ae_w_h100_n0_s4" in text


def test_cli_and_grad_check(tmp_path):
    out = tmp_path / "d.jsonl"
    assert aeail.cli(["gen-demos", "--env", "cartpole_cont", "--n", "2", "--out", str(out)]) == 0
    assert aeail.load_demos(out).env == "cartpole_cont"
    assert aeail.cli(["gen-demos", "--no-such-flag"]) == 1
    report = aeail.grad_check(nets=5, seed=1)
    assert report["nets_checked"] == 5
    assert report["worst"] <= 1e-4
