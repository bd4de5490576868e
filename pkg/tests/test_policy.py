"""Tests for the residual policy: bounds, reward terms, the tanh-Gaussian
density, checkpoints, and the observation contract."""

import numpy as np
import pytest

from quadmpc.policy import (ACT_DIM, HIDDEN, OBS_DIM, OBS_FRAME, OBS_HISTORY,
                            ActionBounds, PolicyNet, RewardWeights,
                            block_reward, bounds_preset, compute_reward)


def test_bounds_presets():
    hs = bounds_preset("high_speed")
    assert np.array_equal(hs.dalpha_max, [2.0, 10.0, 2.0])
    assert np.array_equal(hs.da_max, [4.0, 2.0, 3.0])
    un = bounds_preset("uncertainty")
    assert np.array_equal(un.dalpha_max, [4.0, 10.0, 2.0])
    assert np.array_equal(un.da_max, [4.0, 2.0, 8.0])
    dt = bounds_preset("discrete_terrain")
    assert np.array_equal(dt.dalpha_max, [4.0, 10.0, 2.0])
    assert np.array_equal(dt.da_max, [2.0, 2.0, 2.0])
    for b in (hs, un, dt):
        assert b.dq_max == 0.3
        assert b.scale().shape == (18,)
    with pytest.raises(ValueError):
        bounds_preset("moonwalk")
    with pytest.raises(ValueError):
        ActionBounds(dalpha_max=[1.0, -1.0, 1.0])


def test_actions_always_within_bounds():
    rng = np.random.default_rng(0)
    for trial in range(10):
        net = PolicyNet("uncertainty", seed=trial, init_scale=1.0)
        # exaggerate the weights so the tanh actually saturates
        for w in net.pi_w:
            w *= 10.0
        scale = net.bounds.scale()
        for _ in range(50):
            obs = rng.normal(0.0, 5.0, OBS_DIM)
            a = net.act(obs)
            assert a.shape == (ACT_DIM,)
            assert np.all(np.abs(a) <= scale)
            out = net.sample(obs, rng)
            assert np.all(np.abs(out["action"]) <= scale)


def test_zeroed_policy_is_exactly_zero():
    net = PolicyNet.zeroed("high_speed")
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert np.all(net.act(rng.normal(size=OBS_DIM)) == 0.0)


def test_deterministic_act_is_squashed_mean():
    net = PolicyNet("discrete_terrain", seed=3)
    obs = np.random.default_rng(2).normal(size=OBS_DIM)
    expect = np.tanh(net.mean_raw(obs)) * net.bounds.scale()
    assert np.array_equal(net.act(obs), expect)


def test_initial_actions_near_zero():
    net = PolicyNet("uncertainty", seed=5)
    rng = np.random.default_rng(6)
    acts = np.array([net.act(rng.normal(size=OBS_DIM)) for _ in range(50)])
    # final layer scaled down: the residual controller starts at baseline
    assert np.abs(acts / net.bounds.scale()).max() < 0.05


def test_orthogonal_hidden_layers():
    net = PolicyNet("uncertainty", seed=9)
    for w in net.pi_w[1:-1]:
        rows = min(w.shape)
        prod = w @ w.T if w.shape[0] <= w.shape[1] else w.T @ w
        gain2 = (5.0 / 3.0) ** 2
        assert np.allclose(prod, gain2 * np.eye(rows), atol=1e-10)


# -- reward --------------------------------------------------------------------

def test_reward_perfect_tracking():
    w = RewardWeights(z_des=0.28)
    r = compute_reward(v_com=np.zeros(3), omega=np.zeros(3), z_com=0.28,
                       tau=np.zeros(12), qd=np.zeros(12),
                       v_des=np.zeros(3), omega_des=np.zeros(3),
                       weights=w, dt=0.03)
    assert r == pytest.approx(w.w1 + 0.02 * w.w4)


def test_reward_unit_velocity_error():
    w = RewardWeights(z_des=0.28)
    base = compute_reward(np.zeros(3), np.zeros(3), 0.28, np.zeros(12),
                          np.zeros(12), np.zeros(3), np.zeros(3), w, 0.03)
    off = compute_reward(np.array([1.0, 0, 0]), np.zeros(3), 0.28,
                         np.zeros(12), np.zeros(12), np.zeros(3),
                         np.zeros(3), w, 0.03)
    assert base - off == pytest.approx(abs(w.w2))


def test_reward_energy_scales_with_dt():
    w = RewardWeights(z_des=0.28)
    rng = np.random.default_rng(4)
    tau, qd = rng.normal(size=12), rng.normal(size=12)
    r1 = compute_reward(np.zeros(3), np.zeros(3), 0.28, tau, qd,
                        np.zeros(3), np.zeros(3), w, 0.01)
    r2 = compute_reward(np.zeros(3), np.zeros(3), 0.28, tau, qd,
                        np.zeros(3), np.zeros(3), w, 0.02)
    const = w.w1 + 0.02 * w.w4
    assert r2 - const == pytest.approx(2.0 * (r1 - const))


def test_reward_weight_signs_enforced():
    with pytest.raises(ValueError):
        RewardWeights(w2=0.5)
    with pytest.raises(ValueError):
        RewardWeights(w3=0.1)


def test_block_reward_matches_pointwise_on_constant_rows():
    w = RewardWeights(z_des=0.28)
    rng = np.random.default_rng(7)
    row = np.zeros(88)
    row[6] = 0.26
    row[7:10] = [0.0, 0.1, 0.0]
    row[10:13] = [0.4, 0.0, 0.0]
    row[25:37] = rng.normal(size=12)
    row[37:49] = rng.normal(size=12)
    rows = np.tile(row, (30, 1))
    v_des, om_des = np.array([0.5, 0, 0]), np.zeros(3)
    got = block_reward(rows, v_des, om_des, w, dt=0.001)
    # constant rows: the block energy is 30 samples of the same power
    want = compute_reward(row[10:13], row[7:10], row[6], row[37:49],
                          row[25:37], v_des, om_des, w, dt=0.03)
    assert got == pytest.approx(want, abs=1e-12)


# -- density --------------------------------------------------------------------

def test_log_prob_against_reference():
    net = PolicyNet("uncertainty", seed=11)
    rng = np.random.default_rng(12)
    scale = net.bounds.scale()
    for _ in range(50):
        obs = rng.normal(size=OBS_DIM)
        mean = net.mean_raw(obs)
        raw = mean + rng.normal(0.0, 2.0, ACT_DIM)
        std = np.exp(net.log_std)
        ref = np.sum(-0.5 * ((raw - mean) / std) ** 2 - np.log(std)
                     - 0.5 * np.log(2 * np.pi))
        ref -= np.sum(np.log(1.0 - np.tanh(raw) ** 2 + 1e-300))
        ref -= np.sum(np.log(scale))
        assert net.log_prob(mean, raw) == pytest.approx(ref, rel=1e-9)


def test_log_prob_marginal_normalizes():
    # one coordinate of the squashed density integrates to 1 over its range
    mean, log_std, s = 0.3, -0.5, 2.0
    u = np.linspace(-8.0, 8.0, 20001)
    a = np.tanh(u) * s
    std = np.exp(log_std)
    log_p = (-0.5 * ((u - mean) / std) ** 2 - np.log(std)
             - 0.5 * np.log(2 * np.pi)
             - (np.log(1 - np.tanh(u) ** 2 + 1e-300) + np.log(s)))
    total = np.trapezoid(np.exp(log_p), a)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_sample_is_consistent_with_log_prob():
    net = PolicyNet("high_speed", seed=13)
    rng = np.random.default_rng(14)
    obs = rng.normal(size=OBS_DIM)
    out = net.sample(obs, rng)
    mean = net.mean_raw(obs)
    assert out["log_prob"] == pytest.approx(
        float(net.log_prob(mean, out["raw"])), rel=1e-12)
    assert np.allclose(out["action"],
                       np.tanh(out["raw"]) * net.bounds.scale())
    assert out["value"] == pytest.approx(float(net.value(obs)))


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    net = PolicyNet("discrete_terrain", seed=21)
    path = str(tmp_path / "policy.ckpt")
    net.save(path)
    back = PolicyNet.load(path)
    for a, b in zip(net.parameters(), back.parameters()):
        assert np.array_equal(a, b)
    assert back.bounds_name == "discrete_terrain"
    assert np.array_equal(back.bounds.scale(), net.bounds.scale())
    obs = np.random.default_rng(22).normal(size=OBS_DIM)
    assert np.array_equal(net.act(obs), back.act(obs))


def test_checkpoint_rejects_garbage(tmp_path):
    path = str(tmp_path / "bad.ckpt")
    with open(path, "wb") as f:
        f.write(b'{"version": 999}\n')
    with pytest.raises(ValueError):
        PolicyNet.load(path)


def test_parameter_sync_roundtrip():
    a = PolicyNet("uncertainty", seed=31)
    b = PolicyNet("uncertainty", seed=32)
    b.set_parameters(a.parameters())
    obs = np.random.default_rng(33).normal(size=OBS_DIM)
    assert np.array_equal(a.act(obs), b.act(obs))
    with pytest.raises(ValueError):
        b.set_parameters(a.parameters()[:-1])


# -- observation contract ---------------------------------------------------------

class _Recorder:
    """Zero policy that keeps every observation it is shown."""

    def __init__(self):
        self.net = PolicyNet.zeroed("uncertainty")
        self.seen = []

    def act(self, obs):
        self.seen.append(np.asarray(obs, dtype=float).copy())
        return self.net.act(obs)


def _standing_episode(robot_name, duration=0.4):
    from quadmpc.controller import LocomotionController
    from quadmpc.presets import full_preset
    from quadmpc.sim import (ContactModel, DisturbanceSpec, Terrain,
                             run_episode)

    class Scen:
        terrain = Terrain.flat()
        disturbance = DisturbanceSpec()
        contact = ContactModel()
        swing_height = 0.08
        observation_noise = False

        def __init__(self, d):
            self.duration = d

        def command(self, t):
            return np.zeros(3), np.zeros(3)

    rec = _Recorder()
    ctrl = LocomotionController(full_preset(robot_name), gait="stand",
                                mode="augmented", policy=rec)
    log = run_episode(ctrl, Scen(duration), seed=0)
    assert not log.fell and log.fault is None
    return rec.seen


def test_observation_history_zero_padded():
    seen = _standing_episode("a1")
    first = seen[0]
    assert first.shape == (OBS_DIM,)
    assert np.all(first[: (OBS_HISTORY - 1) * OBS_FRAME] == 0.0)
    assert np.any(first[(OBS_HISTORY - 1) * OBS_FRAME:] != 0.0)
    # once the window fills, every frame is live
    full = seen[OBS_HISTORY]
    frames = full.reshape(OBS_HISTORY, OBS_FRAME)
    for fr in frames:
        assert np.any(fr != 0.0)
    assert np.all(np.isfinite(np.array(seen)))


def test_force_features_are_per_mass():
    # the same stand on two robots of different mass reads nearly the same
    # in the force block: accelerations, not newtons
    fa = np.array(_standing_episode("a1")[-1][-OBS_FRAME:])
    fg = np.array(_standing_episode("aliengo")[-1][-OBS_FRAME:])
    za = fa[56 + 2:68:3]  # z components of the four F/m features
    zg = fg[56 + 2:68:3]
    assert za.sum() == pytest.approx(9.81, rel=0.02)
    assert zg.sum() == pytest.approx(9.81, rel=0.02)
    assert np.allclose(za, zg, atol=0.25)
