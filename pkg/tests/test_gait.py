"""Tests for gait scheduling, placement heuristic and swing curves."""

import numpy as np
import pytest

from quadmpc.gait import GaitSchedule, SwingPlan, advance_gait, \
    apply_reflection, contact_plan, foot_placement_heuristic, gait_preset
from quadmpc.kinematics import LegConfig


def test_trot_contact_pattern_at_key_times():
    trot = gait_preset("trot")
    ph0 = advance_gait(trot, 0.0)
    assert list(ph0.contact) == [True, False, False, True]
    ph_half = advance_gait(trot, 0.15)
    assert list(ph_half.contact) == [False, True, True, False]


def test_flying_trot_has_flight_phase():
    fly = gait_preset("flying_trot")
    ph = advance_gait(fly, 0.14)
    assert not ph.contact.any()


def test_stand_is_always_in_contact():
    stand = gait_preset("stand")
    rng = np.random.default_rng(2)
    for t in rng.uniform(0.0, 10.0, 50):
        assert advance_gait(stand, float(t)).contact.all()


def test_gait_is_periodic():
    rng = np.random.default_rng(5)
    for name in ("trot", "flying_trot"):
        sched = gait_preset(name)
        for t in rng.uniform(0.0, 5.0, 200):
            a = advance_gait(sched, float(t))
            b = advance_gait(sched, float(t) + sched.cycle_time)
            assert np.array_equal(a.contact, b.contact)
            assert np.allclose(a.phase, b.phase, atol=1e-9)


def test_contact_fraction_matches_duty_factor():
    dt = 1e-3
    for name in ("trot", "flying_trot"):
        sched = gait_preset(name)
        steps = int(round(sched.cycle_time / dt))
        hits = np.zeros(4)
        for i in range(steps):
            hits += advance_gait(sched, i * dt).contact
        frac = hits / steps
        assert np.max(np.abs(frac - sched.duty_factor)) <= dt / sched.cycle_time + 1e-9


def test_phase_is_continuous_within_each_state():
    trot = gait_preset("trot")
    prev = advance_gait(trot, 0.0)
    for i in range(1, 300):
        cur = advance_gait(trot, i * 1e-3)
        for leg in range(4):
            if cur.contact[leg] == prev.contact[leg]:
                d = cur.phase[leg] - prev.phase[leg]
                assert 0.0 < d < 0.02
        prev = cur


def test_contact_plan_rows_match_scheduler():
    trot = gait_preset("trot")
    table = contact_plan(trot, 0.07, 0.03, 10)
    for i in (0, 4, 9):
        expect = advance_gait(trot, 0.07 + i * 0.03).contact
        assert np.array_equal(table.contact[i], expect)
    # at 30 ms per row a 0.15 s half cycle spans exactly five rows
    table0 = contact_plan(trot, 0.0, 0.03, 10)
    assert np.array_equal(table0.contact[:5],
                          np.tile([True, False, False, True], (5, 1)))
    assert np.array_equal(table0.contact[5:],
                          np.tile([False, True, True, False], (5, 1)))
    stand = contact_plan(gait_preset("stand"), 0.0, 0.03, 10)
    assert stand.contact.all()


def test_placement_half_stance_travel():
    hip = np.array([0.2, -0.1, 0.0])
    p = foot_placement_heuristic(hip, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                                 0.0, 0.15, 0.3)
    assert np.allclose(p, hip + [0.075, 0.0, 0.0], atol=1e-12)


def test_placement_velocity_error_correction():
    hip = np.zeros(3)
    p = foot_placement_heuristic(hip, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                                 0.0, 0.15, 0.3)
    assert np.allclose(p, [-0.03, 0.0, 0.0], atol=1e-12)


def test_placement_cross_term_magnitude():
    hip = np.zeros(3)
    p = foot_placement_heuristic(hip, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                                 2.0, 0.0, 0.3)
    # v x omega_cmd = [0, -2, 0]; coefficient sqrt(0.3/9.81) = 0.17487
    exact = 0.5 * np.sqrt(0.3 / 9.81) * np.array([0.0, -2.0, 0.0])
    assert np.allclose(p, exact, atol=1e-12)
    assert abs(p[1] - (-0.1749)) <= 1e-4


def test_placement_is_affine_in_velocity():
    rng = np.random.default_rng(11)
    hip = np.array([0.1, 0.2, 0.0])
    v_cmd = np.array([0.8, -0.2, 0.0])
    for _ in range(50):
        v1 = rng.normal(0, 1, 3)
        v2 = rng.normal(0, 1, 3)
        v1[2] = v2[2] = 0.0
        f = lambda v: foot_placement_heuristic(hip, v, v_cmd, 1.3, 0.15, 0.3)
        lhs = f(v1 + v2) + f(np.zeros(3))
        rhs = f(v1) + f(v2)
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_swing_endpoints_are_exact():
    rng = np.random.default_rng(17)
    for _ in range(100):
        start = rng.normal(0, 0.3, 3)
        target = rng.normal(0, 0.3, 3)
        plan = SwingPlan(start=start, target=target, height=0.08, t_swing=0.15)
        p0, _ = plan.position(0.0)
        p1, _ = plan.position(1.0)
        assert np.max(np.abs(p0 - start)) <= 1e-12
        assert np.max(np.abs(p1 - target)) <= 1e-12


def test_swing_apex_clearance():
    plan = SwingPlan(start=[0.0, 0.0, 0.0], target=[0.2, 0.0, 0.0],
                     height=0.08, t_swing=0.15)
    p, _ = plan.position(0.5)
    assert abs(p[2] - 0.08) <= 1e-12
    # apex clears the higher endpoint
    plan2 = SwingPlan(start=[0.0, 0.0, 0.0], target=[0.2, 0.0, 0.13],
                      height=0.08, t_swing=0.15)
    p2, _ = plan2.position(0.5)
    assert abs(p2[2] - 0.21) <= 1e-12


def test_swing_velocity_matches_finite_differences():
    plan = SwingPlan(start=[0.0, -0.05, 0.02], target=[0.18, 0.03, 0.0],
                     height=0.08, t_swing=0.15)
    h = 1e-7
    for phase in np.linspace(h, 1.0 - h, 100):
        pm, _ = plan.position(phase - h)
        pp, _ = plan.position(phase + h)
        fd = (pp - pm) / (2.0 * h) / plan.t_swing
        _, v = plan.position(phase)
        assert np.max(np.abs(v - fd)) <= 1e-6


def test_replanning_preserves_position_and_velocity():
    for phase in (0.2, 0.45, 0.6, 0.85):
        plan = SwingPlan(start=[0.0, 0.0, 0.0], target=[0.2, 0.05, 0.0],
                         height=0.08, t_swing=0.15)
        p_before, v_before = plan.position(phase)
        plan.replan(phase, [0.26, -0.02, 0.04])
        p_after, v_after = plan.position(phase)
        assert np.max(np.abs(p_after - p_before)) <= 1e-10
        assert np.max(np.abs(v_after - v_before)) <= 1e-8
        p1, _ = plan.position(1.0)
        assert np.max(np.abs(p1 - [0.26, -0.02, 0.04])) <= 1e-10


def test_control_points_bracket_the_curve_endpoints():
    plan = SwingPlan(start=[0.0, 0.0, 0.0], target=[0.2, 0.0, 0.0],
                     height=0.08, t_swing=0.15)
    cp = plan.control_points
    assert abs(cp["x"][0] - 0.0) <= 1e-12 and abs(cp["x"][3] - 0.2) <= 1e-12
    assert len(cp["z"]) == 2
    assert abs(cp["z"][0][0] - 0.0) <= 1e-12
    assert abs(cp["z"][0][3] - 0.08) <= 1e-12
    assert abs(cp["z"][1][3] - 0.0) <= 1e-12


def test_reflection_identity_and_bound_edge():
    cfg = LegConfig(l_abd=0.0838, l_thigh=0.2, l_shank=0.2)
    q = np.array([0.1, 0.6, -1.2])
    out, flagged = apply_reflection(q, np.zeros(3), cfg)
    assert np.array_equal(out, q) and not flagged
    out, flagged = apply_reflection(q, [0.0, -0.3, 0.0], cfg)
    assert np.allclose(out, q + [0.0, -0.3, 0.0]) and not flagged


def test_reflection_clamps_and_flags():
    cfg = LegConfig(l_abd=0.0838, l_thigh=0.2, l_shank=0.2)
    q = np.array([0.1, 0.6, -1.2])
    out, flagged = apply_reflection(q, [0.5, 0.0, 0.0], cfg)
    assert flagged
    assert abs(out[0] - (q[0] + 0.3)) <= 1e-12
    # offset pushing past a joint limit is cut at the limit
    q_edge = np.array([cfg.q_hi[0] - 0.1, 0.6, -1.2])
    out, flagged = apply_reflection(q_edge, [0.3, 0.0, 0.0], cfg)
    assert flagged and out[0] == cfg.q_hi[0]


def test_schedule_validation():
    with pytest.raises(ValueError):
        GaitSchedule(0.0, 0.5, np.zeros(4))
    with pytest.raises(ValueError):
        GaitSchedule(0.3, 0.0, np.zeros(4))
    with pytest.raises(ValueError):
        GaitSchedule(0.3, 0.5, np.array([0.0, 0.5, 1.0, 0.0]))
    with pytest.raises(KeyError):
        gait_preset("gallop")
    with pytest.raises(ValueError):
        advance_gait(gait_preset("trot"), -0.1)
