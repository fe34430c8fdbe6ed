import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coachddpc.config import load_params
from coachddpc.errors import ConfigurationError
from coachddpc.hvac import (
    ADMISSIBLE,
    DEFAULT_RULE_TABLE,
    HvacController,
    HvacMode,
    HvacState,
    PidGains,
    PidMemory,
    RuleTable,
    floor_wall_heating,
    hvac_state_update,
    hvac_substate_update,
    pid_step,
    rule_based_setpoint,
)
from coachddpc.scenarios import MARCH, day_schedule
from coachddpc.sim import ROOM, CoachState, _drive, distribute_heat, rk4_vector

from oracles import reference_pid

PARAMS = load_params()
ALL_STATES = list(HvacState)


class TestRule:
    @pytest.mark.parametrize("x,y", DEFAULT_RULE_TABLE.breakpoints)
    def test_knots(self, x, y):
        assert rule_based_setpoint(x) == y

    def test_clamps(self):
        assert rule_based_setpoint(-40.0) == 20.0
        assert rule_based_setpoint(50.0) == 26.0

    def test_midway(self):
        assert rule_based_setpoint(10.0) == pytest.approx(21.5)

    def test_empty_table(self):
        with pytest.raises(ConfigurationError):
            rule_based_setpoint(10.0, RuleTable(()))

    @given(st.floats(-60, 60), st.floats(-60, 60))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert rule_based_setpoint(lo) <= rule_based_setpoint(hi)


class TestStateMachine:
    def test_off_mode(self):
        assert hvac_state_update(HvacMode.OFF, HvacState.HEATING, [10] * 3, 21, 0) is HvacState.OFF_STATE

    def test_far_below_preheats(self):
        assert hvac_state_update(HvacMode.REGULAR, HvacState.HEATING, [15] * 3, 21, 0) is HvacState.PREHEATING

    def test_far_above_precools(self):
        assert hvac_state_update(HvacMode.REGULAR, HvacState.COOLING, [27] * 3, 21, 30) is HvacState.PRECOOLING

    def test_at_setpoint_keeps_heating(self):
        assert hvac_state_update(HvacMode.REGULAR, HvacState.HEATING, [21] * 3, 21, 0) is HvacState.HEATING

    def test_hysteresis_band(self):
        # 0.3 K too warm is inside the 0.5 K dead band, 0.7 K is not
        assert hvac_state_update(HvacMode.REGULAR, HvacState.HEATING, [21.3] * 3, 21, 0) is HvacState.HEATING
        assert hvac_state_update(HvacMode.REGULAR, HvacState.HEATING, [21.7] * 3, 21, 0) is HvacState.COOLING

    def test_decks_disagree(self):
        assert hvac_state_update(HvacMode.REGULAR, HvacState.HEATING, [19.5, 21, 22.5], 21, 0) is HvacState.MIXED

    @given(st.sampled_from(list(HvacMode)), st.sampled_from(ALL_STATES),
           st.lists(st.floats(-20, 50), min_size=3, max_size=3), st.floats(15, 28), st.floats(-30, 40))
    def test_admissible(self, mode, state, t_room, t_ref, t_amb):
        assert hvac_state_update(mode, state, t_room, t_ref, t_amb) in ADMISSIBLE[mode]

    @given(st.lists(st.floats(-20, 50), min_size=3, max_size=3), st.floats(15, 28), st.floats(-30, 40))
    def test_off_absorbs(self, t_room, t_ref, t_amb):
        assert hvac_state_update(HvacMode.OFF, HvacState.OFF_STATE, t_room, t_ref, t_amb) is HvacState.OFF_STATE


class TestSubstate:
    def test_empty_coach_circulates(self):
        assert hvac_substate_update(HvacState.HEATING, [20] * 3, 12, 0.0).kind == "circulated"

    def test_full_coach_uses_outside_air(self):
        assert hvac_substate_update(HvacState.HEATING, [20] * 3, 12, 1.0).kind == "outside"

    def test_off_state_circulates(self):
        sub = hvac_substate_update(HvacState.OFF_STATE, [20] * 3, 12, 1.0)
        assert sub.kind == "circulated" and sub.outside_fraction == 0.0

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_more_people_more_fresh_air(self, a, b):
        lo, hi = sorted((a, b))
        f = [hvac_substate_update(HvacState.COOLING, [22] * 3, 25, o).outside_fraction for o in (lo, hi)]
        assert f[0] <= f[1]


def gains(kp=500.0, ki=0.0, kd=0.0, q_max=6000.0, rate=1e6, aw=None):
    return PidGains(kp=kp, ki=ki, kd=kd, q_min=-q_max, q_max=q_max, rate_limit=rate, aw_gain=aw)


class TestPid:
    def test_zero_error(self):
        out, _ = pid_step(gains(ki=2.0, kd=5.0), PidMemory(), 21.0, [21.0] * 3, 10.0, HvacState.MIXED)
        np.testing.assert_array_equal(out, 0.0)

    def test_proportional(self):
        out, _ = pid_step(gains(), PidMemory(), 21.0, [19.0] * 3, 10.0, HvacState.HEATING)
        np.testing.assert_allclose(out, 1000.0)

    def test_saturation_against_reference(self):
        kp, ki, q_max, dt = 500.0, 2.0, 3000.0, 10.0
        g = gains(kp=kp, ki=ki, q_max=q_max)
        errors = [10.0, 10.0, 8.0, 5.0, 1.0, -0.5, -0.5]
        mem = PidMemory()
        outs = []
        for e in errors:
            out, mem = pid_step(g, mem, 21.0, [21.0 - e] * 3, dt, HvacState.MIXED)
            outs.append(out[0])
        ref = reference_pid(kp, ki, 0.0, -q_max, q_max, 1e6, 1 / kp, errors, dt)
        np.testing.assert_allclose(outs, ref, rtol=0, atol=1e-9)
        assert outs[0] == q_max

    def test_back_calculation_reduces_integrator(self):
        g = gains(kp=500.0, ki=2.0, q_max=3000.0)
        _, mem = pid_step(g, PidMemory(), 21.0, [11.0] * 3, 10.0, HvacState.HEATING)
        # plain integration would add dt*e = 100; the 2000 W saturation gap over kp removes 4 K per second
        assert mem.integrator[0] == pytest.approx(10.0 * (10.0 + (3000.0 - 5000.0) / 500.0))
        assert mem.integrator[0] < 100.0

    def test_heating_state_blocks_cooling(self):
        out, _ = pid_step(gains(), PidMemory(), 21.0, [23.0] * 3, 10.0, HvacState.HEATING)
        np.testing.assert_array_equal(out, 0.0)

    def test_deterministic(self):
        g = PARAMS.hvac.pid
        mem = PidMemory(integrator=[1.0, 2.0, 3.0], prev_error=[0.1, 0.2, 0.3], prev_output=[100, 50, 10])
        a = pid_step(g, mem, 21.0, [20.1, 20.5, 22.0], 10.0, HvacState.MIXED)
        b = pid_step(g, mem, 21.0, [20.1, 20.5, 22.0], 10.0, HvacState.MIXED)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1].integrator, b[1].integrator)

    @settings(max_examples=60)
    @given(st.sampled_from(ALL_STATES), st.lists(st.floats(-15, 15), min_size=3, max_size=3),
           st.lists(st.floats(-6000, 6000), min_size=3, max_size=3), st.lists(st.floats(-50, 50), min_size=3, max_size=3))
    def test_limits_and_rate(self, state, err, prev_out, integ):
        g = PARAMS.hvac.pid
        lo, hi = g.limits(state)
        prev = np.clip(prev_out, lo, hi)
        mem = PidMemory(integrator=integ, prev_error=[0, 0, 0], prev_output=prev)
        out, _ = pid_step(g, mem, 21.0, 21.0 - np.array(err), 10.0, state)
        assert np.all(out >= lo) and np.all(out <= hi)
        assert np.all(np.abs(out - prev) <= g.rate_limit * 10.0 + 1e-9)


class TestFloorWall:
    def test_cooling_off(self):
        np.testing.assert_array_equal(floor_wall_heating(HvacState.COOLING, -10, PARAMS.hvac.floor_wall), 0.0)

    def test_preheating_maxima(self):
        fw = PARAMS.hvac.floor_wall
        np.testing.assert_array_equal(floor_wall_heating(HvacState.PREHEATING, 30, fw), fw.maxima)

    @pytest.mark.parametrize("x,frac", [(-20.0, 0.6), (-5.0, 0.4), (5.0, 0.2), (15.0, 0.0)])
    def test_heating_knots(self, x, frac):
        fw = PARAMS.hvac.floor_wall
        np.testing.assert_allclose(floor_wall_heating(HvacState.HEATING, x, fw), frac * fw.maxima)

    @given(st.floats(-40, 40), st.floats(-40, 40))
    def test_non_increasing(self, a, b):
        lo, hi = sorted((a, b))
        fw = PARAMS.hvac.floor_wall
        assert np.all(floor_wall_heating(HvacState.HEATING, lo, fw) >= floor_wall_heating(HvacState.HEATING, hi, fw))


def test_closed_loop_regulation(params):
    d = day_schedule(MARCH).sample(8 * 3600)
    t_ref, dt = 21.0, 10.0
    temps = CoachState.uniform(16.0).as_vector()
    hvac = HvacController(params.hvac, HvacMode.REGULAR)
    for _ in range(int(2 * 3600 / dt)):
        q_hvac, q_fw, vent = hvac.update(t_ref, temps[ROOM], d.t_amb, d.occupancy_pct, dt)
        q_act = distribute_heat(np.concatenate([q_hvac, q_fw]), params.distribution)
        temps = rk4_vector(temps, q_act, _drive(d, params.thermal, vent), dt, params.thermal)
    assert np.mean(np.abs(temps[ROOM] - t_ref)) < 0.5
