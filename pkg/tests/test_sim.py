import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coachddpc.config import load_params
from coachddpc.errors import IntegrationError, ValidationError
from coachddpc.scenarios import MARCH, day_schedule
from coachddpc.sim import (
    CHASSIS,
    NODE_INDEX,
    ROOM,
    CoachState,
    DisturbanceSample,
    DisturbanceSchedule,
    HeatDistribution,
    distribute_heat,
    door_exchange,
    exchange_flows,
    ground_radiation,
    occupancy_heat,
    simulate_open_loop,
    solar_components,
    state_derivative,
    step,
)

ZERO_Q = np.zeros(6)
# hypothesis tests cannot take function-scoped fixtures
PARAMS = load_params()


def quiet(t_amb, **kw):
    return DisturbanceSample(t_amb=t_amb, **kw)


class TestSolar:
    def test_sun_at_horizon_is_all_top(self):
        assert solar_components(800.0, 0.0, math.pi / 2, 0.0) == pytest.approx((800.0, 0.0), abs=1e-9)

    def test_zenith_parallel_to_train_has_no_top_or_side(self):
        q_gt, q_gs = solar_components(800.0, math.pi / 2, 1.0, 1.0)
        assert q_gt == pytest.approx(0.0, abs=1e-9)
        assert q_gs == pytest.approx(0.0, abs=1e-9)

    def test_oblique_case(self):
        q_gt, q_gs = solar_components(500.0, math.pi / 6, math.pi / 2, 0.0)
        assert q_gt == pytest.approx(500 * math.sqrt(3) / 2, abs=1e-3)
        assert q_gs == pytest.approx(250.0, abs=1e-9)

    @given(st.floats(0, 1200), st.floats(-4, 4), st.floats(-7, 7), st.floats(-7, 7))
    def test_components_nonnegative_and_bounded(self, q_g, a, b, th):
        q_gt, q_gs = solar_components(q_g, a, b, th)
        assert 0 <= q_gt <= q_g + 1e-9
        assert 0 <= q_gs <= q_g + 1e-9


class TestBoundaryTerms:
    def test_ground_off_below_threshold(self, params):
        assert ground_radiation(15.0, 25.0, params.thermal) == 0.0
        assert ground_radiation(20.0, 10.0, params.thermal) == 0.0

    def test_ground_balanced_when_chassis_matches_track(self, params):
        assert ground_radiation(25.0, 35.0, params.thermal) == pytest.approx(0.0, abs=1e-9)

    def test_ground_stefan_boltzmann_value(self, params):
        expected = 3e-7 * ((30 + 10 + 273.15) ** 4 - (20 + 273.15) ** 4)
        assert ground_radiation(30.0, 20.0, params.thermal) == pytest.approx(expected, rel=1e-12)

    def test_occupancy_empty_and_full(self, params):
        assert np.array_equal(occupancy_heat(0.0, params.thermal), np.zeros(3))
        np.testing.assert_allclose(occupancy_heat(1.0, params.thermal), [4000.0] * 3, rtol=1e-12)

    def test_occupancy_ten_passengers(self, params):
        assert occupancy_heat(10 / 120, params.thermal).sum() == pytest.approx(1000.0)

    def test_occupancy_out_of_range(self, params):
        with pytest.raises(ValidationError):
            occupancy_heat(1.2, params.thermal)

    def test_door(self, params):
        th = params.thermal.replace(door_coeff=50.0)
        assert door_exchange(10.0, 22.0, True, th) == pytest.approx(-600.0)
        assert door_exchange(10.0, 22.0, False, th) == 0.0


class TestDistribution:
    def test_identity_passes_through(self):
        q = np.arange(1.0, 7.0)
        np.testing.assert_array_equal(distribute_heat(q, HeatDistribution.identity()), q)

    def test_single_column(self):
        lam = np.eye(6)
        lam[:, 0] = [0.8, 0.1, 0, 0.1, 0, 0]
        out = distribute_heat([1000, 0, 0, 0, 0, 0], HeatDistribution(lam))
        np.testing.assert_allclose(out, [800, 100, 0, 100, 0, 0])

    def test_default_conserves_total(self, params):
        out = distribute_heat([100] * 6, params.distribution)
        assert out.sum() == pytest.approx(600.0, abs=1e-9)

    @given(st.lists(st.floats(-1e4, 1e4), min_size=6, max_size=6))
    def test_conservation_property(self, q):
        dist = PARAMS.distribution
        assert distribute_heat(q, dist).sum() == pytest.approx(sum(q), abs=1e-6)

    @pytest.mark.parametrize("bad", [np.full((6, 6), 0.2), -np.eye(6), np.eye(5)])
    def test_invalid_matrices_rejected(self, bad):
        with pytest.raises(ValidationError):
            HeatDistribution(bad)


class TestDerivative:
    def test_isothermal_equilibrium(self, params):
        state = CoachState.uniform(15.0)
        np.testing.assert_allclose(state_derivative(state, np.zeros(6), quiet(15.0), params.thermal), 0, atol=1e-15)

    def test_input_linearity(self, params):
        th = params.thermal
        mc = th.mass["room_up"] * th.heat_capacity["room_up"]
        base = state_derivative(CoachState.uniform(15.0), np.zeros(6), quiet(15.0), th)
        q = np.zeros(6)
        q[0] = mc
        bumped = state_derivative(CoachState.uniform(15.0), q, quiet(15.0), th)
        delta = bumped - base
        assert delta[NODE_INDEX["room_up"]] == pytest.approx(1.0, abs=1e-12)
        assert np.all(delta[1:] == 0)

    def test_ledger_antisymmetric(self, params, rng):
        temps = rng.uniform(0, 40, 9)
        ledger = exchange_flows(temps, params.thermal)
        assert np.array_equal(ledger[:, 0], -ledger[:, 1])


class TestStep:
    def test_equilibrium_preserved(self, params):
        out = step(CoachState.uniform(15.0), ZERO_Q, quiet(15.0), 10.0, params.thermal, params.distribution)
        np.testing.assert_allclose(out.as_vector(), 15.0, atol=1e-10)

    def test_heating_raises_lower_deck(self, params):
        start = CoachState.uniform(15.0)
        out = step(start, [0, 0, 5000, 0, 0, 0], quiet(15.0), 10.0, params.thermal, params.distribution)
        assert out.t_room[2] > 15.0

    def test_step_halving(self, params):
        sched = day_schedule(MARCH)
        d = sched.sample(12 * 3600)
        state = CoachState(np.array([18.0, 19.0, 17.0]), np.array([18.5, 19, 17.5]), np.array([10.0, 12, 9]))
        q = [2000, 1000, 2000, 300, 150, 300]
        one = step(state, q, d, 10.0, params.thermal, params.distribution)
        half = step(state, q, d, 5.0, params.thermal, params.distribution)
        two = step(half, q, d, 5.0, params.thermal, params.distribution)
        assert np.max(np.abs(one.as_vector() - two.as_vector())) <= 1e-6

    def test_sanity_band_names_node(self, params):
        with pytest.raises(IntegrationError, match="room_up"):
            step(CoachState.uniform(20.0), [1e9, 0, 0, 0, 0, 0], quiet(20.0), 10.0, params.thermal,
                 HeatDistribution.identity())

    def test_nonpositive_dt(self, params):
        with pytest.raises(ValidationError):
            step(CoachState.uniform(20.0), ZERO_Q, quiet(20.0), 0.0, params.thermal, params.distribution)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 20), min_size=9, max_size=9), st.floats(0, 1), st.floats(0, 40))
    def test_no_new_extremes_without_sources(self, temps, frac, speed):
        # ambient at most 20 degC keeps the track radiation off
        p = PARAMS
        temps = np.array(temps)
        t_amb = temps.min() + frac * (temps.max() - temps.min())
        out = step(CoachState.from_vector(temps), ZERO_Q, DisturbanceSample(t_amb, speed=speed), 10.0,
                   p.thermal, p.distribution).as_vector()
        assert out.max() <= temps.max() + 1e-9
        assert out.min() >= temps.min() - 1e-9

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-2000, 2000), st.floats(-2000, 2000))
    def test_input_superposition(self, a, b):
        """Without ground radiation the one-step map is affine in the heat input."""
        p = PARAMS
        s = CoachState(np.array([20.0, 21, 19]), np.array([20.0, 20, 20]), np.array([10.0, 11, 9]))
        d = DisturbanceSample(t_amb=5.0, q_g=300, alpha=0.5, beta=1.0, occupancy_pct=0.2, speed=20)
        e1 = np.array([1.0, 0, 0, 0, 0, 0])
        e2 = np.array([0, 0, 1.0, 0, 0, 1.0])

        def f(q):
            return step(s, q, d, 10.0, p.thermal, p.distribution).as_vector()

        lhs = f(a * e1 + b * e2) - f(ZERO_Q)
        rhs = a * (f(e1) - f(ZERO_Q)) + b * (f(e2) - f(ZERO_Q))
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestSchedule:
    def test_csv_round_trip(self, tmp_path):
        sched = day_schedule(MARCH, duration=3600, step=300)
        path = tmp_path / "s.csv"
        sched.to_csv(path)
        back = DisturbanceSchedule.from_csv(path)
        for t in sched.time_s:
            np.testing.assert_array_equal(back.predictor_vector(t), sched.predictor_vector(t))

    def test_zero_order_hold(self):
        sched = day_schedule(MARCH, duration=3600, step=300)
        assert sched.sample(310).t_amb == sched.sample(300).t_amb

    def test_open_loop_includes_initial_state(self, params):
        sched = day_schedule(MARCH, duration=7200)
        traj = simulate_open_loop(CoachState.uniform(18.0), sched, 0.0, 1800, 10.0, params.thermal, 300)
        assert traj.shape == (7, 9)
        np.testing.assert_array_equal(traj[0], np.full(9, 18.0))

    def test_room_and_chassis_slices(self):
        assert (ROOM.start, ROOM.stop, CHASSIS.start, CHASSIS.stop) == (0, 3, 6, 9)
