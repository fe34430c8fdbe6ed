"""One test per acceptance criterion; each prints a [PASS]/[FAIL] line at the criterion's tolerance."""
import time

import numpy as np
import pandas as pd
import pytest

from coachddpc.data import RawRecordSet, Trajectory, build_hankel, ingest
from coachddpc.ddpc import jy_decomposition
from coachddpc.harness import ScenarioConfig, compare, run_closed_loop
from coachddpc.predictor import evaluate_mae, fit, fit_trajectories, predict
from coachddpc.qp import QpStatus, solve_qp
from coachddpc.scenarios import DAY, HOUR, scenario_schedule, recomputed_side_irradiation, simulate_setpoints, \
    synth_raw_records

from conftest import record_acceptance
from oracles import N_D, N_Y, blockwise_ols_phi, enumerate_qp, lti_trajectories

TOL = 1e-6


@pytest.fixture(scope="module")
def march(params, ddpc_config, model):
    cfg = ScenarioConfig(name="march", schedule=scenario_schedule("march"), params=params, ddpc=ddpc_config)
    start = time.perf_counter()
    log_ = run_closed_loop(cfg, "activated", model)
    return log_, time.perf_counter() - start


def test_predictor_matches_blockwise_least_squares():
    rng = np.random.default_rng(2024)
    worst_err, worst_time = 0.0, 0.0
    for _ in range(24):
        rho, T = (int(v) for v in rng.integers(2, 7, size=2))
        trajs = [Trajectory(f"r{i}", 300.0, u=rng.normal(size=160), y=rng.normal(size=(160, 3)),
                            d=rng.normal(size=(160, 5))) for i in range(3)]
        hs = build_hankel(trajs, rho, T)
        start = time.perf_counter()
        model = fit(hs)
        worst_time = max(worst_time, time.perf_counter() - start)
        ref = blockwise_ols_phi(hs.Z, rho, T)
        worst_err = max(worst_err, np.linalg.norm(model.phi - ref) / np.linalg.norm(ref))
    ok = worst_err <= 1e-8 and worst_time < 1.0
    record_acceptance(1, "LQ predictor equals block-wise least squares", ok,
                      f"24 instances, max rel err {worst_err:.2e} <= 1e-8, max fit time {worst_time:.3f} s < 1 s")
    assert ok


def test_noiseless_lti_is_predicted_exactly():
    rng = np.random.default_rng(99)
    trajs = lti_trajectories(rng, n_state=5, n_traj=5, length=400)
    model = fit_trajectories(trajs[:4], rho=6, horizon=6)
    worst = float(evaluate_mae(model, trajs[4:]).per_deck.max())
    ok = worst <= TOL
    record_acceptance(2, "noiseless LTI held-out prediction", ok, f"max MAE over 6 steps {worst:.2e} <= 1e-6")
    assert ok


def test_future_inputs_do_not_leak_backwards(model):
    rng = np.random.default_rng(7)
    T = model.horizon
    failures = 0
    for _ in range(1000):
        z_p, u_f, d_f = rng.normal(20, 3, model.past_size), rng.normal(20, 2, T), rng.normal(size=N_D * T)
        j = int(rng.integers(0, T))
        base = predict(model, z_p, u_f, d_f).reshape(T, N_Y)
        u2, d2 = u_f.copy(), d_f.copy()
        u2[j + 1 :] += rng.normal(size=T - j - 1)
        d2[N_D * (j + 1) :] += rng.normal(size=N_D * (T - j - 1))
        out = predict(model, z_p, u2, d2).reshape(T, N_Y)
        failures += not np.array_equal(out[: j + 1], base[: j + 1])
    record_acceptance(3, "causality under future perturbations", failures == 0, f"{failures}/1000 bit-level changes")
    assert failures == 0


def test_tracking_cost_splits_into_average_and_spread():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 13))
        y = rng.normal(21, 4, 3 * T)
        t_opt = rng.normal(21, 4, T)
        j_y = float(np.sum((y.reshape(T, 3) - t_opt[:, None]) ** 2))
        worst = max(worst, abs(j_y - sum(jy_decomposition(y, t_opt))) / max(1.0, j_y))
    ok = worst <= 1e-10
    record_acceptance(4, "tracking cost identity", ok, f"max scaled gap {worst:.2e} <= 1e-10 on 1000 instances")
    assert ok


def test_qp_solver_against_enumeration(march):
    rng = np.random.default_rng(500)
    worst = 0.0
    not_optimal = 0
    for _ in range(60):
        n, m = int(rng.integers(1, 31)), int(rng.integers(1, 9))
        A = rng.normal(size=(n, n))
        P = A @ A.T + 0.1 * np.eye(n)
        q = 5 * rng.normal(size=n)
        G = rng.normal(size=(m, n))
        h = G @ rng.normal(size=n) + rng.uniform(0, 1, m)
        res = solve_qp(P, q, G, h)
        not_optimal += res.status is not QpStatus.OPTIMAL
        worst = max(worst, float(np.max(np.abs(res.x - enumerate_qp(P, q, G, h)[0]))))
    steps = march[0].step_frame()
    solved = steps[steps.status != "warmup"]
    kkt = float(solved.kkt.max())
    ok = worst <= TOL and not_optimal == 0 and kkt <= TOL and len(solved) > 0
    record_acceptance(5, "QP solver correctness", ok,
                      f"60 random QPs max |x - oracle| {worst:.2e}, {not_optimal} not optimal; "
                      f"{len(solved)} March solves max KKT residual {kkt:.2e} <= 1e-6")
    assert ok


def test_setpoint_constraints_are_hard(march, ddpc_config):
    steps = march[0].step_frame()
    u = steps.u_star.to_numpy()
    band = float(np.max(np.abs(u - steps.t_rule.to_numpy())))
    rate = float(np.max(np.abs(np.diff(u))))
    ok = band <= ddpc_config.setpoint_band + TOL and rate <= ddpc_config.delta_t_max + TOL
    record_acceptance(6, "setpoint band and rate limit over 24 h", ok,
                      f"max |u - rule| {band:.6f} <= {ddpc_config.setpoint_band} K, "
                      f"max |du| {rate:.6f} <= {ddpc_config.delta_t_max} K")
    assert ok


def test_march_setpoint_follows_the_day(march, ddpc_config):
    steps = march[0].step_frame()
    hour = steps.t.to_numpy() / HOUR
    u, rule, b = steps.u_star.to_numpy(), steps.t_rule.to_numpy(), ddpc_config.setpoint_band
    gaps = {}
    for label, lo, hi, bound in (("morning 06-08 to lower", 6, 8, rule - b), ("midday 13-15 to upper", 13, 15, rule + b),
                                 ("evening 22-24 to lower", 22, 24, rule - b)):
        w = (hour >= lo) & (hour < hi)
        gaps[label] = float(np.max(np.abs(u[w] - bound[w])))
    ok = all(g <= 0.3 for g in gaps.values())
    record_acceptance(7, "March setpoint rides the comfort band", ok,
                      ", ".join(f"{k} max gap {v:.3f} K" for k, v in gaps.items()) + " (each <= 0.3 K)")
    assert ok


@pytest.mark.parametrize("scenario", ["hot", "cold"])
def test_energy_savings(runs, ddpc_config, scenario):
    a, b = runs.get(scenario, "activated"), runs.get(scenario, "deactivated")
    cmp = compare(a, b, runs.scenario(scenario).steady_start, t_max=ddpc_config.t_max)
    ok = cmp.savings_pct >= 5.0 and cmp.violation_a <= 0.1
    record_acceptance(8, f"{scenario}-day savings", ok,
                      f"{cmp.savings_pct:.2f} % >= 5 %, hourly violation {cmp.violation_a:.4f} K <= 0.1 K")
    assert ok


def test_prediction_error_on_simulated_data(model, training_data):
    _, val = training_data
    report = evaluate_mae(model, val)
    mae30 = float(report.per_step[-1])
    rng = np.random.default_rng(5)
    trajs = lti_trajectories(rng, n_state=6, n_traj=4, length=300)
    clean = float(evaluate_mae(fit_trajectories(trajs[:3], 12, 6), trajs[3:]).per_deck.max())
    ok = mae30 <= 0.5 and clean <= TOL and np.isclose(report.sample_period * model.horizon, 1800.0)
    record_acceptance(9, "multistep prediction error", ok,
                      f"noisy 30-min MAE {mae30:.3f} K <= 0.5 K, noiseless max MAE {clean:.2e} <= 1e-6")
    assert ok


@pytest.fixture(scope="module")
def raw_day(params, tmp_path_factory):
    sched = scenario_schedule("march", DAY, margin=HOUR)
    t, u, y, d = simulate_setpoints(params, sched, lambda k, _t, rule: rule, DAY)
    traj = Trajectory("truth", 300.0, u=u, y=y, d=d, t=t)
    path = tmp_path_factory.mktemp("raw")
    synth_raw_records(traj, sched, start="2024-03-01T00:00:00Z").to_dir(path)
    return traj, RawRecordSet.from_dir(path)


def test_pipeline_round_trip(raw_day):
    traj, raw = raw_day
    (seg,) = ingest(raw, 300.0)[0][300.0]
    epoch = pd.Timestamp("2024-03-01T00:00:00Z").timestamp()
    exact = (np.array_equal(seg.t, epoch + traj.t) and np.array_equal(seg.u, traj.u) and np.array_equal(seg.y, traj.y)
             and all(np.array_equal(seg.d[:, i], traj.d[:, i]) for i in (0, 1, 3, 4)))
    side = np.array_equal(seg.d[:, 2], recomputed_side_irradiation(raw))

    hvac = raw.hvac.drop(index=100)
    hvac.loc[250:259, "mode"] = "slumber"
    weather = raw.weather.drop(index=range(150, 155))
    gapped = RawRecordSet(hvac.reset_index(drop=True), weather.reset_index(drop=True), raw.trips)
    by_period, table = ingest(gapped, 300.0, min_length=18, downsample_factors=[2])
    lengths = [len(t) for t in by_period[300.0]], [len(t) for t in by_period[600.0]]
    rows = table.set_index("period_s")
    counts = (int(rows.loc[300.0, "n_trajectories"]), int(rows.loc[600.0, "n_trajectories"]))
    means = (float(rows.loc[300.0, "mean_length"]), float(rows.loc[600.0, "mean_length"]))
    ok = (exact and side and lengths == ([100, 51, 95, 28], [50, 25, 47]) and counts == (4, 3)
          and np.isclose(means[0], 68.5, rtol=0, atol=1e-12) and np.isclose(means[1], 122 / 3, rtol=0, atol=1e-12))
    record_acceptance(10, "raw CSV round trip and gap summary", ok,
                      f"exact channels {exact}, side irradiation {side}; #T {counts} (expected (4, 3)), "
                      f"#D ({means[0]:.3f}, {means[1]:.3f}) (expected (68.500, 40.667))")
    assert ok


def test_runtime_envelope(march):
    log_, seconds = march
    steps = log_.step_frame()
    solved = steps[steps.status != "warmup"]
    slowest = float(solved.solve_ms.max())
    ok = seconds < 60.0 and slowest < 50.0 and len(steps) == 288
    record_acceptance(11, "runtime envelope", ok,
                      f"24 h run {seconds:.1f} s < 60 s with {len(steps)} control steps, "
                      f"slowest solve {slowest:.2f} ms < 50 ms")
    assert ok
