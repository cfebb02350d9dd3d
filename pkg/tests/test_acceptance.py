"""Acceptance criteria 1-8.

Each test records one PASS/FAIL line (collected into the terminal summary)
before asserting, so a failing criterion still reports what was measured.
Trial counts default to 50; TENDONLEG_TRIALS overrides them and
TENDONLEG_REFINE_TRAJECTORIES sets the refinement study's trajectory count
(default 10, the desk-scale concession). TENDONLEG_REPORT_DIR, if set,
receives every task report.
"""
import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, jobs
from tendonleg.cli import main as cli_main
from tendonleg.controller import CLOSED, OPEN, FeedbackGains, collect_babbling, run_episode
from tendonleg.experiments import (Setup, task_cyclical, task_delay_sweep, task_gain_sweep,
                                   task_gantry, task_period_sweep, task_point_to_point,
                                   task_posture_weight, task_refinement)
from tendonleg.inverse_map import InverseMap, SampleSet, gradient_check, refine
from tendonleg.plant import Plant, PlantParams, initial_state, mechanical_energy
from tendonleg.records import rmse
from tendonleg.stats import paired_test
from tendonleg.trajectories import (KinematicTrajectory, generate_point_to_point,
                                    random_cyclical)

pytestmark = pytest.mark.acceptance

N_TRIALS = int(os.environ.get("TENDONLEG_TRIALS", 50))
N_REFINE = int(os.environ.get("TENDONLEG_REFINE_TRAJECTORIES", 10))
SEED = 0
FIXTURES = Path(__file__).parent / "fixtures"


def record(number: int, ok: bool, title: str, detail: str):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _fmt_p(test) -> str:
    p = test.get("p_value")
    return "n/a" if p is None else f"{p:.2g}"


@pytest.fixture(scope="module")
def setup(params, default_map):
    return Setup(params, default_map, FeedbackGains())


@pytest.fixture(scope="module")
def reports():
    cache = {}
    out = os.environ.get("TENDONLEG_REPORT_DIR")

    def get(name, fn, *args, **kw):
        if name not in cache:
            t0 = time.perf_counter()
            cache[name] = fn(*args, seed=SEED, jobs=jobs(), **kw)
            cache[name].settings["wall_seconds"] = round(time.perf_counter() - t0, 1)
            if out:
                cache[name].write(Path(out) / name)
        return cache[name]
    return get


# ---------------------------------------------------------------------------


def test_criterion_1_closed_beats_open(setup, reports):
    rows = {
        "cyclical": reports("cyclical", task_cyclical, setup, n_trials=N_TRIALS)
        .tests["closed_vs_open"],
        "point-to-point": reports("point-to-point", task_point_to_point, setup, n_trials=N_TRIALS)
        .tests["closed_vs_open"],
        "period T=2.5": reports("period-sweep", task_period_sweep, setup, n_trials=N_TRIALS)
        .tests["T=2.5"],
        "gantry": reports("gantry", task_gantry, setup, n_trials=N_TRIALS).tests["closed_vs_open"],
    }
    ok = {k: bool(t.get("a_lower")) and t["p_value"] is not None and t["p_value"] < 0.01
          for k, t in rows.items()}
    detail = "; ".join(f"{k}: n={t.get('n', 0)} closed {t.get('median_a', float('nan')):.4f} "
                       f"vs open {t.get('median_b', float('nan')):.4f} p={_fmt_p(t)}"
                       for k, t in rows.items())
    record(1, all(ok.values()), "closed-loop median lower, p < 0.01", detail)
    assert all(ok.values()), ok


def test_criterion_2_distal_error_accumulates(setup, reports):
    rep = reports("cyclical", task_cyclical, setup, n_trials=N_TRIALS)
    prox, dist = rep.summary["conditions"]["open"]["rmse_joint_mean"]
    ok = dist > prox
    record(2, ok, "open-loop distal RMSE > proximal RMSE",
           f"n={rep.n_trials} proximal {prox:.4f} distal {dist:.4f}")
    assert ok


def test_criterion_3_period_sweep_shape(setup, reports):
    rep = reports("period-sweep", task_period_sweep, setup, n_trials=N_TRIALS)
    s = rep.summary
    ok_not_worse = s["closed_not_worse_long_periods"]
    ok_plateau = s["closed_plateau_change"] < 0.10
    ok_open = s["open_non_monotone_or_non_improving"]
    ok = ok_not_worse and ok_plateau and ok_open
    curve = "; ".join(f"T={r[0]:g} open {r[1]:.4f} closed {r[4]:.4f}"
                      for r in rep.curves["error_vs_period"]["rows"])
    record(3, ok, "closed <= open for T >= 2, closed plateau, open non-improving",
           f"not-worse {ok_not_worse}, plateau change {s['closed_plateau_change']:.3f}, "
           f"open argmin T={s['open_argmin_period']:g} ({ok_open}); plateau level "
           f"{s['closed_plateau_level']:.4f} rad vs reference band 0.1-0.2 (informational) | {curve}")
    assert ok


def test_criterion_4_contact_robustness(setup, reports):
    frozen = json.loads((FIXTURES / "clearance.json").read_text())
    gantry = reports("gantry", task_gantry, setup, n_trials=N_TRIALS,
                     depth=frozen["contact_depth"])
    assert gantry.settings["clearance_share"] == frozen["share"]
    c_open, c_closed = gantry.summary["clearance_open"], gantry.summary["clearance_closed"]
    posture = reports("posture-weight", task_posture_weight, setup)
    dev = posture.summary["closed_mean_deviation"]
    checks = {"closed clearance": c_closed >= frozen["closed_min"],
              "open clearance": c_open <= frozen["open_max"],
              "open collapsed": posture.summary["open_collapsed"],
              "closed holds": (not posture.summary["closed_collapsed"]) and max(dev) < 0.15}
    record(4, all(checks.values()), "gantry clearance and weighted posture",
           f"clearance closed {c_closed:.3f} (>= {frozen['closed_min']}) open {c_open:.3f} "
           f"(<= {frozen['open_max']}); open collapsed {posture.summary['open_collapsed']}, "
           f"closed deviation {dev[0]:.3f}/{dev[1]:.3f} rad; failing: "
           f"{[k for k, v in checks.items() if not v] or 'none'}")
    assert all(checks.values()), checks


def test_criterion_5_refinement(setup, reports):
    rep = reports("refine", task_refinement, setup, n_trajectories=N_REFINE)
    s = rep.summary
    sw = rep.tests["switched_map"]
    checks = {"closed plateau by 6": s["closed_plateaus_by_6"],
              "open later or higher": s["open_later_or_higher"],
              "switched map": s["switched_map_significant"]}
    record(5, all(checks.values()), "refinement plateau and switched-map test",
           f"n={s['n_trajectories']} trajectories x {s['n_repetitions']} reps, "
           f"{s['refine_epochs']} epochs/refinement; closed change after rep 6 "
           f"{s['closed_change_after_6']:.3f} (< 0.05), plateau rep closed "
           f"{s['closed_plateau_repetition']} open {s['open_plateau_repetition']}, level closed "
           f"{s['closed_plateau_level']:.4f} open {s['open_plateau_level']:.4f}; switched "
           f"{sw.get('median_a', float('nan')):.4f} vs own {sw.get('median_b', float('nan')):.4f} "
           f"p={_fmt_p(sw)}; failing: {[k for k, v in checks.items() if not v] or 'none'}")
    assert all(checks.values()), checks


def test_criterion_6_delay_robustness(setup, reports):
    rep = reports("delay-sweep", task_delay_sweep, setup, n_trials=N_TRIALS)
    s = rep.summary
    ok = s["closed_below_open_all"] and s["median_non_decreasing"]
    curve = ", ".join(f"{r[0]:g} ms {r[4]:.4f}" for r in rep.curves["error_vs_delay"]["rows"])
    record(6, ok, "closed median below open at every delay <= 100 ms, non-decreasing",
           f"open median {s['open_median']:.4f}; closed medians {curve}; "
           f"unstable runs {s['n_unstable']}")
    assert ok


def test_criterion_7_gain_sensitivity(setup, reports):
    rep = reports("gain-sweep", task_gain_sweep, setup, n_trials=N_TRIALS)
    s = rep.summary
    beat = {k: bool(rep.tests[k].get("a_lower")) and rep.tests[k]["p_value"] is not None
            and rep.tests[k]["p_value"] < 0.05 for k in ("x0.25", "x0.5", "x2", "x4")}
    checks = {"beats open": all(beat.values()), "rise time decreasing": s["rise_time_decreasing"],
              "overshoot increasing": s["overshoot_increasing"]}
    curve = "; ".join(f"x{r[0]:g} rmse {r[4]:.4f} rise {r[5]:.3f}s overshoot {r[6]:.2f}%"
                      for r in rep.curves["gain_sensitivity"]["rows"] if r[0] > 0)
    record(7, all(checks.values()), "gain scalings beat open; rise down, overshoot up",
           f"p: {', '.join(f'{k} {_fmt_p(rep.tests[k])}' for k in beat)} | {curve}; failing: "
           f"{[k for k, v in checks.items() if not v] or 'none'}")
    assert all(checks.values()), checks


def _energy_drift(p, q0, seconds):
    plant = Plant(p, initial_state(p, q0))
    e0 = mechanical_energy(plant.state, p)
    e_rest = mechanical_energy(initial_state(p, [0.0, 0.0]), p)
    plant.advance([0, 0, 0], int(round(seconds / p.dt_phys)))
    return abs(mechanical_energy(plant.state, p) - e0) / (e0 - e_rest)


def _fd(x, dt):
    return (np.roll(x, -1, 0) - np.roll(x, 1, 0)) / (2 * dt)


def test_criterion_8_property_bundle(params, default_map, tmp_path):
    t0 = time.perf_counter()
    checks = {}

    passive = dict(joint_damping=0.0, q_min=(-1e3, -1e3), q_max=(1e3, 1e3), limit_damping=0.0)
    checks["energy drift"] = _energy_drift(PlantParams(**passive), [1.2, -0.8], 10.0) < 1e-3
    coarse = _energy_drift(PlantParams(dt_phys=0.004, **passive), [2.0, -1.5], 10.0)
    fine = _energy_drift(PlantParams(dt_phys=0.002, **passive), [2.0, -1.5], 10.0)
    checks["order 4"] = coarse / fine >= 8.0

    data, _, _ = collect_babbling(params, 5.0, seed=1)
    checks["backprop"] = gradient_check(default_map, data, n_weights=40) < 1e-5

    traj = random_cyclical(3)
    a = run_episode(traj, params, default_map, mode=OPEN)
    b = run_episode(traj, params, default_map, FeedbackGains(kp=0, ki=0), CLOSED)
    checks["zero gains = open"] = np.array_equal(a.q_p, b.q_p) and a.rmse == b.rmse
    c = run_episode(traj, params, default_map, delay_ticks=0, use_delay_line=True)
    d = run_episode(traj, params, default_map, delay_ticks=0, use_delay_line=False)
    checks["delay 0"] = np.array_equal(c.q_p, d.q_p) and np.array_equal(c.dq_c, d.dq_c)

    # drop the provenance fingerprint so the short babbling set is accepted
    warm = default_map.with_weights(default_map.weights)
    warm.meta = {}
    checks["warm start identity"] = np.array_equal(refine(warm, data, epochs=0).weights,
                                                   default_map.weights)

    traj_ok = True
    for seed in range(1000):
        tr = random_cyclical(seed, n_cycles=2)
        L = tr.meta["cycle_length"]
        traj_ok &= bool(np.all(tr.q >= params.q_min) and np.all(tr.q <= params.q_max)
                        and np.max(np.abs(tr.q[0] - tr.q[L])) < 1e-6
                        and np.max(np.abs(tr.dq - _fd(tr.q, tr.dt))) < 1e-9
                        and np.max(np.abs(tr.ddq - _fd(tr.dq, tr.dt))) < 1e-9)
    checks["trajectories x1000"] = traj_ok

    q = np.zeros((50, 2))
    off = np.column_stack([np.full(50, 0.1), np.full(50, 0.2)])
    checks["rmse oracle"] = (rmse(q, q)[1] == 0.0
                             and math.isclose(rmse(q, q + 0.1)[1], 0.1, rel_tol=1e-12)
                             and math.isclose(rmse(q, off)[1], math.sqrt(0.025), rel_tol=1e-12))
    checks["exact p"] = math.isclose(paired_test(np.zeros(10), np.arange(1, 11.0)).p_value,
                                     2 / 1024, rel_tol=1e-12)

    default_map.save(tmp_path / "m.json")
    data.to_csv(tmp_path / "s.csv")
    p2p = generate_point_to_point(n_points=2, hold_duration=0.5, seed=1)
    p2p.to_csv(tmp_path / "t.csv")
    checks["round trips"] = (
        np.array_equal(InverseMap.load(tmp_path / "m.json").weights, default_map.weights)
        and np.array_equal(SampleSet.from_csv(tmp_path / "s.csv").inputs, data.inputs)
        and np.allclose(KinematicTrajectory.from_csv(tmp_path / "t.csv").q, p2p.q, atol=1e-12))

    hashes = []
    for k in range(2):
        out = tmp_path / f"b{k}"
        assert cli_main(["babble", "--duration", "2", "--seed", "4", "--out", str(out)]) == 0
        hashes.append(hashlib.sha256((out / "babbling.csv").read_bytes()).hexdigest())
    checks["determinism"] = hashes[0] == hashes[1]

    elapsed = time.perf_counter() - t0
    checks["under 60 s"] = elapsed < 60.0
    record(8, all(checks.values()), "property bundle",
           f"{sum(checks.values())}/{len(checks)} hold in {elapsed:.1f} s; coarse/fine energy "
           f"drift ratio {coarse / fine:.1f}; failing: "
           f"{[k for k, v in checks.items() if not v] or 'none'}")
    assert all(checks.values()), checks
