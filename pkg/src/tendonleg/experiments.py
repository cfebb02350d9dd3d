"""Task suite: paired open- vs closed-loop trials, sweeps, refinement study.

Every task returns an ``ExperimentReport``. Trials are independent; trial
``i`` of a task with master seed ``s`` always draws its trajectory from
``trial_seed(s, i)``, so running with more worker processes changes nothing
but wall time.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

from tendonleg.controller import (CLOSED, DT_CTRL, OPEN, FeedbackGains, collect_babbling,
                                  delay_ticks_for, experience_samples, run_episode)
from tendonleg.inverse_map import InverseMap, refine, train
from tendonleg.plant import (STANDING_POSTURE, PlantParams, gantry_params, leg_drop,
                             weighted_params)
from tendonleg.records import RunRecord
from tendonleg.stats import paired_test
from tendonleg.trajectories import (PERIOD_GRID, KinematicTrajectory, constant_posture,
                                    generate_point_to_point, generate_sinusoid, hold_mask,
                                    random_cyclical)

TASKS = ("cyclical", "point-to-point", "period-sweep", "gantry", "posture-weight",
         "refine", "delay-sweep", "gain-sweep")

SUBSTANTIAL_DEPTH = 0.01      # foot 1 cm below the ground line at the nominal posture
MILD_DEPTH = 0.002
DELAY_GRID_MS = (0, 10, 20, 30, 50, 70, 100)
GAIN_SCALES = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)
SWEEP_PERIOD = 2.5            # period at which the sweep's paired test is headlined

# a cycle clears the ground if the foot is airborne for at least this share
# of the samples where the desired foot is above the ground line
CLEARANCE_SHARE = 0.5
# joint-limit saturation: within this of a limit, sustained this long
LIMIT_BAND = 0.02
COLLAPSE_SECONDS = 1.0
# closed-loop run counts as unstable above this multiple of its open reference
INSTABILITY_FACTOR = 10.0
# holds are scored after the first second, once the transient has died out
HOLD_SETTLE = 1.0
# steps smaller than this (rad) are too small for rise/overshoot
MIN_STEP = 0.1

PLATEAU_TOL_SWEEP = 0.10
PLATEAU_TOL_REFINE = 0.05
REFINE_TASK_EPOCHS = 20
REFINE_INITIAL_EPOCHS = 2000


def trial_seed(master: int, index: int, stream: int = 0) -> int:
    """Seed for trial ``index``; independent of how trials are scheduled."""
    return int(np.random.SeedSequence([int(master), int(stream), int(index)]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# setup and parallel map


@dataclass
class Setup:
    """What every trial needs: plant variants, the map and the default gains."""

    params: PlantParams
    net: InverseMap
    gains: FeedbackGains = field(default_factory=FeedbackGains)
    dt: float = DT_CTRL
    plants: dict = field(default_factory=dict)

    def plant(self, name: str) -> PlantParams:
        return self.params if name == "air" else self.plants[name]

    def limits(self):
        return self.params.q_min, self.params.q_max


_WORKER_SETUP: Setup | None = None


def _init_worker(setup):
    global _WORKER_SETUP
    _WORKER_SETUP = setup


def _call_in_worker(fn, item):
    return fn(_WORKER_SETUP, item)


def parallel_map(fn, setup, items, jobs: int = 1) -> list:
    """``[fn(setup, item) for item in items]``, optionally over processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(setup, item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(setup,)) as pool:
        return list(pool.map(partial(_call_in_worker, fn), items))


# ---------------------------------------------------------------------------
# trajectories and per-run metrics


def make_trajectory(spec: tuple, setup: Setup) -> KinematicTrajectory:
    kind = spec[0]
    lim = setup.limits()
    if kind == "cyclical":
        return random_cyclical(spec[1], dt=setup.dt, limits=lim)
    if kind == "point-to-point":
        return generate_point_to_point(seed=spec[1], dt=setup.dt, limits=lim)
    if kind == "sinusoid":
        return generate_sinusoid(spec[1], dt=setup.dt, limits=lim, phase=spec[2])
    if kind == "posture":
        return constant_posture(spec[1], spec[2], dt=setup.dt)
    raise ValueError(f"unknown trajectory kind {kind!r}")


def desired_foot_height(traj: KinematicTrajectory, params: PlantParams) -> np.ndarray:
    """Foot height along the desired trajectory with the chassis at rest."""
    L1, L2 = params.link_lengths
    q1, q2 = traj.q[:, 0], traj.q[:, 1]
    return params.chassis_height - (L1 * np.cos(q1) + L2 * np.cos(q1 + q2))


def swing_clearance(foot_height, desired_height, cycle_length: int,
                    share: float = CLEARANCE_SHARE, min_swing: float = 0.0) -> tuple[float, int]:
    """Fraction of cycles in which the foot is airborne for at least ``share``
    of the desired swing (samples where the desired foot is above ground).

    Cycles whose desired apex stays below ``min_swing`` ask for no real lift
    and are not scored. Returns (fraction, number of cycles scored)."""
    n_cycles = len(foot_height) // cycle_length
    cleared = []
    for i in range(n_cycles):
        sl = slice(i * cycle_length, (i + 1) * cycle_length)
        swing = desired_height[sl] > 0.0
        if not swing.any() or desired_height[sl].max() < min_swing:
            continue
        cleared.append(np.mean(foot_height[sl][swing] > 0.0) >= share)
    return (float(np.mean(cleared)) if cleared else float("nan")), len(cleared)


def contact_depth(params: PlantParams, posture=STANDING_POSTURE) -> float:
    """How far below the ground line the foot sits at ``posture`` with the
    chassis at its rest height."""
    return leg_drop(params, posture) - params.chassis_height


def step_metrics(record: RunRecord, traj: KinematicTrajectory, min_step: float = MIN_STEP):
    """Median rise time (10 to 90 %, s) and overshoot (% of step) over the
    ramp-and-hold segments of a point-to-point run."""
    rises, overs = [], []
    n = len(record)
    for seg in traj.meta.get("segments", []):
        start, end = seg["ramp_start"], min(seg["hold_end"], n)
        if end - start < 2:
            continue
        for j in range(2):
            y0, y1 = seg["from"][j], seg["to"][j]
            step = y1 - y0
            if abs(step) < min_step:
                continue
            s = (record.q_p[start:end, j] - y0) / step
            above10 = np.nonzero(s >= 0.1)[0]
            above90 = np.nonzero(s >= 0.9)[0]
            if len(above10) and len(above90):
                rises.append((above90[0] - above10[0]) * record.dt)
            overs.append(max(0.0, float(s.max()) - 1.0) * 100.0)
    rise = float(np.median(rises)) if rises else float("nan")
    over = float(np.median(overs)) if overs else float("nan")
    return rise, over, len(overs) - len(rises)


def saturation_run(q, q_min, q_max, band: float = LIMIT_BAND) -> int:
    """Longest run of samples with some joint within ``band`` of a limit."""
    sat = np.any((q <= np.asarray(q_min) + band) | (q >= np.asarray(q_max) - band), axis=1)
    best = cur = 0
    for s in sat:
        cur = cur + 1 if s else 0
        best = max(best, cur)
    return best


@dataclass(frozen=True)
class RunSpec:
    condition: str
    mode: str
    gain_scale: float = 1.0
    delay_ticks: int = 0
    plant: str = "air"
    net: str = "default"


def _run_one(setup: Setup, traj: KinematicTrajectory, spec: RunSpec, seed: int, net=None) -> dict:
    params = setup.plant(spec.plant)
    gains = setup.gains.scaled(spec.gain_scale)
    rec = run_episode(traj, params, net or setup.net, gains, spec.mode, spec.delay_ticks,
                      seed=seed)
    out = rec.summary()
    out.update(condition=spec.condition, gain_scale=spec.gain_scale, plant=spec.plant)
    kind = traj.label
    if kind == "point-to-point":
        mask = hold_mask(traj, int(round(HOLD_SETTLE / traj.dt)))[:len(rec)]
        err = rec.q_d[mask] - rec.q_p[mask]
        out["hold_rmse"] = float(np.sqrt(np.mean(err**2))) if len(err) else float("nan")
        out["rise_time"], out["overshoot"], out["steps_not_reached"] = step_metrics(rec, traj)
    if params.chassis_mode == "gantry" and "cycle_length" in traj.meta:
        hd = desired_foot_height(traj, params)[:len(rec)]
        out["clearance"], out["cycles_scored"] = swing_clearance(
            rec.foot_height, hd, traj.meta["cycle_length"],
            min_swing=max(0.0, contact_depth(params)))
    if kind == "posture":
        dev = np.abs(rec.q_p - rec.q_d)
        out["mean_deviation"] = [float(v) for v in dev.mean(axis=0)]
        out["final_deviation"] = [float(v) for v in dev[-1]]
        longest = saturation_run(rec.q_p, params.q_min, params.q_max) * rec.dt
        out["saturation_s"] = longest
        out["collapsed"] = bool(longest > COLLAPSE_SECONDS)
    out["flagged"] = bool(out["failed"] or out.get("collapsed", False))
    return out


def _paired_trial(setup: Setup, item) -> list[dict]:
    index, tseed, traj_spec, runs = item
    traj = make_trajectory(traj_spec, setup)
    results = []
    for spec in runs:
        r = _run_one(setup, traj, spec, tseed)
        r["trial"] = index
        r["trajectory_seed"] = tseed
        results.append(r)
    return results


# ---------------------------------------------------------------------------
# report


def _clean(x):
    """JSON-ready copy with non-finite floats turned into None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class ExperimentReport:
    task: str
    seed: int
    n_trials: int
    settings: dict = field(default_factory=dict)
    trials: list = field(default_factory=list)
    tests: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean({"task": self.task, "seed": self.seed, "n_trials": self.n_trials,
                       "settings": self.settings, "summary": self.summary,
                       "tests": self.tests, "curves": self.curves, "trials": self.trials})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def condition(self, name: str, key: str = "rmse", include_flagged: bool = False):
        rows = sorted((t for t in self.trials if t["condition"] == name), key=lambda t: t["trial"])
        return np.array([t[key] for t in rows if include_flagged or not t["flagged"]], float)

    def write(self, directory) -> Path:
        """report.json, trials.csv and one CSV per curve."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(self.to_json())
        keys = sorted({k for t in self.trials for k in t})
        with open(directory / "trials.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for t in self.trials:
                w.writerow([json.dumps(_clean(t.get(k))) if isinstance(t.get(k), (list, dict))
                            else t.get(k, "") for k in keys])
        for name, curve in self.curves.items():
            with open(directory / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(curve["columns"])
                for row in curve["rows"]:
                    w.writerow(["" if v is None else v for v in _clean(row)])
        return directory


def describe(values) -> dict:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if len(v) == 0:
        return {"n": 0, "mean": None, "sd": None, "median": None}
    return {"n": int(len(v)), "mean": float(v.mean()), "sd": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "median": float(np.median(v))}


def compare(trials: list, cond_a: str, cond_b: str, key: str = "rmse") -> dict:
    """Paired test of ``cond_a`` vs ``cond_b`` over trials where neither run
    is flagged. Pairs are matched on trial index (same trajectory seed)."""
    a = {t["trial"]: t for t in trials if t["condition"] == cond_a}
    b = {t["trial"]: t for t in trials if t["condition"] == cond_b}
    common = sorted(set(a) & set(b))
    keep = [i for i in common if not (a[i]["flagged"] or b[i]["flagged"])
            and np.isfinite(a[i][key]) and np.isfinite(b[i][key])]
    out = {"a": cond_a, "b": cond_b, "key": key, "n_pairs": len(common),
           "n_excluded": len(common) - len(keep)}
    if len(keep) < 6:
        out.update(p_value=None, a_lower=None, note="too few valid pairs")
        return out
    res = paired_test([a[i][key] for i in keep], [b[i][key] for i in keep])
    out.update(res.as_dict())
    out["a_lower"] = res.a_lower()
    return out


def _condition_stats(trials, names, keys=("rmse",)) -> dict:
    out = {}
    for name in names:
        rows = [t for t in trials if t["condition"] == name]
        ok = [t for t in rows if not t["flagged"]]
        entry = {"n": len(rows), "n_flagged": len(rows) - len(ok)}
        for key in keys:
            entry[key] = describe([t[key] for t in ok if t.get(key) is not None])
        joints = np.array([t["rmse_joint"] for t in ok]) if ok else np.zeros((0, 2))
        entry["rmse_joint_mean"] = joints.mean(axis=0).tolist() if len(joints) else None
        out[name] = entry
    return out


def _flatten(results: list[list[dict]]) -> list[dict]:
    return [r for trial in results for r in trial]


# ---------------------------------------------------------------------------
# tasks


def _paired_task(setup, task, traj_kind, n_trials, seed, jobs, runs, stream=0):
    items = [(i, trial_seed(seed, i, stream), (traj_kind, trial_seed(seed, i, stream)), runs)
             for i in range(n_trials)]
    return _flatten(parallel_map(_paired_trial, setup, items, jobs))


OPEN_CLOSED = (RunSpec("open", OPEN), RunSpec("closed", CLOSED))


def task_cyclical(setup: Setup, n_trials: int = 50, seed: int = 0, jobs: int = 1) -> ExperimentReport:
    """Random cyclical patterns in the air, both modes on each pattern."""
    trials = _paired_task(setup, "cyclical", "cyclical", n_trials, seed, jobs, OPEN_CLOSED)
    stats = _condition_stats(trials, ("open", "closed"))
    test = compare(trials, "closed", "open")
    oj = stats["open"]["rmse_joint_mean"]
    summary = {"conditions": stats,
               "closed_beats_open": bool(test.get("a_lower") and test["p_value"] < 0.01),
               "open_distal_exceeds_proximal": bool(oj is not None and oj[1] > oj[0])}
    bars = [[name, stats[name]["rmse"]["mean"], stats[name]["rmse"]["sd"],
             stats[name]["rmse"]["median"]] for name in ("open", "closed")]
    return ExperimentReport("cyclical", seed, n_trials, {"cycle_period": 2.5, "n_cycles": 10},
                            trials, {"closed_vs_open": test}, summary,
                            {"bars": {"columns": ["condition", "mean", "sd", "median"], "rows": bars}})


def task_point_to_point(setup: Setup, n_trials: int = 50, seed: int = 0,
                        jobs: int = 1) -> ExperimentReport:
    """Ramp-and-hold sequences; also scores error over the settled holds."""
    trials = _paired_task(setup, "point-to-point", "point-to-point", n_trials, seed, jobs,
                          OPEN_CLOSED)
    stats = _condition_stats(trials, ("open", "closed"), ("rmse", "hold_rmse"))
    tests = {"closed_vs_open": compare(trials, "closed", "open"),
             "hold_closed_vs_open": compare(trials, "closed", "open", "hold_rmse")}
    summary = {"conditions": stats,
               "closed_beats_open": bool(tests["closed_vs_open"].get("a_lower")
                                         and tests["closed_vs_open"]["p_value"] < 0.01)}
    bars = [[name, stats[name]["rmse"]["mean"], stats[name]["rmse"]["sd"],
             stats[name]["hold_rmse"]["mean"]] for name in ("open", "closed")]
    return ExperimentReport("point-to-point", seed, n_trials,
                            {"n_points": 10, "hold_duration": 2.5, "hold_settle": HOLD_SETTLE},
                            trials, tests, summary,
                            {"bars": {"columns": ["condition", "mean", "sd", "hold_mean"],
                                      "rows": bars}})


def relative_change(values) -> float:
    """Largest relative departure of later values from the first."""
    v = np.asarray(values, dtype=float)
    return float(np.max(np.abs(v - v[0])) / abs(v[0]))


def is_non_improving(periods, errors, late_from: float = 3.0) -> bool:
    """True if the curve does not keep improving with period: either its
    minimum is not at the longest period, or it gains under 10 % from
    ``late_from`` to the longest period."""
    periods = np.asarray(periods, float)
    errors = np.asarray(errors, float)
    if int(np.argmin(errors)) != len(errors) - 1:
        return True
    e_late = errors[np.argmin(np.abs(periods - late_from))]
    return bool((e_late - errors[-1]) / e_late < 0.10)


def task_period_sweep(setup: Setup, periods=PERIOD_GRID, n_trials: int = 50, seed: int = 0,
                      jobs: int = 1) -> ExperimentReport:
    """Sine/cosine cycles over a grid of periods; trials differ in start phase."""
    periods = tuple(float(T) for T in periods)
    if not periods:
        raise ValueError("period grid is empty")
    items = []
    for k, T in enumerate(periods):
        for i in range(n_trials):
            ts = trial_seed(seed, i)
            phase = float(np.random.default_rng(ts).uniform(0.0, 2 * np.pi))
            runs = tuple(replace(r, condition=f"{r.condition}@{T:g}") for r in OPEN_CLOSED)
            items.append((i, ts, ("sinusoid", T, phase), runs))
    trials = _flatten(parallel_map(_paired_trial, setup, items, jobs))
    for t in trials:
        t["period"] = float(t["condition"].split("@")[1])
    rows, tests = [], {}
    for T in periods:
        st = _condition_stats(trials, (f"open@{T:g}", f"closed@{T:g}"))
        o, c = st[f"open@{T:g}"]["rmse"], st[f"closed@{T:g}"]["rmse"]
        rows.append([T, o["mean"], o["sd"], o["median"], c["mean"], c["sd"], c["median"]])
        tests[f"T={T:g}"] = compare(trials, f"closed@{T:g}", f"open@{T:g}")
    arr = np.array([[np.nan if v is None else v for v in r] for r in rows], float)
    open_mean, closed_mean = arr[:, 1], arr[:, 4]
    late = [i for i, T in enumerate(periods) if T >= 3.0]
    long_ = [i for i, T in enumerate(periods) if T >= 2.0]
    summary = {
        "closed_not_worse_long_periods": bool(np.all(closed_mean[long_] <= open_mean[long_])),
        "closed_plateau_change": relative_change(closed_mean[late]) if late else None,
        "closed_plateau_level": float(np.mean(closed_mean[late])) if late else None,
        "closed_plateau_in_reference_band": bool(late and 0.1 <= np.mean(closed_mean[late]) <= 0.2),
        "open_non_monotone_or_non_improving": is_non_improving(periods, open_mean),
        "open_argmin_period": periods[int(np.argmin(open_mean))],
        "n_flagged": int(sum(t["flagged"] for t in trials)),
    }
    if SWEEP_PERIOD in periods:
        tk = tests[f"T={SWEEP_PERIOD:g}"]
        summary["closed_beats_open_at_2_5"] = bool(tk.get("a_lower") and tk["p_value"] < 0.01)
    curve = {"columns": ["period", "open_mean", "open_sd", "open_median", "closed_mean",
                         "closed_sd", "closed_median"], "rows": rows}
    return ExperimentReport("period-sweep", seed, n_trials, {"periods": list(periods)}, trials,
                            tests, summary, {"error_vs_period": curve})


def task_gantry(setup: Setup, n_trials: int = 50, seed: int = 0, jobs: int = 1,
                depth: float = SUBSTANTIAL_DEPTH, mild_depth: float | None = MILD_DEPTH) -> ExperimentReport:
    """Cyclical patterns with the foot pressed into the ground under a gantry."""
    plants = {"contact": gantry_params(setup.params, depth)}
    runs = [RunSpec("open", OPEN, plant="contact"), RunSpec("closed", CLOSED, plant="contact")]
    if mild_depth is not None:
        plants["mild"] = gantry_params(setup.params, mild_depth)
        runs += [RunSpec("open-mild", OPEN, plant="mild"), RunSpec("closed-mild", CLOSED, plant="mild"),
                 RunSpec("open-air", OPEN), RunSpec("closed-air", CLOSED)]
    local = replace(setup, plants={**setup.plants, **plants})
    trials = _paired_task(local, "gantry", "cyclical", n_trials, seed, jobs, tuple(runs))
    names = [r.condition for r in runs]
    stats = _condition_stats(trials, names)
    for name in ("open", "closed"):
        stats[name]["clearance"] = describe([t["clearance"] for t in trials
                                             if t["condition"] == name and not t["flagged"]])
    tests = {"closed_vs_open": compare(trials, "closed", "open")}
    summary = {"conditions": stats,
               "clearance_open": stats["open"]["clearance"]["mean"],
               "clearance_closed": stats["closed"]["clearance"]["mean"],
               "closed_beats_open": bool(tests["closed_vs_open"].get("a_lower")
                                         and tests["closed_vs_open"]["p_value"] < 0.01)}
    if mild_depth is not None:
        for mode in ("open", "closed"):
            air = stats[f"{mode}-air"]["rmse"]["mean"]
            summary[f"mild_over_air_{mode}"] = stats[f"{mode}-mild"]["rmse"]["mean"] / air
    bars = [[n, stats[n]["rmse"]["mean"], stats[n]["rmse"]["sd"],
             stats[n].get("clearance", {}).get("mean")] for n in names]
    return ExperimentReport("gantry", seed, n_trials,
                            {"depth": depth, "mild_depth": mild_depth,
                             "clearance_share": CLEARANCE_SHARE},
                            trials, tests, summary,
                            {"bars": {"columns": ["condition", "rmse_mean", "rmse_sd",
                                                  "clearance_mean"], "rows": bars}})


def task_posture_weight(setup: Setup, duration: float = 10.0, seed: int = 0,
                        weight_factor: float | None = None, posture=STANDING_POSTURE,
                        jobs: int = 1) -> ExperimentReport:
    """Hold the standing posture with the gantry removed and the chassis weighted."""
    params = setup.params
    if weight_factor is not None:
        params = params.replace(weight_factor=float(weight_factor))
    local = replace(setup, plants={**setup.plants, "weighted": weighted_params(params, posture)})
    runs = (RunSpec("open", OPEN, plant="weighted"), RunSpec("closed", CLOSED, plant="weighted"))
    item = (0, int(seed), ("posture", tuple(float(v) for v in posture), float(duration)), runs)
    trials = _paired_trial(local, item)
    by = {t["condition"]: t for t in trials}
    summary = {"weight_factor": params.weight_factor,
               "loaded_chassis_mass": params.chassis_mass * params.weight_factor,
               "open_collapsed": by["open"]["collapsed"],
               "closed_collapsed": by["closed"]["collapsed"],
               "closed_mean_deviation": by["closed"]["mean_deviation"],
               "open_mean_deviation": by["open"]["mean_deviation"],
               "n_flagged": sum(t["flagged"] for t in trials)}
    rows = [[t["condition"], *t["mean_deviation"], *t["final_deviation"], t["collapsed"]]
            for t in trials]
    return ExperimentReport("posture-weight", seed, 1,
                            {"duration": duration, "posture": list(posture),
                             "collapse_seconds": COLLAPSE_SECONDS, "limit_band": LIMIT_BAND},
                            trials, {}, summary,
                            {"deviation": {"columns": ["condition", "mean_dev1", "mean_dev2",
                                                       "final_dev1", "final_dev2", "collapsed"],
                                           "rows": rows}})


def task_delay_sweep(setup: Setup, delays_ms=DELAY_GRID_MS, n_trials: int = 50, seed: int = 0,
                     jobs: int = 1) -> ExperimentReport:
    """Closed loop on delayed angle feedback, plus the open-loop reference."""
    delays_ms = tuple(float(d) for d in delays_ms)
    if any(d < 0 or d > 200 for d in delays_ms):
        raise ValueError("delays must lie within [0, 200] ms")
    runs = [RunSpec("open", OPEN)]
    for d in delays_ms:
        runs.append(RunSpec(f"closed@{d:g}", CLOSED, delay_ticks=delay_ticks_for(d / 1000.0, setup.dt)))
    trials = _paired_task(setup, "delay-sweep", "cyclical", n_trials, seed, jobs, tuple(runs))
    ref = {t["trial"]: t["rmse"] for t in trials if t["condition"] == "open"}
    for t in trials:
        if t["condition"] != "open":
            t["unstable"] = bool(t["rmse"] > INSTABILITY_FACTOR * ref[t["trial"]])
            t["flagged"] = t["flagged"] or t["unstable"]
    ostats = _condition_stats(trials, ("open",))["open"]["rmse"]
    rows, tests, medians = [], {}, []
    for d in delays_ms:
        name = f"closed@{d:g}"
        st = _condition_stats(trials, (name,))[name]
        rows.append([d, delay_ticks_for(d / 1000.0, setup.dt), st["rmse"]["mean"], st["rmse"]["sd"],
                     st["rmse"]["median"], ostats["median"], st["n_flagged"]])
        medians.append(st["rmse"]["median"])
        tests[f"delay={d:g}"] = compare(trials, name, "open")
    med = np.array([np.nan if m is None else m for m in medians])
    within = [i for i, d in enumerate(delays_ms) if d <= 100]
    summary = {"open_median": ostats["median"],
               "closed_below_open_all": bool(np.all(med[within] < ostats["median"])),
               "median_non_decreasing": bool(np.all(np.diff(med) >= 0)),
               "n_unstable": int(sum(t.get("unstable", False) for t in trials))}
    curve = {"columns": ["delay_ms", "delay_ticks", "closed_mean", "closed_sd", "closed_median",
                         "open_median", "n_flagged"], "rows": rows}
    return ExperimentReport("delay-sweep", seed, n_trials, {"delays_ms": list(delays_ms)}, trials,
                            tests, summary, {"error_vs_delay": curve})


def task_gain_sweep(setup: Setup, scales=GAIN_SCALES, n_trials: int = 50, seed: int = 0,
                    jobs: int = 1) -> ExperimentReport:
    """Scale K_P and K_I together; score error, rise time and overshoot on
    ramp-and-hold sequences."""
    scales = tuple(float(s) for s in scales)
    runs = [RunSpec("open", OPEN)] + [RunSpec(f"closed@x{s:g}", CLOSED, gain_scale=s) for s in scales]
    trials = _paired_task(setup, "gain-sweep", "point-to-point", n_trials, seed, jobs, tuple(runs))
    names = ["open"] + [f"closed@x{s:g}" for s in scales]
    stats = _condition_stats(trials, names, ("rmse", "rise_time", "overshoot"))
    rows, tests = [], {}
    for s in scales:
        name = f"closed@x{s:g}"
        st = stats[name]
        rows.append([s, s * setup.gains.kp[0], s * setup.gains.ki[0], st["rmse"]["mean"],
                     st["rmse"]["median"], st["rise_time"]["median"], st["overshoot"]["median"],
                     st["n_flagged"]])
        if s > 0:
            tests[f"x{s:g}"] = compare(trials, name, "open")
    pos = [r for r in rows if r[0] > 0]
    rise = np.array([np.nan if r[5] is None else r[5] for r in pos])
    over = np.array([np.nan if r[6] is None else r[6] for r in pos])
    zero_rows = [t for t in trials if t["condition"] == "closed@x0"]
    open_rows = {t["trial"]: t["rmse"] for t in trials if t["condition"] == "open"}
    summary = {"conditions": stats,
               "all_beat_open_p05": bool(all(t.get("a_lower") and t["p_value"] < 0.05
                                             for t in tests.values())),
               "rise_time_decreasing": bool(np.all(np.diff(rise) < 0)),
               "overshoot_increasing": bool(np.all(np.diff(over) > 0)),
               "zero_gain_matches_open": bool(zero_rows) and all(
                   t["rmse"] == open_rows[t["trial"]] for t in zero_rows)}
    curve = {"columns": ["scale", "kp", "ki", "rmse_mean", "rmse_median", "rise_time_median",
                         "overshoot_median", "n_flagged"], "rows": rows}
    return ExperimentReport("gain-sweep", seed, n_trials,
                            {"scales": list(scales), "base_gains": setup.gains.as_dict(),
                             "min_step": MIN_STEP}, trials, tests, summary,
                            {"gain_sensitivity": curve})


# ---------------------------------------------------------------------------
# refinement from experience

REFINE_CONDITIONS = ("open/own", "closed/own", "open/closed-map", "closed/open-map")


def _refine_block(setup: Setup, item) -> list[dict]:
    """One trajectory: fresh short babbling, then repeated runs with a
    warm-start refinement after each. Open- and closed-loop maps learn from
    their own runs; the switched conditions run each mode on the other's map."""
    index, bseed, n_reps, babble_duration, initial_epochs, refine_epochs = item
    params = setup.params
    data, _, _ = collect_babbling(params, babble_duration, seed=bseed, dt_ctrl=setup.dt)
    net0 = train(data, seed=bseed, epochs=initial_epochs)
    traj = random_cyclical(bseed, dt=setup.dt, limits=setup.limits())
    maps = {OPEN: net0, CLOSED: net0}
    cumulative = {OPEN: data, CLOSED: data}
    curves = {c: [] for c in REFINE_CONDITIONS}
    flags = {c: [] for c in REFINE_CONDITIONS}
    for rep in range(n_reps):
        records = {}
        for mode in (OPEN, CLOSED):
            records[mode] = run_episode(traj, params, maps[mode], setup.gains, mode, seed=bseed)
        switched = {
            "open/closed-map": run_episode(traj, params, maps[CLOSED], setup.gains, OPEN, seed=bseed),
            "closed/open-map": run_episode(traj, params, maps[OPEN], setup.gains, CLOSED, seed=bseed),
        }
        for name, rec in (("open/own", records[OPEN]), ("closed/own", records[CLOSED]),
                          *switched.items()):
            curves[name].append(rec.rmse)
            flags[name].append(rec.failed)
        if rep == n_reps - 1:
            break
        for mode in (OPEN, CLOSED):
            cumulative[mode] = cumulative[mode].extend(experience_samples(records[mode], rep))
            maps[mode] = refine(maps[mode], cumulative[mode], seed=trial_seed(bseed, rep, 1),
                                epochs=refine_epochs)
    return [{"trial": index, "trajectory_seed": bseed, "condition": c, "curve": curves[c],
             "failed_reps": flags[c], "rmse": curves[c][-1], "flagged": bool(any(flags[c])),
             "failed": bool(any(flags[c]))} for c in REFINE_CONDITIONS]


def plateau_repetition(curve, tol: float = PLATEAU_TOL_REFINE) -> int:
    """First 1-based repetition after which the curve stays within ``tol``
    (relative) of its value there."""
    c = np.asarray(curve, dtype=float)
    for k in range(len(c)):
        if relative_change(c[k:]) < tol:
            return k + 1
    return len(c)


def task_refinement(setup: Setup, n_trajectories: int = 10, n_repetitions: int = 25,
                    babble_duration: float = 60.0, seed: int = 0, jobs: int = 1,
                    initial_epochs: int = REFINE_INITIAL_EPOCHS,
                    refine_epochs: int = REFINE_TASK_EPOCHS) -> ExperimentReport:
    items = [(i, trial_seed(seed, i), n_repetitions, babble_duration, initial_epochs, refine_epochs)
             for i in range(n_trajectories)]
    trials = _flatten(parallel_map(_refine_block, setup, items, jobs))
    rows, curves = [], {}
    for c in REFINE_CONDITIONS:
        mat = np.array([t["curve"] for t in trials if t["condition"] == c and not t["flagged"]])
        curves[c] = (mat.mean(axis=0), mat.std(axis=0, ddof=1) if len(mat) > 1 else 0 * mat[0])
    for rep in range(n_repetitions):
        rows.append([rep + 1] + [v for c in REFINE_CONDITIONS
                                 for v in (curves[c][0][rep], curves[c][1][rep])])
    cm, cs = curves["closed/own"]
    om, _ = curves["open/own"]
    k6 = min(5, n_repetitions - 1)
    closed_rep = plateau_repetition(cm)
    open_rep = plateau_repetition(om)
    switched = compare(trials, "open/closed-map", "open/own")
    summary = {
        "n_trajectories": n_trajectories, "n_repetitions": n_repetitions,
        "refine_epochs": refine_epochs, "babble_duration": babble_duration,
        "closed_change_after_6": relative_change(cm[k6:]),
        "closed_sd_change_after_6": relative_change(cs[k6:]) if np.all(cs[k6:] > 0) else None,
        "closed_plateau_repetition": closed_rep, "open_plateau_repetition": open_rep,
        "closed_plateau_level": float(cm[closed_rep - 1:].mean()),
        "open_plateau_level": float(om[open_rep - 1:].mean()),
        "closed_plateaus_by_6": bool(relative_change(cm[k6:]) < PLATEAU_TOL_REFINE),
        "n_flagged": int(sum(t["flagged"] for t in trials)),
    }
    summary["open_later_or_higher"] = bool(open_rep > closed_rep
                                           or summary["open_plateau_level"] > summary["closed_plateau_level"])
    summary["switched_map_significant"] = bool(switched.get("a_lower") and switched["p_value"] < 0.01)
    columns = ["repetition"] + [f"{c}_{s}" for c in REFINE_CONDITIONS for s in ("mean", "sd")]
    return ExperimentReport("refine", seed, n_trajectories,
                            {"n_repetitions": n_repetitions, "babble_duration": babble_duration,
                             "initial_epochs": initial_epochs, "refine_epochs": refine_epochs},
                            trials, {"switched_map": switched,
                                     "closed_vs_open_final": compare(trials, "closed/own", "open/own")},
                            summary, {"error_vs_repetition": {"columns": columns, "rows": rows}})


def run_task(name: str, setup: Setup, seed: int = 0, jobs: int = 1, **kw) -> ExperimentReport:
    """Dispatch by task name (see ``TASKS``)."""
    table = {"cyclical": task_cyclical, "point-to-point": task_point_to_point,
             "period-sweep": task_period_sweep, "gantry": task_gantry,
             "posture-weight": task_posture_weight, "refine": task_refinement,
             "delay-sweep": task_delay_sweep, "gain-sweep": task_gain_sweep}
    if name not in table:
        raise ValueError(f"unknown task {name!r}; valid tasks: {', '.join(TASKS)}")
    return table[name](setup, seed=seed, jobs=jobs, **kw)


def default_setup(params: PlantParams | None = None, babble_duration: float = 300.0,
                  babble_seed: int = 0, train_seed: int = 0, epochs: int = 2000,
                  gains: FeedbackGains | None = None) -> Setup:
    """Babble, train and bundle the result."""
    params = params or PlantParams()
    data, _, _ = collect_babbling(params, babble_duration, seed=babble_seed)
    net = train(data, seed=train_seed, epochs=epochs)
    return Setup(params, net, gains or FeedbackGains())


__all__ = ["TASKS", "Setup", "ExperimentReport", "run_task", "trial_seed", "compare",
           "task_cyclical", "task_point_to_point", "task_period_sweep", "task_gantry",
           "task_posture_weight", "task_delay_sweep", "task_gain_sweep", "task_refinement",
           "swing_clearance", "step_metrics", "saturation_run", "leg_drop", "default_setup"]
