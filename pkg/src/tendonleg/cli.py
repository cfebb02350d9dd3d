"""Command-line entry point: babble, train, run, task.

Settings resolve as CLI flag > ``--config`` file > built-in default. The
config file is flat ``key = value``; plant parameters use their field names
(``joint_damping = 0.12``) and everything else uses the flag name with
underscores (``delay_ms = 20``). Unknown keys are errors.

Exit codes: 0 success, 1 config or input error, 2 simulation divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from tendonleg import __version__
from tendonleg.config import ConfigError, content_hash, file_hash, read_flat_config
from tendonleg.controller import CLOSED, OPEN, FeedbackGains, collect_babbling, delay_ticks_for, run_episode
from tendonleg.experiments import TASKS, Setup, run_task
from tendonleg.inverse_map import InverseMap, ProvenanceError, SampleSet, refine, train
from tendonleg.plant import STANDING_POSTURE, PlantParams, gantry_params, weighted_params
from tendonleg.trajectories import (constant_posture, generate_point_to_point, generate_sinusoid,
                                    random_cyclical)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2

PLANT_KEYS = tuple(f.name for f in dataclasses.fields(PlantParams))

# every non-plant key with its default; flags share these names
DEFAULTS = {
    "seed": 0,
    "jobs": 0,                 # 0 = all available cores
    "out": "",
    # babble / train
    "duration": 300.0,
    "data": "",
    "epochs": 2000,
    "warm_start": "",
    # run
    "map": "",
    "mode": CLOSED,
    "kp": 4.0,
    "ki": 1.0,
    "clamp": 0.5,
    "delay_ms": 0.0,
    "trajectory": "cyclical",
    "traj_seed": 0,
    "period": 2.5,
    "chassis": "air",
    "depth": 0.01,
    # task
    "trials": 50,
    "babble_duration": 300.0,
    "periods": "",
    "delays": "",
    "scales": "",
    "trajectories": 10,
    "repetitions": 25,
    "refine_babble": 60.0,
    "refine_epochs": 20,
    "hold_duration": 10.0,
}
TRAJECTORIES = ("cyclical", "point-to-point", "sinusoid", "posture")
CHASSIS = ("air", "gantry", "weighted")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the config-error code; 2 means divergence."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _coerce(key, raw):
    default = DEFAULTS[key]
    if not isinstance(raw, str) or isinstance(default, str):
        return raw
    try:
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def resolve(args) -> tuple[dict, PlantParams]:
    """Merge defaults, the config file and explicit flags."""
    file_values = read_flat_config(args.config) if args.config else {}
    plant_values, settings = {}, dict(DEFAULTS)
    for key, raw in file_values.items():
        if key in PLANT_KEYS:
            plant_values[key] = raw
        elif key in DEFAULTS:
            settings[key] = _coerce(key, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    try:
        params = PlantParams.from_mapping(plant_values)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if settings["mode"] not in (OPEN, CLOSED):
        raise ConfigError(f"mode must be {OPEN!r} or {CLOSED!r}")
    if settings["trajectory"] not in TRAJECTORIES:
        raise ConfigError(f"trajectory must be one of {TRAJECTORIES}")
    if settings["chassis"] not in CHASSIS:
        raise ConfigError(f"chassis must be one of {CHASSIS}")
    if settings["jobs"] <= 0:
        settings["jobs"] = os.cpu_count() or 1
    return settings, params


def _floats(text: str, name: str):
    try:
        return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated numbers") from None


def _out_dir(settings, command: str) -> Path:
    """Fresh output directory; never reuses one that already has content."""
    if settings["out"]:
        path = Path(settings["out"])
        if path.exists() and any(path.iterdir()):
            raise ConfigError(f"output directory {path} already exists and is not empty")
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("runs") / command / stamp
        k = 1
        while path.exists():
            path = Path("runs") / command / f"{stamp}-{k}"
            k += 1
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(command, settings, params, seeds: dict, inputs: dict, **extra) -> dict:
    config = {"settings": {k: v for k, v in settings.items() if k not in ("out", "jobs")},
              "plant": params.to_mapping()}
    out = {"command": command, "version": __version__, "config": config,
           "config_hash": content_hash(config), "seeds": seeds,
           "inputs": {name: {"path": str(p), "sha256": file_hash(p)} for name, p in inputs.items()},
           "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    out.update(extra)
    return out


def _write_manifest(directory: Path, manifest: dict):
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _gains(settings) -> FeedbackGains:
    return FeedbackGains(kp=(settings["kp"],) * 2, ki=(settings["ki"],) * 2,
                         clamp=(settings["clamp"],) * 2)


def _load_map(path) -> InverseMap:
    if not path:
        raise ConfigError("an inverse map is required (--map)")
    try:
        return InverseMap.load(path)
    except FileNotFoundError:
        raise ConfigError(f"map file not found: {path}") from None
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read map {path}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_babble(settings, params) -> int:
    out = _out_dir(settings, "babble")
    data, _, _ = collect_babbling(params, settings["duration"], seed=settings["seed"])
    path = out / "babbling.csv"
    data.to_csv(path)
    _write_manifest(out, _manifest("babble", settings, params, {"babble": settings["seed"]}, {},
                                   outputs={"samples": str(path), "sha256": file_hash(path)},
                                   n_rows=len(data)))
    print(f"babbling: {len(data)} samples -> {path}")
    return EXIT_OK


def cmd_train(settings, params) -> int:
    if not settings["data"]:
        raise ConfigError("training needs a sample file (--data)")
    try:
        data = SampleSet.from_csv(settings["data"])
    except FileNotFoundError:
        raise ConfigError(f"sample file not found: {settings['data']}") from None
    except (ValueError, KeyError, IndexError) as exc:
        raise ConfigError(f"cannot read samples {settings['data']}: {exc}") from None
    out = _out_dir(settings, "train")
    inputs = {"data": settings["data"]}
    if settings["warm_start"]:
        net = refine(_load_map(settings["warm_start"]), data, seed=settings["seed"],
                     epochs=settings["epochs"])
        inputs["warm_start"] = settings["warm_start"]
    else:
        net = train(data, seed=settings["seed"], epochs=settings["epochs"])
    path = out / "map.json"
    net.save(path)
    loss = net.loss(data)
    _write_manifest(out, _manifest("train", settings, params, {"train": settings["seed"]}, inputs,
                                   outputs={"map": str(path), "sha256": file_hash(path)},
                                   final_loss=loss))
    print(f"trained map: loss {loss:.6g} -> {path}")
    return EXIT_OK


def _trajectory(settings, params):
    kind, ts = settings["trajectory"], settings["traj_seed"]
    lim = (params.q_min, params.q_max)
    if kind == "cyclical":
        return random_cyclical(ts, limits=lim)
    if kind == "point-to-point":
        return generate_point_to_point(seed=ts, limits=lim)
    if kind == "sinusoid":
        return generate_sinusoid(settings["period"], limits=lim)
    return constant_posture(STANDING_POSTURE, settings["hold_duration"])


def cmd_run(settings, params) -> int:
    net = _load_map(settings["map"])
    if settings["chassis"] == "gantry":
        params = gantry_params(params, settings["depth"])
    elif settings["chassis"] == "weighted":
        params = weighted_params(params, STANDING_POSTURE)
    if not 0.0 <= settings["delay_ms"] <= 200.0:
        raise ConfigError("delay_ms must lie within [0, 200]")
    traj = _trajectory(settings, params)
    ticks = delay_ticks_for(settings["delay_ms"] / 1000.0, traj.dt)
    out = _out_dir(settings, "run")
    rec = run_episode(traj, params, net, _gains(settings), settings["mode"], ticks,
                      seed=settings["traj_seed"])
    rec.write(out, "run", _manifest("run", settings, params,
                                    {"trajectory": settings["traj_seed"]},
                                    {"map": settings["map"]}))
    j = rec.rmse_joint
    print(f"{settings['mode']} {traj.label}: rmse {rec.rmse:.6f} rad "
          f"(joint 1 {j[0]:.6f}, joint 2 {j[1]:.6f})" + (f"  FAILED: {rec.failure}" if rec.failed else ""))
    return EXIT_DIVERGED if rec.failed else EXIT_OK


def _task_kwargs(name, settings) -> dict:
    n = settings["trials"]
    if name in ("cyclical", "point-to-point", "gantry"):
        return {"n_trials": n}
    if name == "period-sweep":
        kw = {"n_trials": n}
        if settings["periods"]:
            kw["periods"] = _floats(settings["periods"], "periods")
        return kw
    if name == "delay-sweep":
        kw = {"n_trials": n}
        if settings["delays"]:
            kw["delays_ms"] = _floats(settings["delays"], "delays")
        return kw
    if name == "gain-sweep":
        kw = {"n_trials": n}
        if settings["scales"]:
            kw["scales"] = _floats(settings["scales"], "scales")
        return kw
    if name == "posture-weight":
        return {"duration": settings["hold_duration"]}
    return {"n_trajectories": settings["trajectories"], "n_repetitions": settings["repetitions"],
            "babble_duration": settings["refine_babble"], "refine_epochs": settings["refine_epochs"]}


def cmd_task(settings, params, name) -> int:
    inputs, seeds = {}, {"master": settings["seed"]}
    if settings["map"]:
        net = _load_map(settings["map"])
        inputs["map"] = settings["map"]
    elif name == "refine":
        net = InverseMap.zeros()      # the refinement study babbles per trajectory
    else:
        data, _, _ = collect_babbling(params, settings["babble_duration"], seed=0)
        net = train(data, seed=0, epochs=settings["epochs"])
        seeds.update(babble=0, train=0)
    kwargs = _task_kwargs(name, settings)
    out = _out_dir(settings, name)
    if "train" in seeds:
        net.save(out / "map.json")
    setup = Setup(params, net, _gains(settings))
    report = run_task(name, setup, seed=settings["seed"], jobs=settings["jobs"], **kwargs)
    report.write(out)
    _write_manifest(out, _manifest("task", settings, params, seeds, inputs, task=name,
                                   report_sha256=report.digest()))
    n_flag = sum(bool(t.get("flagged")) for t in report.trials)
    print(f"task {name}: {report.n_trials} trials, {n_flag} flagged runs -> {out}")
    for key, value in report.summary.items():
        if key != "conditions":
            print(f"  {key}: {value}")
    for key, test in report.tests.items():
        if test.get("p_value") is not None:
            print(f"  test {key}: p = {test['p_value']:.3g} (a lower: {test['a_lower']})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--seed", type=int, help="master seed (default 0)")
    g.add_argument("--out", help="output directory (default runs/<command>/<timestamp>)")
    g.add_argument("--jobs", type=int, help="worker processes (default: all cores)")

    p = _Parser(prog="tendonleg", description=__doc__.split("\n")[0],
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("babble", parents=[common], help="collect motor-babbling samples")
    b.add_argument("--duration", type=float, help="babbling duration in s (default 300)")

    t = sub.add_parser("train", parents=[common], help="train (or warm-start) an inverse map")
    t.add_argument("--data", help="sample CSV written by babble")
    t.add_argument("--epochs", type=int, help="training epochs (default 2000)")
    t.add_argument("--warm-start", dest="warm_start", help="map to refine instead of training anew")

    r = sub.add_parser("run", parents=[common], help="run one episode")
    r.add_argument("--map", help="inverse map file")
    r.add_argument("--mode", choices=(OPEN, CLOSED), help="control mode (default closed)")
    r.add_argument("--kp", type=float, help="proportional gain, both joints (1/s)")
    r.add_argument("--ki", type=float, help="integral gain, both joints (1/s^2)")
    r.add_argument("--clamp", type=float, help="integral clamp (rad s)")
    r.add_argument("--delay-ms", dest="delay_ms", type=float, help="feedback delay in ms")
    r.add_argument("--trajectory", choices=TRAJECTORIES, help="desired trajectory kind")
    r.add_argument("--traj-seed", dest="traj_seed", type=int, help="trajectory seed")
    r.add_argument("--period", type=float, help="sinusoid period in s")
    r.add_argument("--chassis", choices=CHASSIS, help="air, gantry or weighted")
    r.add_argument("--depth", type=float, help="gantry contact depth in m")
    r.add_argument("--hold-duration", dest="hold_duration", type=float,
                   help="posture hold duration in s")

    k = sub.add_parser("task", parents=[common], help="run an experiment task")
    k.add_argument("name", choices=TASKS, help="task name")
    k.add_argument("--map", help="inverse map (default: babble and train one)")
    k.add_argument("--trials", type=int, help="paired trials (default 50)")
    k.add_argument("--kp", type=float, help="proportional gain")
    k.add_argument("--ki", type=float, help="integral gain")
    k.add_argument("--clamp", type=float, help="integral clamp")
    k.add_argument("--epochs", type=int, help="epochs when training the default map")
    k.add_argument("--babble-duration", dest="babble_duration", type=float,
                   help="babbling duration for the default map")
    k.add_argument("--periods", help="period-sweep grid, comma separated (s)")
    k.add_argument("--delays", help="delay-sweep grid, comma separated (ms)")
    k.add_argument("--scales", help="gain-sweep scalings, comma separated")
    k.add_argument("--trajectories", type=int, help="refinement: trajectory blocks")
    k.add_argument("--repetitions", type=int, help="refinement: repetitions per block")
    k.add_argument("--refine-babble", dest="refine_babble", type=float,
                   help="refinement: babbling per block (s)")
    k.add_argument("--refine-epochs", dest="refine_epochs", type=int,
                   help="refinement: epochs per refinement")
    k.add_argument("--hold-duration", dest="hold_duration", type=float,
                   help="posture-weight: hold duration (s)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings, params = resolve(args)
        if args.command == "babble":
            return cmd_babble(settings, params)
        if args.command == "train":
            return cmd_train(settings, params)
        if args.command == "run":
            return cmd_run(settings, params)
        return cmd_task(settings, params, args.name)
    except (ConfigError, ProvenanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
