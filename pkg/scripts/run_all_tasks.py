"""Run every experiment task with the default map and write the reports.

    python3 scripts/run_all_tasks.py --out results --jobs 4
    python3 scripts/run_all_tasks.py --tasks refine --refine-trajectories 50
"""
import argparse
import json
import time
from pathlib import Path

from tendonleg.experiments import TASKS, Setup, default_setup, run_task
from tendonleg.inverse_map import InverseMap
from tendonleg.plant import PlantParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--refine-trajectories", type=int, default=10)
    ap.add_argument("--map", help="reuse a trained map instead of babbling and training")
    ap.add_argument("--tasks", default=",".join(TASKS))
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.map:
        setup = Setup(PlantParams(), InverseMap.load(args.map))
    else:
        setup = default_setup()
        setup.net.save(out / "map.json")
        print(f"default map trained in {time.perf_counter() - t0:.0f} s, "
              f"loss {setup.net.meta['final_loss']:.5f}")

    summary = {}
    for name in args.tasks.split(","):
        kw = {}
        if name == "refine":
            kw["n_trajectories"] = args.refine_trajectories
        elif name != "posture-weight":
            kw["n_trials"] = args.trials
        t1 = time.perf_counter()
        rep = run_task(name, setup, seed=args.seed, jobs=args.jobs, **kw)
        rep.write(out / name)
        summary[name] = {k: v for k, v in rep.to_dict()["summary"].items() if k != "conditions"}
        print(f"{name}: {time.perf_counter() - t1:.0f} s")
        for key, value in summary[name].items():
            print(f"  {key}: {value}")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
