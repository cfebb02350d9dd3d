"""Reproduce the gantry calibration frozen in tests/fixtures/clearance.json:
clearance fractions for both modes under substantial contact, plus how they
move with the airborne share that defines a cleared cycle."""
import argparse

import numpy as np

from tendonleg.controller import CLOSED, OPEN, run_episode
from tendonleg.experiments import (SUBSTANTIAL_DEPTH, Setup, contact_depth, desired_foot_height,
                                   swing_clearance, trial_seed)
from tendonleg.inverse_map import InverseMap
from tendonleg.plant import PlantParams, gantry_params
from tendonleg.trajectories import random_cyclical


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--map", required=True, help="default map (e.g. results/map.json)")
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    params = gantry_params(PlantParams(), SUBSTANTIAL_DEPTH)
    setup = Setup(PlantParams(), InverseMap.load(args.map))
    shares = (0.25, 0.5, 0.75, 1.0)
    table = {mode: {s: [] for s in shares} for mode in (OPEN, CLOSED)}
    for i in range(args.trials):
        traj = random_cyclical(trial_seed(args.seed, i))
        hd = desired_foot_height(traj, params)
        for mode in (OPEN, CLOSED):
            rec = run_episode(traj, params, setup.net, setup.gains, mode)
            for s in shares:
                frac, _ = swing_clearance(rec.foot_height, hd[:len(rec)], traj.meta["cycle_length"],
                                          share=s, min_swing=contact_depth(params))
                table[mode][s].append(frac)
    for mode in (OPEN, CLOSED):
        row = "  ".join(f"share {s:.2f}: {np.nanmean(table[mode][s]):.3f}" for s in shares)
        print(f"{mode:>6}  {row}")


if __name__ == "__main__":
    main()
