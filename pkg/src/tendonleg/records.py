"""Per-run records, RMSE and their on-disk form."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def rmse(desired, achieved) -> tuple[np.ndarray, float]:
    """Per-joint RMSE and the pooled RMSE over both joints (radians)."""
    d = np.asarray(desired, dtype=float)
    a = np.asarray(achieved, dtype=float)
    if d.shape != a.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {a.shape}")
    if d.ndim == 1:
        d, a = d[:, None], a[:, None]
    if len(d) < 1:
        raise ValueError("need at least one sample")
    mse = np.mean((d - a) ** 2, axis=0)
    return np.sqrt(mse), float(np.sqrt(np.mean(mse)))


@dataclass
class RunRecord:
    dt: float
    q_d: np.ndarray
    dq_d: np.ndarray
    ddq_d: np.ndarray
    q_p: np.ndarray
    dq_c: np.ndarray
    activations: np.ndarray
    foot_height: np.ndarray
    chassis: np.ndarray
    rmse_joint: np.ndarray
    rmse: float
    mode: str
    gains: dict
    delay_ticks: int
    seed: int
    map_id: str = ""
    label: str = ""
    failed: bool = False
    failure: str = ""
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, trajectory, q_p, dq_c, activations, foot_height, chassis, mode, gains,
              delay_ticks, seed, map_id="", label="", failed=False, failure=""):
        n = len(q_p)
        per_joint, agg = rmse(trajectory.q[:n], q_p)
        return cls(dt=trajectory.dt, q_d=trajectory.q[:n], dq_d=trajectory.dq[:n],
                   ddq_d=trajectory.ddq[:n], q_p=q_p, dq_c=dq_c, activations=activations,
                   foot_height=foot_height, chassis=chassis, rmse_joint=per_joint, rmse=agg,
                   mode=mode, gains=gains.as_dict(), delay_ticks=delay_ticks, seed=seed,
                   map_id=map_id, label=label, failed=failed, failure=failure,
                   meta=dict(trajectory.meta))

    def __len__(self):
        return len(self.q_p)

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    # control kinematics: angle and acceleration pass through unchanged
    @property
    def q_c(self) -> np.ndarray:
        return self.q_d

    @property
    def ddq_c(self) -> np.ndarray:
        return self.ddq_d

    def summary(self) -> dict:
        return {"label": self.label, "mode": self.mode, "seed": self.seed,
                "gains": self.gains, "delay_ticks": self.delay_ticks,
                "delay_ms": self.delay_ticks * self.dt * 1000.0, "map_id": self.map_id,
                "rmse": self.rmse, "rmse_joint": [float(v) for v in self.rmse_joint],
                "failed": self.failed, "failure": self.failure, "n_ticks": len(self)}

    def write(self, directory, stem: str = "run", extra_manifest: dict | None = None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = self.summary()
        manifest.update(extra_manifest or {})
        (directory / f"{stem}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        with open(directory / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "q_d1", "q_d2", "q_p1", "q_p2", "dq_c1", "dq_c2", "a1", "a2", "a3"])
            for row in zip(self.time, self.q_d, self.q_p, self.dq_c, self.activations):
                t, qd, qp, dqc, a = row
                w.writerow([f"{v:.9g}" for v in (t, *qd, *qp, *dqc, *a)])
        return manifest
