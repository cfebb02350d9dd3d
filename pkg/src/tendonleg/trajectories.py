"""Input signals: babbling activations and desired joint kinematics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

N_SPOKES = 10
SMOOTHING_CUTOFF_HZ = 4.0
RAMP_DURATION = 0.1
# control points sit slightly inside the joint-limit rectangle
SPOKE_MARGIN = 0.95
PERIOD_GRID = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0)


@dataclass
class KinematicTrajectory:
    """Desired angles, velocities and accelerations sampled every ``dt``."""

    dt: float
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray
    label: str = ""
    # generator-specific extras: cycle length, hold segments, seed
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.dq = np.asarray(self.dq, dtype=float)
        self.ddq = np.asarray(self.ddq, dtype=float)
        n = len(self.q)
        if self.q.shape != (n, 2) or self.dq.shape != (n, 2) or self.ddq.shape != (n, 2):
            raise ValueError("q, dq, ddq must all be (N, 2)")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.dq))
                and np.all(np.isfinite(self.ddq))):
            raise ValueError("trajectory contains non-finite samples")

    def __len__(self):
        return len(self.q)

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    def kinematics(self, n: int) -> np.ndarray:
        return np.concatenate([self.q[n], self.dq[n], self.ddq[n]])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "q_d1", "q_d2", "dq_d1", "dq_d2", "ddq_d1", "ddq_d2"])
            for t, q, dq, ddq in zip(self.time, self.q, self.dq, self.ddq):
                w.writerow([f"{v:.9g}" for v in (t, *q, *dq, *ddq)])

    @classmethod
    def from_csv(cls, path, label="") -> "KinematicTrajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 7 or len(data) < 2:
            raise ValueError(f"{path}: expected 7 columns and at least 2 rows")
        dt = float(np.round(np.median(np.diff(data[:, 0])), 12))
        return cls(dt, data[:, 1:3], data[:, 3:5], data[:, 5:7], label=label or Path(path).stem)


@dataclass
class BabblingSignal:
    dt: float
    activations: np.ndarray
    seed: int

    def __len__(self):
        return len(self.activations)


def central_difference(x: np.ndarray, dt: float, periodic: bool) -> np.ndarray:
    """Central difference along axis 0; circular when ``periodic``, otherwise
    one-sided at the two ends."""
    if periodic:
        return (np.roll(x, -1, axis=0) - np.roll(x, 1, axis=0)) / (2.0 * dt)
    return np.gradient(x, dt, axis=0, edge_order=1)


def _with_derivatives(q, dt, periodic, label, meta) -> KinematicTrajectory:
    dq = central_difference(q, dt, periodic)
    ddq = central_difference(dq, dt, periodic)
    return KinematicTrajectory(dt, q, dq, ddq, label=label, meta=meta)


# ---------------------------------------------------------------------------
# babbling


def generate_babbling(duration: float, dt: float, seed: int,
                      dwell=(0.2, 1.0), tau=0.05) -> BabblingSignal:
    """Random activation levels held for random dwell times, then low-passed.

    Each tendon draws its own U(0, 1) levels and U(dwell) hold durations; a
    first-order filter with time constant ``tau`` removes the steps.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration / dt))
    rng = np.random.default_rng(seed)
    raw = np.empty((n, 3))
    for j in range(3):
        i = 0
        while i < n:
            hold = max(1, int(round(rng.uniform(*dwell) / dt)))
            raw[i:i + hold, j] = rng.uniform()
            i += hold
    alpha = 1.0 - math.exp(-dt / tau)
    out = np.empty_like(raw)
    y = raw[0].copy()
    for k in range(n):
        y += alpha * (raw[k] - y)
        out[k] = y
    return BabblingSignal(dt, np.clip(out, 0.0, 1.0), seed)


# ---------------------------------------------------------------------------
# cyclical patterns


def spoke_points(radii, q_min, q_max, margin=SPOKE_MARGIN) -> np.ndarray:
    """Control points on equally spaced spokes of the joint-limit rectangle.

    ``radii[k]`` is the fraction of the way from the centre to the rectangle
    boundary along spoke ``k`` (spokes measured in range-normalized space).
    """
    radii = np.asarray(radii, dtype=float)
    center = 0.5 * (np.asarray(q_min) + np.asarray(q_max))
    half = 0.5 * (np.asarray(q_max) - np.asarray(q_min))
    theta = 2 * np.pi * np.arange(len(radii)) / len(radii)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    to_edge = 1.0 / np.max(np.abs(u), axis=1)
    return center + (margin * radii * to_edge)[:, None] * u * half


def circular_lowpass(x: np.ndarray, dt: float, cutoff: float, order: int = 2) -> np.ndarray:
    """Zero-phase Butterworth low-pass of a periodic signal.

    Applies the squared magnitude response (forward plus backward pass) in the
    frequency domain, which is exact for a signal that wraps around.
    """
    n = len(x)
    freqs = np.fft.rfftfreq(n, dt)
    gain = 1.0 / (1.0 + (freqs / cutoff) ** (2 * order))
    return np.fft.irfft(np.fft.rfft(x, axis=0) * gain[:, None], n=n, axis=0)


def _fit_inside(cycle, q_min, q_max):
    center = 0.5 * (q_min + q_max)
    half = 0.5 * (q_max - q_min)
    excess = np.max(np.abs(cycle - center) / half)
    if excess <= SPOKE_MARGIN:
        return cycle
    return center + (cycle - center) * (SPOKE_MARGIN / excess)


def cyclical_cycle(radii, cycle_period, dt, q_min, q_max) -> np.ndarray:
    """One smoothed cycle, ``round(cycle_period/dt)`` samples."""
    q_min = np.asarray(q_min, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    pts = spoke_points(radii, q_min, q_max)
    n_cycle = int(round(cycle_period / dt))
    if n_cycle < 2:
        raise ValueError("cycle period shorter than two samples")
    knots = np.linspace(0.0, 1.0, N_SPOKES + 1)
    spline = CubicSpline(knots, np.vstack([pts, pts[:1]]), bc_type="periodic", axis=0)
    cycle = spline(np.arange(n_cycle) / n_cycle)
    cycle = circular_lowpass(cycle, dt, SMOOTHING_CUTOFF_HZ)
    return _fit_inside(cycle, q_min, q_max)


def generate_cyclical(radii, cycle_period: float = 2.5, n_cycles: int = 10,
                      dt: float = 0.01, limits=None) -> KinematicTrajectory:
    radii = np.asarray(radii, dtype=float)
    if radii.shape != (N_SPOKES,) or np.any(radii < 0) or np.any(radii > 1):
        raise ValueError(f"radii must be {N_SPOKES} values in [0, 1]")
    if cycle_period <= 0 or n_cycles < 1:
        raise ValueError("cycle_period and n_cycles must be positive")
    q_min, q_max = _limits(limits)
    cycle = cyclical_cycle(radii, cycle_period, dt, q_min, q_max)
    q = np.tile(cycle, (n_cycles, 1))
    meta = {"cycle_length": len(cycle), "n_cycles": n_cycles, "radii": radii.tolist()}
    return _with_derivatives(q, dt, True, "cyclical", meta)


def random_cyclical(seed: int, cycle_period: float = 2.5, n_cycles: int = 10,
                    dt: float = 0.01, limits=None) -> KinematicTrajectory:
    radii = np.random.default_rng(seed).uniform(size=N_SPOKES)
    traj = generate_cyclical(radii, cycle_period, n_cycles, dt, limits)
    traj.meta["seed"] = seed
    return traj


# ---------------------------------------------------------------------------
# point-to-point and sinusoids


def generate_point_to_point(n_points: int = 10, hold_duration: float = 2.5,
                            dt: float = 0.01, limits=None, seed: int = 0,
                            targets=None, start=None) -> KinematicTrajectory:
    """Ramp-and-hold sequence starting at ``start`` (default: joint-space
    centre). Targets are drawn uniformly within the joint limits unless given."""
    q_min, q_max = _limits(limits)
    if targets is None:
        if n_points < 1:
            raise ValueError("n_points must be at least 1")
        rng = np.random.default_rng(seed)
        targets = rng.uniform(q_min, q_max, size=(n_points, 2))
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    if hold_duration <= 0:
        raise ValueError("hold_duration must be positive")
    n_ramp = int(round(RAMP_DURATION / dt))
    n_hold = int(round(hold_duration / dt))
    prev = 0.5 * (q_min + q_max) if start is None else np.asarray(start, float)
    chunks, segments = [], []
    idx = 0
    for tgt in targets:
        frac = (np.arange(1, n_ramp + 1) / n_ramp)[:, None]
        chunks.append(prev + frac * (tgt - prev))
        chunks.append(np.tile(tgt, (n_hold, 1)))
        segments.append({"ramp_start": idx, "hold_start": idx + n_ramp,
                         "hold_end": idx + n_ramp + n_hold,
                         "from": prev.tolist(), "to": tgt.tolist()})
        idx += n_ramp + n_hold
        prev = tgt
    q = np.vstack(chunks)
    meta = {"segments": segments, "seed": seed}
    return _with_derivatives(q, dt, False, "point-to-point", meta)


def hold_mask(traj: KinematicTrajectory, skip: int = 0) -> np.ndarray:
    """Boolean mask of hold samples, dropping the first ``skip`` of each hold."""
    mask = np.zeros(len(traj), dtype=bool)
    for seg in traj.meta.get("segments", []):
        mask[seg["hold_start"] + skip:seg["hold_end"]] = True
    return mask


def sinusoid_amplitudes(limits=None):
    q_min, q_max = _limits(limits)
    return 0.5 * (q_min + q_max), 0.25 * (q_max - q_min)


def generate_sinusoid(cycle_period: float, n_cycles: int = 10, dt: float = 0.01,
                      limits=None, phase: float = 0.0) -> KinematicTrajectory:
    """Proximal joint follows a sine, distal a cosine; peak-to-peak swing is
    half of each joint's range. Derivatives are analytic. ``phase`` shifts
    the starting point along the cycle (radians)."""
    if cycle_period <= 0:
        raise ValueError("cycle_period must be positive")
    c, A = sinusoid_amplitudes(limits)
    n = int(round(n_cycles * cycle_period / dt))
    w = 2 * np.pi / cycle_period
    t = np.arange(n) * dt
    s, k = np.sin(w * t + phase), np.cos(w * t + phase)
    q = np.stack([c[0] + A[0] * s, c[1] + A[1] * k], axis=1)
    dq = np.stack([A[0] * w * k, -A[1] * w * s], axis=1)
    ddq = np.stack([-A[0] * w**2 * s, -A[1] * w**2 * k], axis=1)
    meta = {"cycle_period": cycle_period, "n_cycles": n_cycles, "phase": float(phase),
            "cycle_length": int(round(cycle_period / dt))}
    return KinematicTrajectory(dt, q, dq, ddq, label="sinusoid", meta=meta)


def constant_posture(q, duration: float, dt: float = 0.01) -> KinematicTrajectory:
    n = int(round(duration / dt))
    q = np.tile(np.asarray(q, dtype=float), (n, 1))
    return KinematicTrajectory(dt, q, np.zeros_like(q), np.zeros_like(q), label="posture")


def _limits(limits):
    if limits is None:
        from tendonleg.plant import DEFAULT_Q_MAX, DEFAULT_Q_MIN
        return np.array(DEFAULT_Q_MIN, float), np.array(DEFAULT_Q_MAX, float)
    q_min, q_max = limits
    return np.asarray(q_min, dtype=float), np.asarray(q_max, dtype=float)
