"""Open- and closed-loop control of the leg through the inverse map.

Closed loop keeps the desired angle and acceleration and corrects only the
velocity fed to the map::

    q_e    = q_d - q_p(delayed)
    dq_a   = K_P q_e + K_I * integral(q_e)
    a      = map(q_d, dq_d + dq_a, ddq_d)
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from tendonleg.inverse_map import InverseMap, SampleSet, samples_from_rollout
from tendonleg.plant import Plant, PlantParams, SimulationDiverged, initial_state
from tendonleg.records import RunRecord
from tendonleg.trajectories import BabblingSignal, KinematicTrajectory, generate_babbling

OPEN, CLOSED = "open", "closed"
DT_CTRL = 0.01


@dataclass(frozen=True)
class FeedbackGains:
    """Diagonal PI gains on joint-angle error (K_P in 1/s, K_I in 1/s^2)."""

    kp: tuple = (4.0, 4.0)
    ki: tuple = (1.0, 1.0)
    # anti-windup bound on the error integral, rad*s
    clamp: tuple = (0.5, 0.5)

    def __post_init__(self):
        for name in ("kp", "ki", "clamp"):
            v = getattr(self, name)
            v = (float(v),) * 2 if np.isscalar(v) else tuple(float(x) for x in v)
            object.__setattr__(self, name, v)
        if min(self.kp) < 0 or min(self.ki) < 0:
            raise ValueError("gains must be non-negative")
        if min(self.clamp) <= 0:
            raise ValueError("integral clamp must be positive")

    @property
    def K_P(self) -> np.ndarray:
        return np.diag(self.kp)

    @property
    def K_I(self) -> np.ndarray:
        return np.diag(self.ki)

    def scaled(self, factor: float) -> "FeedbackGains":
        return replace(self, kp=tuple(factor * k for k in self.kp),
                       ki=tuple(factor * k for k in self.ki))

    def as_dict(self) -> dict:
        return {"kp": list(self.kp), "ki": list(self.ki), "clamp": list(self.clamp)}


@dataclass
class ControllerState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(2))
    delay_line: deque = field(default_factory=deque)
    mode: str = CLOSED
    tick: int = 0


@dataclass(frozen=True)
class ControlKinematics:
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray

    def as_input(self) -> np.ndarray:
        return np.concatenate([self.q, self.dq, self.ddq])


def delay_ticks_for(delay_s: float, dt_ctrl: float = DT_CTRL) -> int:
    """Sensory delay rounded to whole control ticks."""
    if delay_s < 0:
        raise ValueError("delay must be non-negative")
    return int(math.floor(delay_s / dt_ctrl + 0.5))


def feedback_adjustment(q_e, state: ControllerState, gains: FeedbackGains,
                        dt_ctrl: float) -> tuple[np.ndarray, ControllerState]:
    """PI velocity adjustment; integrates ``q_e`` then clamps the integral."""
    q_e = np.asarray(q_e, dtype=float)
    clamp = np.asarray(gains.clamp)
    integral = np.clip(state.integral + q_e * dt_ctrl, -clamp, clamp)
    dq_a = np.asarray(gains.kp) * q_e + np.asarray(gains.ki) * integral
    return dq_a, replace(state, integral=integral)


def delayed_observe(q_p, state: ControllerState, delay_ticks: int) -> tuple[np.ndarray, ControllerState]:
    """Push the current observation and return the one from ``delay_ticks`` ago
    (the oldest held sample until the line has filled)."""
    line = state.delay_line
    line.append(np.array(q_p, dtype=float))
    while len(line) > delay_ticks + 1:
        line.popleft()
    return line[0], state


def control_kinematics(q_d, dq_d, ddq_d, dq_a=None) -> ControlKinematics:
    dq_c = np.asarray(dq_d, float) if dq_a is None else np.asarray(dq_d, float) + dq_a
    return ControlKinematics(np.asarray(q_d, float), dq_c, np.asarray(ddq_d, float))


def control_tick(q_d, dq_d, ddq_d, observation, state: ControllerState, gains: FeedbackGains,
                 net: InverseMap, dt_ctrl: float) -> tuple[np.ndarray, ControllerState, ControlKinematics]:
    """One controller update. The observation is ignored in open loop."""
    if state.mode == OPEN:
        ck = control_kinematics(q_d, dq_d, ddq_d)
    else:
        q_e = np.asarray(q_d, float) - np.asarray(observation, float)
        dq_a, state = feedback_adjustment(q_e, state, gains, dt_ctrl)
        ck = control_kinematics(q_d, dq_d, ddq_d, dq_a)
    a = np.clip(net.predict(ck.as_input()), 0.0, 1.0)
    return a, replace(state, tick=state.tick + 1), ck


def run_episode(trajectory: KinematicTrajectory, params: PlantParams, net: InverseMap,
                gains: FeedbackGains | None = None, mode: str = CLOSED, delay_ticks: int = 0,
                seed: int = 0, q0=None, label: str | None = None,
                use_delay_line: bool = True) -> RunRecord:
    """Drive the plant along ``trajectory`` and record what happened.

    Activations are held for ``dt_ctrl / dt_phys`` physics steps. A diverging
    plant ends the run early with ``failed=True``.
    """
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    if mode not in (OPEN, CLOSED):
        raise ValueError(f"mode must be {OPEN!r} or {CLOSED!r}")
    gains = gains or FeedbackGains()
    dt = trajectory.dt
    ratio = dt / params.dt_phys
    substeps = int(round(ratio))
    if substeps < 1 or abs(ratio - substeps) > 1e-9:
        raise ValueError("physics step must divide the control period")

    n = len(trajectory)
    start = trajectory.q[0] if q0 is None else np.asarray(q0, float)
    plant = Plant(params, initial_state(params, start))
    state = ControllerState(mode=mode)
    q_p = np.full((n, 2), np.nan)
    dq_c = np.full((n, 2), np.nan)
    acts = np.full((n, 3), np.nan)
    foot = np.full(n, np.nan)
    chassis = np.full((n, 2), np.nan)
    failure = ""
    done = n
    for k in range(n):
        obs = plant.observe()
        q_p[k] = obs
        foot[k] = plant.foot_height()
        chassis[k] = plant._s[0], plant._s[1]
        if mode == CLOSED and (use_delay_line or delay_ticks):
            obs, state = delayed_observe(obs, state, delay_ticks)
        a, state, ck = control_tick(trajectory.q[k], trajectory.dq[k], trajectory.ddq[k], obs,
                                    state, gains, net, dt)
        acts[k] = a
        dq_c[k] = ck.dq
        try:
            plant.advance(a, substeps)
        except SimulationDiverged as exc:
            failure = str(exc)
            done = k + 1
            break
    return RunRecord.build(
        trajectory=trajectory, q_p=q_p[:done], dq_c=dq_c[:done], activations=acts[:done],
        foot_height=foot[:done], chassis=chassis[:done], mode=mode, gains=gains,
        delay_ticks=delay_ticks, seed=seed, map_id=net.meta.get("id", ""),
        label=label or trajectory.label, failed=bool(failure), failure=failure)


def experience_samples(record: RunRecord, run_index: int) -> SampleSet:
    """Achieved kinematics paired with the activations actually sent."""
    return samples_from_rollout(record.q_p, record.activations, record.dt,
                                f"experience:{run_index}")


def collect_babbling(params: PlantParams, duration: float = 300.0, seed: int = 0,
                     dt_ctrl: float = DT_CTRL) -> tuple[SampleSet, BabblingSignal, np.ndarray]:
    """Roll a babbling signal through the in-air plant and pair observed
    kinematics with the commands."""
    signal = generate_babbling(duration, dt_ctrl, seed)
    substeps = int(round(dt_ctrl / params.dt_phys))
    plant = Plant(params, initial_state(params))
    q = np.empty((len(signal), 2))
    for k, a in enumerate(signal.activations):
        q[k] = plant.observe()
        plant.advance(a, substeps)
    data = samples_from_rollout(q, signal.activations, dt_ctrl, "babbling")
    return data, signal, q
