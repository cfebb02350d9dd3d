"""Planar two-joint, three-tendon leg with Hill-type actuators.

The leg hangs from a chassis (hip). Generalized coordinates are
``(x, y, q1, q2)``: chassis horizontal position, chassis height above the
ground line, proximal joint angle measured from the downward vertical and
distal joint angle relative to the proximal link. Which chassis coordinates
are free depends on the chassis mode:

* ``fixed``    -- chassis locked in the air, only the joints move.
* ``gantry``   -- chassis slides in x with rail friction and is held up by a
  vertical spring-damper.
* ``weighted`` -- no spring, chassis mass scaled up, chassis free vertically
  (x stays locked on the rail).

The numerical core is compiled with numba and operates on a packed float
array; :class:`PlantParams` and :class:`PlantState` are the Python-facing
types.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

CHASSIS_MODES = ("fixed", "gantry", "weighted")

# packed parameter layout
(P_L1, P_L2, P_C1, P_C2, P_M1, P_M2, P_I1, P_I2, P_MC, P_G, P_DAMP,
 P_QMIN1, P_QMIN2, P_QMAX1, P_QMAX2, P_KLIM, P_CLIM, P_FMAX, P_VMAX,
 P_KC, P_CC, P_MU, P_CT, P_KG, P_CG, P_YG, P_CX, P_MODE) = range(28)
P_R = 28          # 6 entries, row-major 2x3
P_LOPT = 34       # 3 entries
P_L0 = 37         # 3 entries
N_PACKED = 40

# packed state layout: x, y, q1, q2, vx, vy, dq1, dq2
N_STATE = 8


class InvalidState(ValueError):
    """Raised for non-finite inputs to the actuator or dynamics functions."""


class SimulationDiverged(RuntimeError):
    """Raised when an integration step produces a non-finite state."""

    def __init__(self, step_index: int, time: float = float("nan")):
        super().__init__(f"simulation diverged at step {step_index} (t={time:.4f} s)")
        self.step_index = step_index
        self.time = time


def _arr(x, shape=None):
    a = np.array(x, dtype=float)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


DEFAULT_R = ((0.02, -0.02, 0.015), (0.0, 0.01, -0.01))
DEFAULT_Q_MIN = (-0.15, -1.1)
DEFAULT_Q_MAX = (0.65, 0.0)
# foot straight below the hip; the weighted task holds this posture
STANDING_POSTURE = (0.25, -0.5)
# tendon lengths are laid out over this wider rectangle so the babbling
# equilibria spread across the actual joint limits
GEOMETRY_Q_MIN = (-0.8, -1.5)
GEOMETRY_Q_MAX = (0.8, 0.0)


def _default_tendon_geometry(R, q_min, q_max, min_norm_length=0.3):
    """Optimal lengths and length offsets so every tendon works on the
    ascending limb of its force-length curve.

    Each tendon reaches its optimal length at the joint-limit corner where it
    is longest and shortens to ``min_norm_length`` optimal lengths at the
    opposite corner.
    """
    R = np.asarray(R, dtype=float)
    q_min = np.asarray(q_min, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    span = (R != 0) * np.abs(R) * (q_max - q_min)[:, None]
    excursion = span.sum(axis=0)
    l_opt = excursion / (1.0 - min_norm_length)
    # length l(q) = l0 - R^T q; longest where each R_ij q_i is smallest
    q_long = np.where(R > 0, q_min[:, None], q_max[:, None])
    l0 = l_opt + (R * q_long).sum(axis=0)
    return l_opt, l0


_LOPT, _L0 = _default_tendon_geometry(DEFAULT_R, GEOMETRY_Q_MIN, GEOMETRY_Q_MAX)


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the leg. SI units throughout."""

    link_lengths: np.ndarray = field(default_factory=lambda: _arr([0.11, 0.11]))
    link_masses: np.ndarray = field(default_factory=lambda: _arr([0.09, 0.06]))
    # distance from joint to link centre of mass
    com_distances: np.ndarray = field(default_factory=lambda: _arr([0.055, 0.055]))
    # inertia of each link about its own joint: uniform rod (m L^2 / 3), plus
    # a foot pad and pulley on the distal link
    link_inertias: np.ndarray = field(
        default_factory=lambda: _arr([0.09 * 0.11**2 / 3, 0.06 * 0.11**2 / 3 + 2e-4]))
    joint_damping: float = 0.12
    q_min: np.ndarray = field(default_factory=lambda: _arr(DEFAULT_Q_MIN))
    q_max: np.ndarray = field(default_factory=lambda: _arr(DEFAULT_Q_MAX))
    limit_stiffness: float = 200.0
    limit_damping: float = 0.1
    moment_arms: np.ndarray = field(default_factory=lambda: _arr(DEFAULT_R))
    f_max: np.ndarray = field(default_factory=lambda: _arr([120.0, 120.0, 120.0]))
    optimal_lengths: np.ndarray = field(default_factory=lambda: _arr(_LOPT))
    length_offsets: np.ndarray = field(default_factory=lambda: _arr(_L0))
    # max shortening velocity, optimal lengths per second
    v_max: float = 10.0
    gravity: float = 9.81
    dt_phys: float = 1e-3
    contact_stiffness: float = 1.0e4
    contact_damping: float = 20.0
    friction_coefficient: float = 0.8
    # viscous regularisation of Coulomb friction below the cap
    friction_viscosity: float = 50.0
    gantry_stiffness: float = 300.0
    gantry_damping: float = 10.0
    rail_damping: float = 2.0
    chassis_mass: float = 0.02
    # hip height above ground; also the gantry spring rest height
    chassis_height: float = 1.0
    chassis_mode: str = "fixed"
    weight_factor: float = 5.0

    def __post_init__(self):
        for name in ("link_lengths", "link_masses", "com_distances", "link_inertias",
                     "q_min", "q_max", "f_max", "optimal_lengths", "length_offsets"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        object.__setattr__(self, "moment_arms", _arr(self.moment_arms, (2, 3)))
        self.validate()

    def validate(self):
        if self.chassis_mode not in CHASSIS_MODES:
            raise ValueError(f"chassis_mode must be one of {CHASSIS_MODES}, got {self.chassis_mode!r}")
        if self.link_lengths.shape != (2,) or self.link_masses.shape != (2,):
            raise ValueError("link_lengths and link_masses need two entries")
        if self.f_max.shape != (3,):
            raise ValueError("f_max needs three entries")
        positive = [*self.link_lengths, *self.link_masses, *self.f_max, self.dt_phys]
        if not all(np.isfinite(positive)) or min(positive) <= 0:
            raise ValueError("link lengths, masses, f_max and dt_phys must be strictly positive")
        if np.any(self.q_min >= self.q_max):
            raise ValueError("joint limit min must be below max")
        R = self.moment_arms
        if np.any(np.all(R == 0, axis=0)):
            raise ValueError("every tendon needs at least one nonzero moment arm")
        if np.linalg.matrix_rank(R) < 2:
            raise ValueError("moment-arm matrix must have full row rank")
        if np.any(self.optimal_lengths <= 0):
            raise ValueError("optimal tendon lengths must be positive")

    @property
    def q_center(self) -> np.ndarray:
        return 0.5 * (self.q_min + self.q_max)

    @property
    def total_mass(self) -> float:
        return float(self.effective_chassis_mass + self.link_masses.sum())

    @property
    def effective_chassis_mass(self) -> float:
        if self.chassis_mode == "weighted":
            return self.chassis_mass * self.weight_factor
        return self.chassis_mass

    def replace(self, **changes) -> "PlantParams":
        return dataclasses.replace(self, **changes)

    def pack(self) -> np.ndarray:
        p = np.zeros(N_PACKED)
        p[P_L1], p[P_L2] = self.link_lengths
        p[P_C1], p[P_C2] = self.com_distances
        p[P_M1], p[P_M2] = self.link_masses
        p[P_I1], p[P_I2] = self.link_inertias
        p[P_MC] = self.effective_chassis_mass
        p[P_G] = self.gravity
        p[P_DAMP] = self.joint_damping
        p[P_QMIN1], p[P_QMIN2] = self.q_min
        p[P_QMAX1], p[P_QMAX2] = self.q_max
        p[P_KLIM] = self.limit_stiffness
        p[P_CLIM] = self.limit_damping
        p[P_VMAX] = self.v_max
        p[P_KC] = self.contact_stiffness
        p[P_CC] = self.contact_damping
        p[P_MU] = self.friction_coefficient
        p[P_CT] = self.friction_viscosity
        p[P_KG] = self.gantry_stiffness
        p[P_CG] = self.gantry_damping
        p[P_YG] = self.chassis_height
        p[P_CX] = self.rail_damping
        p[P_MODE] = CHASSIS_MODES.index(self.chassis_mode)
        p[P_R:P_R + 6] = self.moment_arms.ravel()
        p[P_LOPT:P_LOPT + 3] = self.optimal_lengths
        p[P_L0:P_L0 + 3] = self.length_offsets
        return p

    # flat key = value config ------------------------------------------------

    @classmethod
    def from_mapping(cls, values: dict) -> "PlantParams":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise KeyError(f"unknown plant parameter {key!r}")
            kwargs[key] = _parse_value(key, raw, getattr(cls(), key))
        return cls(**kwargs)

    @classmethod
    def from_config(cls, path) -> "PlantParams":
        from tendonleg.config import read_flat_config
        return cls.from_mapping(read_flat_config(path))

    def to_mapping(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                out[f.name] = ", ".join(repr(float(x)) for x in v.ravel())
            else:
                out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out

    def write_config(self, path):
        lines = [f"{k} = {v}" for k, v in self.to_mapping().items()]
        Path(path).write_text("\n".join(lines) + "\n")


def _parse_value(key, raw, default):
    if not isinstance(raw, str):
        return raw
    if isinstance(default, np.ndarray):
        vals = [float(t) for t in raw.replace(";", ",").split(",") if t.strip()]
        if len(vals) != default.size:
            raise ValueError(f"{key} expects {default.size} values, got {len(vals)}")
        return np.array(vals).reshape(default.shape)
    if isinstance(default, str):
        return raw.strip()
    return float(raw)


def gantry_params(params: PlantParams, depth: float, posture=None) -> PlantParams:
    """Gantry-mode params with the foot ``depth`` metres below the ground
    line at ``posture`` (default: standing posture) when the chassis sits at
    the spring rest height."""
    q = np.asarray(STANDING_POSTURE if posture is None else posture, float)
    drop = leg_drop(params, q)
    return params.replace(chassis_mode="gantry", chassis_height=drop - depth)


def weighted_params(params: PlantParams, posture) -> PlantParams:
    """Weighted-chassis params with the foot touching the ground at ``posture``."""
    return params.replace(chassis_mode="weighted", chassis_height=leg_drop(params, posture))


def leg_drop(params: PlantParams, q) -> float:
    """Vertical distance from hip down to foot."""
    L1, L2 = params.link_lengths
    return float(L1 * math.cos(q[0]) + L2 * math.cos(q[0] + q[1]))


# ---------------------------------------------------------------------------
# compiled core


@numba.njit(cache=True)
def _hill_fl(l_norm):
    d = (l_norm - 1.0) / 0.5
    return math.exp(-d * d)


@numba.njit(cache=True)
def _hill_fv(v_norm, v_max):
    f = 1.0 - v_norm / v_max
    if f < 0.0:
        return 0.0
    if f > 1.5:
        return 1.5
    return f


@numba.njit(cache=True)
def _tendon_forces(a, q1, q2, dq1, dq2, p, fmax, out):
    for j in range(3):
        r1 = p[P_R + j]
        r2 = p[P_R + 3 + j]
        lopt = p[P_LOPT + j]
        length = p[P_L0 + j] - (r1 * q1 + r2 * q2)
        # positive when the tendon shortens
        v_short = r1 * dq1 + r2 * dq2
        aj = a[j]
        if aj < 0.0:
            aj = 0.0
        elif aj > 1.0:
            aj = 1.0
        out[j] = fmax[j] * aj * _hill_fl(length / lopt) * _hill_fv(v_short / lopt, p[P_VMAX])


@numba.njit(cache=True)
def _solve_spd(M, Q, lo, out):
    """Solve M[lo:, lo:] x = Q[lo:] by Gaussian elimination (M is symmetric
    positive definite, so no pivoting). NaNs propagate instead of raising."""
    n = 4 - lo
    A = np.empty((n, n))
    b = np.empty(n)
    for i in range(n):
        b[i] = Q[lo + i]
        for k in range(n):
            A[i, k] = M[lo + i, lo + k]
    for c in range(n):
        for r in range(c + 1, n):
            f = A[r, c] / A[c, c]
            for k in range(c, n):
                A[r, k] -= f * A[c, k]
            b[r] -= f * b[c]
    for r in range(n - 1, -1, -1):
        acc = b[r]
        for k in range(r + 1, n):
            acc -= A[r, k] * out[k]
        out[r] = acc / A[r, r]


@numba.njit(cache=True)
def _derivs(s, a, p, fmax, ds):
    """State derivative. Also returns the foot normal force."""
    x, y, q1, q2, vx, vy, dq1, dq2 = s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]
    L1, L2, c1, c2 = p[P_L1], p[P_L2], p[P_C1], p[P_C2]
    m1, m2, mc, g = p[P_M1], p[P_M2], p[P_MC], p[P_G]
    I1c = p[P_I1] - m1 * c1 * c1
    I2c = p[P_I2] - m2 * c2 * c2
    mode = int(p[P_MODE])

    s1, k1 = math.sin(q1), math.cos(q1)
    s12, k12 = math.sin(q1 + q2), math.cos(q1 + q2)

    # Jacobian columns for q1, q2 (x, y columns are identity)
    j1x1, j1y1 = c1 * k1, c1 * s1
    j2x1, j2y1 = L1 * k1 + c2 * k12, L1 * s1 + c2 * s12
    j2x2, j2y2 = c2 * k12, c2 * s12

    M = np.zeros((4, 4))
    mt = mc + m1 + m2
    M[0, 0] = mt
    M[1, 1] = mt
    M[0, 2] = m1 * j1x1 + m2 * j2x1
    M[0, 3] = m2 * j2x2
    M[1, 2] = m1 * j1y1 + m2 * j2y1
    M[1, 3] = m2 * j2y2
    M[2, 2] = m1 * (j1x1 * j1x1 + j1y1 * j1y1) + I1c + m2 * (j2x1 * j2x1 + j2y1 * j2y1) + I2c
    M[2, 3] = m2 * (j2x1 * j2x2 + j2y1 * j2y2) + I2c
    M[3, 3] = m2 * (j2x2 * j2x2 + j2y2 * j2y2) + I2c
    for i in range(4):
        for k in range(i):
            M[i, k] = M[k, i]

    # velocity-product accelerations of the two centres of mass
    w12 = dq1 + dq2
    b1x, b1y = -c1 * s1 * dq1 * dq1, c1 * k1 * dq1 * dq1
    b2x = -L1 * s1 * dq1 * dq1 - c2 * s12 * w12 * w12
    b2y = L1 * k1 * dq1 * dq1 + c2 * k12 * w12 * w12

    # generalized forces minus velocity-product terms
    Q = np.zeros(4)
    Q[0] = -(m1 * b1x + m2 * b2x)
    Q[1] = -(m1 * b1y + m2 * b2y) - mt * g
    Q[2] = -(m1 * (j1x1 * b1x + j1y1 * b1y) + m2 * (j2x1 * b2x + j2y1 * b2y))
    Q[2] -= g * (m1 * j1y1 + m2 * j2y1)
    Q[3] = -m2 * (j2x2 * b2x + j2y2 * b2y) - g * m2 * j2y2

    # tendons
    f = np.empty(3)
    _tendon_forces(a, q1, q2, dq1, dq2, p, fmax, f)
    for j in range(3):
        Q[2] += p[P_R + j] * f[j]
        Q[3] += p[P_R + 3 + j] * f[j]

    # joint damping and one-sided limit torques
    Q[2] -= p[P_DAMP] * dq1
    Q[3] -= p[P_DAMP] * dq2
    klim, clim = p[P_KLIM], p[P_CLIM]
    for i in range(2):
        qi = q1 if i == 0 else q2
        dqi = dq1 if i == 0 else dq2
        lo = p[P_QMIN1 + i]
        hi = p[P_QMAX1 + i]
        tau = 0.0
        if qi > hi:
            tau = -klim * (qi - hi) - clim * dqi
            if tau > 0.0:
                tau = 0.0
        elif qi < lo:
            tau = klim * (lo - qi) - clim * dqi
            if tau < 0.0:
                tau = 0.0
        Q[2 + i] += tau

    # foot contact (ground line at height 0)
    jfx1, jfy1 = L1 * k1 + L2 * k12, L1 * s1 + L2 * s12
    jfx2, jfy2 = L2 * k12, L2 * s12
    foot_y = y - L1 * k1 - L2 * k12
    fn = 0.0
    if foot_y < 0.0:
        foot_vy = vy + jfy1 * dq1 + jfy2 * dq2
        foot_vx = vx + jfx1 * dq1 + jfx2 * dq2
        fn = -p[P_KC] * foot_y - p[P_CC] * foot_vy
        if fn < 0.0:
            fn = 0.0
        ft = -p[P_CT] * foot_vx
        cap = p[P_MU] * fn
        if ft > cap:
            ft = cap
        elif ft < -cap:
            ft = -cap
        Q[0] += ft
        Q[1] += fn
        Q[2] += jfx1 * ft + jfy1 * fn
        Q[3] += jfx2 * ft + jfy2 * fn

    # chassis supports
    if mode == 1:
        # spring carries the full weight at rest height; contact lifts it
        Q[0] -= p[P_CX] * vx
        Q[1] += p[P_KG] * (p[P_YG] - y) - p[P_CG] * vy + mt * g

    # solve on the free coordinates
    for i in range(N_STATE):
        ds[i] = 0.0
    ds[0] = vx
    ds[1] = vy
    ds[2] = dq1
    ds[3] = dq2
    if mode == 0:
        det = M[2, 2] * M[3, 3] - M[2, 3] * M[3, 2]
        ds[6] = (M[3, 3] * Q[2] - M[2, 3] * Q[3]) / det
        ds[7] = (M[2, 2] * Q[3] - M[3, 2] * Q[2]) / det
        ds[0] = 0.0
        ds[1] = 0.0
    elif mode == 1:
        acc = np.empty(4)
        _solve_spd(M, Q, 0, acc)
        for i in range(4):
            ds[4 + i] = acc[i]
    else:
        acc = np.empty(3)
        _solve_spd(M, Q, 1, acc)
        ds[0] = 0.0
        ds[5] = acc[0]
        ds[6] = acc[1]
        ds[7] = acc[2]
    return fn


@numba.njit(cache=True)
def _rk4_substeps(s, a, p, fmax, dt, n):
    """Advance ``n`` classical RK4 steps with activations held constant.

    Returns the number of completed steps; fewer than ``n`` means a non-finite
    state appeared (the state is left at the last finite value).
    """
    k1 = np.empty(N_STATE)
    k2 = np.empty(N_STATE)
    k3 = np.empty(N_STATE)
    k4 = np.empty(N_STATE)
    tmp = np.empty(N_STATE)
    for step in range(n):
        _derivs(s, a, p, fmax, k1)
        for i in range(N_STATE):
            tmp[i] = s[i] + 0.5 * dt * k1[i]
        _derivs(tmp, a, p, fmax, k2)
        for i in range(N_STATE):
            tmp[i] = s[i] + 0.5 * dt * k2[i]
        _derivs(tmp, a, p, fmax, k3)
        for i in range(N_STATE):
            tmp[i] = s[i] + dt * k3[i]
        _derivs(tmp, a, p, fmax, k4)
        ok = True
        for i in range(N_STATE):
            tmp[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not math.isfinite(tmp[i]):
                ok = False
        if not ok:
            return step
        for i in range(N_STATE):
            s[i] = tmp[i]
    return n


# ---------------------------------------------------------------------------
# Python API


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    dq: np.ndarray
    chassis_x: float = 0.0
    chassis_vx: float = 0.0
    chassis_y: float = 1.0
    chassis_vy: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", _arr(self.q))
        object.__setattr__(self, "dq", _arr(self.dq))

    def pack(self) -> np.ndarray:
        return np.array([self.chassis_x, self.chassis_y, self.q[0], self.q[1],
                         self.chassis_vx, self.chassis_vy, self.dq[0], self.dq[1]])

    @classmethod
    def unpack(cls, s, time) -> "PlantState":
        return cls(q=s[2:4].copy(), dq=s[6:8].copy(), chassis_x=float(s[0]),
                   chassis_vx=float(s[4]), chassis_y=float(s[1]), chassis_vy=float(s[5]),
                   time=float(time))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.pack())) and math.isfinite(self.time))


def initial_state(params: PlantParams, q=None) -> PlantState:
    """Rest state at posture ``q`` (default: joint-space centre) with the hip at
    the configured chassis height."""
    q = params.q_center if q is None else np.asarray(q, float)
    return PlantState(q=q, dq=np.zeros(2), chassis_y=params.chassis_height)


def clamp_activation(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise InvalidState(f"activation must be 3 finite values, got {a!r}")
    return np.clip(a, 0.0, 1.0)


def tendon_forces(a, q, dq, params: PlantParams) -> np.ndarray:
    """Tendon tensions in newtons."""
    a = np.asarray(a, dtype=float)
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(q)) and np.all(np.isfinite(dq))):
        raise InvalidState("non-finite input to tendon_forces")
    out = np.empty(3)
    _tendon_forces(clamp_activation(a), q[0], q[1], dq[0], dq[1], params.pack(), params.f_max, out)
    return out


def tendon_lengths(q, params: PlantParams) -> np.ndarray:
    return params.length_offsets - params.moment_arms.T @ np.asarray(q, float)


def joint_torques(tensions, params: PlantParams) -> np.ndarray:
    f = np.asarray(tensions, dtype=float)
    if not np.all(np.isfinite(f)):
        raise InvalidState("non-finite tensions")
    return params.moment_arms @ f


class Plant:
    """Stateful wrapper used by the control loop. One instance per rollout."""

    def __init__(self, params: PlantParams, state: PlantState | None = None):
        self.params = params
        self._p = params.pack()
        self._fmax = np.array(params.f_max, dtype=float)
        st = state if state is not None else initial_state(params)
        self._s = st.pack()
        self.time = st.time
        self.steps = 0

    @property
    def state(self) -> PlantState:
        return PlantState.unpack(self._s, self.time)

    def observe(self) -> np.ndarray:
        return self._s[2:4].copy()

    def foot_height(self) -> float:
        return foot_position(self._s, self.params)[1]

    def advance(self, a, n_steps: int = 1):
        """Zero-order hold ``a`` for ``n_steps`` physics steps."""
        a = clamp_activation(a)
        done = _rk4_substeps(self._s, a, self._p, self._fmax, self.params.dt_phys, n_steps)
        self.steps += done
        self.time = self.steps * self.params.dt_phys
        if done < n_steps:
            raise SimulationDiverged(self.steps + 1, self.time)


def step(state: PlantState, a, params: PlantParams) -> PlantState:
    """One physics step of length ``params.dt_phys``."""
    if not state.is_finite():
        raise InvalidState("non-finite plant state")
    s = state.pack()
    done = _rk4_substeps(s, clamp_activation(a), params.pack(), np.array(params.f_max),
                         params.dt_phys, 1)
    if done < 1:
        raise SimulationDiverged(int(round(state.time / params.dt_phys)) + 1, state.time)
    return PlantState.unpack(s, state.time + params.dt_phys)


def observe(state: PlantState) -> np.ndarray:
    """Joint angles only; nothing else is sensed."""
    return np.array(state.q, dtype=float)


def derivatives(state: PlantState, a, params: PlantParams) -> tuple[np.ndarray, float]:
    """Packed state derivative and foot normal force at ``state``."""
    ds = np.empty(N_STATE)
    fn = _derivs(state.pack(), clamp_activation(a), params.pack(), np.array(params.f_max), ds)
    return ds, fn


def foot_position(s, params: PlantParams) -> tuple[float, float]:
    L1, L2 = params.link_lengths
    x, y, q1, q2 = s[0], s[1], s[2], s[3]
    return (x + L1 * math.sin(q1) + L2 * math.sin(q1 + q2),
            y - L1 * math.cos(q1) - L2 * math.cos(q1 + q2))


def mechanical_energy(state: PlantState, params: PlantParams) -> float:
    """Kinetic plus gravitational potential energy (plus gantry spring energy),
    evaluated from link centre-of-mass velocities."""
    L1 = params.link_lengths[0]
    c1, c2 = params.com_distances
    m1, m2 = params.link_masses
    I1c = params.link_inertias[0] - m1 * c1**2
    I2c = params.link_inertias[1] - m2 * c2**2
    mc = params.effective_chassis_mass
    q1, q2 = state.q
    w1, w2 = state.dq
    vx, vy, y = state.chassis_vx, state.chassis_vy, state.chassis_y
    v1 = (vx + c1 * math.cos(q1) * w1, vy + c1 * math.sin(q1) * w1)
    v2 = (vx + L1 * math.cos(q1) * w1 + c2 * math.cos(q1 + q2) * (w1 + w2),
          vy + L1 * math.sin(q1) * w1 + c2 * math.sin(q1 + q2) * (w1 + w2))
    ke = 0.5 * mc * (vx**2 + vy**2)
    ke += 0.5 * m1 * (v1[0]**2 + v1[1]**2) + 0.5 * I1c * w1**2
    ke += 0.5 * m2 * (v2[0]**2 + v2[1]**2) + 0.5 * I2c * (w1 + w2)**2
    y1 = y - c1 * math.cos(q1)
    y2 = y - L1 * math.cos(q1) - c2 * math.cos(q1 + q2)
    g = params.gravity
    pe = g * (mc * y + m1 * y1 + m2 * y2)
    if params.chassis_mode == "gantry":
        pe += 0.5 * params.gantry_stiffness * (params.chassis_height - y)**2
        pe -= params.total_mass * g * y
    return ke + pe
