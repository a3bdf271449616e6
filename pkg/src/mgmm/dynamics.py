"""Robot models, one-step integration of the motion equations and PID steering.

States are plain tuples ``(x, y, theta, psi, v, theta_1, ..., theta_N)`` and
actions are ``(a_acc, a_omega)`` tuples. ``(x, y)`` is the rear-axle reference
point; the car body extends forward from it and snake trailers hang behind it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

State = tuple
Action = tuple


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(a, TWO_PI)
    return math.pi if r == -math.pi else r


def _clamp(value: float, limit: float) -> float:
    if value > limit:
        return limit
    if value < -limit:
        return -limit
    return value


@dataclass(frozen=True)
class RobotModel:
    kind: str = "car"
    L: float = 1.0
    H: float = 0.3
    N: int = 4
    v_max: float = 2.25
    psi_max: float = 1.5
    acc_max: float = 1.0
    omega_max: float = 2.7
    dt: float = 0.05
    cruise: float = 1.5
    width_ratio: float = 0.6
    cap_radius: float = 0.15

    def __post_init__(self):
        if self.kind not in ("car", "snake"):
            raise ValueError(f"unknown robot kind {self.kind!r}")
        if self.L <= 0:
            raise ValueError("wheelbase L must be positive")
        if self.kind == "snake" and (self.H <= 0 or self.N < 1):
            raise ValueError("snake needs H > 0 and N >= 1")
        if min(self.v_max, self.psi_max, self.acc_max, self.omega_max, self.dt) <= 0:
            raise ValueError("limits and dt must be positive")

    @property
    def trailers(self) -> int:
        return self.N if self.kind == "snake" else 0

    @property
    def state_dim(self) -> int:
        return 5 + self.trailers

    @property
    def half_length(self) -> float:
        return 0.5 * self.L

    @property
    def half_width(self) -> float:
        return 0.5 * self.width_ratio * self.L

    @property
    def clearance_radius(self) -> float:
        """Radius of the disc around the body reference that covers the head body."""
        if self.kind == "car":
            return math.hypot(self.half_length, self.half_width)
        return self.half_length + self.cap_radius

    def initial_state(self, x: float, y: float, theta: float = 0.0) -> State:
        theta = wrap_angle(theta)
        return (float(x), float(y), theta, 0.0, 0.0) + (theta,) * self.trailers


def make_model(kind: str = "car", **overrides) -> RobotModel:
    return RobotModel(kind=kind, **overrides)


@dataclass
class Trajectory:
    states: list
    actions: list
    dt: float

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a trajectory needs exactly one more state than actions")

    def __len__(self) -> int:
        return len(self.states)

    def positions(self) -> np.ndarray:
        return np.array([(s[0], s[1]) for s in self.states], dtype=float).reshape(-1, 2)

    def length(self) -> float:
        return polyline_length(self.positions())


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def car_derivative(s: Sequence[float], a: Sequence[float], L: float) -> tuple:
    """Time derivative of a car state, returned in state order (x, y, theta, psi, v)."""
    _, _, theta, psi, v = s[:5]
    cpsi = math.cos(psi)
    return (
        v * math.cos(theta) * cpsi,
        v * math.sin(theta) * cpsi,
        v * math.sin(psi) / L,
        a[1],
        a[0],
    )


def snake_derivative(s: Sequence[float], a: Sequence[float], L: float, H: float, N: int) -> tuple:
    """Car head derivative followed by the N-trailer chain.

    Trailer i turns at (v/H) sin(theta_{i-1} - theta_i) scaled by the product of
    cos(theta_{j-1} - theta_j) over the preceding hitches, with theta_0 the head.
    """
    if N < 1:
        raise ValueError("snake needs at least one trailer")
    head = car_derivative(s, a, L)
    v = s[4]
    angles = (s[2],) + tuple(s[5:5 + N])
    rates = []
    prod = 1.0
    for i in range(1, N + 1):
        diff = angles[i - 1] - angles[i]
        rates.append(v / H * math.sin(diff) * prod)
        prod *= math.cos(diff)
    return head + tuple(rates)


def _pose_rates(pose, v, psi, L, H, N):
    # pose = (x, y, theta, theta_1..theta_N)
    theta = pose[2]
    cpsi = math.cos(psi)
    out = [v * math.cos(theta) * cpsi, v * math.sin(theta) * cpsi, v * math.sin(psi) / L]
    prev = theta
    prod = 1.0
    for i in range(N):
        cur = pose[3 + i]
        diff = prev - cur
        out.append(v / H * math.sin(diff) * prod)
        prod *= math.cos(diff)
        prev = cur
    return out


def _saturation_time(x0: float, rate: float, limit: float, dt: float):
    if rate > 0.0:
        t = (limit - x0) / rate
    elif rate < 0.0:
        t = (-limit - x0) / rate
    else:
        return None
    return t if 0.0 < t < dt else None


def simulate(model: RobotModel, s: State, a: Action, dt: float | None = None) -> State:
    """Advance one fixed step.

    Speed and steering angle are linear in time until they saturate, so they are
    evaluated in closed form; the pose (position, heading, trailer angles) is
    integrated with classical RK4, splitting the step where a saturation kicks in.
    """
    h = model.dt if dt is None else dt
    acc = _clamp(a[0], model.acc_max)
    omega = _clamp(a[1], model.omega_max)
    v0 = _clamp(s[4], model.v_max)
    psi0 = _clamp(s[3], model.psi_max)
    n_tr = model.trailers
    L, H = model.L, model.H
    vmax, pmax = model.v_max, model.psi_max

    def v_at(t):
        return _clamp(v0 + acc * t, vmax)

    def psi_at(t):
        return _clamp(psi0 + omega * t, pmax)

    breaks = [0.0]
    for t in sorted(x for x in (_saturation_time(v0, acc, vmax, h), _saturation_time(psi0, omega, pmax, h)) if x):
        breaks.append(t)
    breaks.append(h)

    pose = [s[0], s[1], s[2]] + list(s[5:5 + n_tr])
    m = len(pose)
    for t0, t1 in zip(breaks[:-1], breaks[1:]):
        dh = t1 - t0
        if dh <= 0.0:
            continue
        tm = t0 + 0.5 * dh
        vm, pm = v_at(tm), psi_at(tm)
        k1 = _pose_rates(pose, v_at(t0), psi_at(t0), L, H, n_tr)
        p2 = [pose[i] + 0.5 * dh * k1[i] for i in range(m)]
        k2 = _pose_rates(p2, vm, pm, L, H, n_tr)
        p3 = [pose[i] + 0.5 * dh * k2[i] for i in range(m)]
        k3 = _pose_rates(p3, vm, pm, L, H, n_tr)
        p4 = [pose[i] + dh * k3[i] for i in range(m)]
        k4 = _pose_rates(p4, v_at(t1), psi_at(t1), L, H, n_tr)
        pose = [pose[i] + dh / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]) for i in range(m)]

    return (
        pose[0],
        pose[1],
        wrap_angle(pose[2]),
        psi_at(h),
        v_at(h),
    ) + tuple(wrap_angle(t) for t in pose[3:])


def clamp_state(model: RobotModel, s: State) -> State:
    return (
        s[0],
        s[1],
        wrap_angle(s[2]),
        _clamp(s[3], model.psi_max),
        _clamp(s[4], model.v_max),
    ) + tuple(wrap_angle(t) for t in s[5:])


def clamp_action(model: RobotModel, a: Action) -> Action:
    return (_clamp(a[0], model.acc_max), _clamp(a[1], model.omega_max))


def rollout(model: RobotModel, s0: State, actions: Sequence[Action]) -> Trajectory:
    states = [tuple(s0)]
    for a in actions:
        states.append(simulate(model, states[-1], a))
    return Trajectory(states=states, actions=[tuple(a) for a in actions], dt=model.dt)


@dataclass
class SteeringController:
    """PID heading control plus proportional speed control toward a planar target.

    The derivative term keeps the previous heading error, so one controller is
    used for one extension episode only.
    """

    model: RobotModel
    kp_heading: float = 2.0
    ki_heading: float = 0.0
    kd_heading: float = 0.3
    kp_speed: float = 1.0
    _prev_error: float | None = field(default=None, repr=False)
    _integral: float = field(default=0.0, repr=False)

    def __call__(self, s: State, target) -> Action:
        m = self.model
        err = wrap_angle(math.atan2(target[1] - s[1], target[0] - s[0]) - s[2])
        derr = 0.0 if self._prev_error is None else wrap_angle(err - self._prev_error) / m.dt
        self._prev_error = err
        self._integral += err * m.dt
        psi_ref = _clamp(
            self.kp_heading * err + self.ki_heading * self._integral + self.kd_heading * derr,
            m.psi_max,
        )
        a_omega = _clamp((psi_ref - s[3]) / m.dt, m.omega_max)

        v_ref = m.cruise
        if abs(err) > math.pi / 4:
            v_ref *= (math.pi / 4) / abs(err)
        a_acc = _clamp(self.kp_speed * (v_ref - s[4]), m.acc_max)
        return (a_acc, a_omega)


def pid_steer(model: RobotModel, s: State, target) -> Action:
    """First action of a fresh controller, i.e. without derivative history."""
    return SteeringController(model)(s, target)
