"""Ego planning-set generation in the Frenet frame.

For each (terminal time, lateral offset) grid point a lateral quintic and a
longitudinal quartic are fitted, realized in Cartesian at the simulation
timestep, and scored on jerk, time, terminal offset, and terminal speed
deviation. The quartic keeps terminal velocity/acceleration free of any
position constraint (velocity-keeping form).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import NoFeasibleTrajectoryError
from .frenet import FrenetState, ReferenceLine, to_cartesian_batch
from .scene import DT, AgentState, wrap_angle

# Score weights (standard Frenet-planner convention; config-overridable).
K_JERK = 0.1
K_TIME = 0.1
K_OFFSET = 1.0
K_SPEED = 1.0

# Hard feasibility caps applied before best-path selection.
MAX_ACCEL = 8.0  # m/s^2
MAX_CURVATURE = 0.3  # 1/m
WHEELBASE = 2.8  # m, for bicycle-model steer recovery


@dataclass(frozen=True)
class SamplingConfig:
    """Terminal-time and lateral-offset sampling grid."""

    t_min: float = 2.0
    t_max: float = 4.0
    t_step: float = 1.0
    d_max: float = 3.0
    d_step: float = 1.0

    def __post_init__(self) -> None:
        if not (0 < self.t_min <= self.t_max):
            raise ValueError("need 0 < t_min <= t_max")
        if self.t_step <= 0 or self.d_max <= 0 or self.d_step <= 0:
            raise ValueError("t_step, d_max, d_step must all be > 0")

    def terminal_times(self) -> list[float]:
        times = []
        t = self.t_min
        while t <= self.t_max + 1e-9:
            times.append(round(t, 9))
            t += self.t_step
        return times

    def lateral_offsets(self) -> list[float]:
        n = int(round(self.d_max / self.d_step))
        return [round(k * self.d_step, 9) for k in range(-n, n + 1)]


@dataclass(frozen=True)
class TrajectorySample:
    fstate: FrenetState
    state: AgentState
    accel: float
    steer: float


@dataclass(eq=False)
class FrenetTrajectory:
    """One candidate ego motion: polynomials plus Cartesian realization."""

    lat_coeffs: np.ndarray  # quintic d(t), ascending powers, 6 terms
    lon_coeffs: np.ndarray  # quartic s(t), ascending powers, 5 terms
    duration: float
    target_speed: float
    target_offset: float
    score: float
    # per-step arrays, length round(duration/DT) + 1
    t: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)
    s_dot: np.ndarray = field(repr=False)
    s_ddot: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)
    d_dot: np.ndarray = field(repr=False)
    d_ddot: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    vx: np.ndarray = field(repr=False)
    vy: np.ndarray = field(repr=False)
    heading: np.ndarray = field(repr=False)
    speed: np.ndarray = field(repr=False)
    accel: np.ndarray = field(repr=False)
    curvature: np.ndarray = field(repr=False)
    steer: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.t)

    def state_at(self, i: int) -> AgentState:
        return AgentState(
            float(self.x[i]),
            float(self.y[i]),
            float(self.vx[i]),
            float(self.vy[i]),
            wrap_angle(float(self.heading[i])),
        )

    def fstate_at(self, i: int) -> FrenetState:
        return FrenetState(
            s=float(self.s[i]),
            d=float(self.d[i]),
            s_dot=float(self.s_dot[i]),
            d_dot=float(self.d_dot[i]),
            s_ddot=float(self.s_ddot[i]),
            d_ddot=float(self.d_ddot[i]),
        )

    @cached_property
    def samples(self) -> tuple[TrajectorySample, ...]:
        return tuple(
            TrajectorySample(
                self.fstate_at(i), self.state_at(i), float(self.accel[i]), float(self.steer[i])
            )
            for i in range(len(self.t))
        )

    @property
    def max_abs_accel(self) -> float:
        return float(np.abs(self.accel).max())

    @property
    def max_abs_curvature(self) -> float:
        return float(np.abs(self.curvature).max())

    @property
    def max_abs_offset(self) -> float:
        return float(np.abs(self.d).max())


def fit_lateral_quintic(d0: float, d0_dot: float, d0_ddot: float, d_end: float, T: float) -> np.ndarray:
    """Quintic d(t) with d(T)=d_end and zero terminal slope/curvature."""
    a0, a1, a2 = d0, d0_dot, 0.5 * d0_ddot
    A = np.array(
        [
            [T**3, T**4, T**5],
            [3 * T**2, 4 * T**3, 5 * T**4],
            [6 * T, 12 * T**2, 20 * T**3],
        ]
    )
    b = np.array(
        [
            d_end - a0 - a1 * T - a2 * T**2,
            -a1 - 2 * a2 * T,
            -2 * a2,
        ]
    )
    a3, a4, a5 = np.linalg.solve(A, b)
    return np.array([a0, a1, a2, a3, a4, a5])


def fit_longitudinal_quartic(s0: float, s0_dot: float, s0_ddot: float, v_end: float, T: float) -> np.ndarray:
    """Quartic s(t) with s'(T)=v_end, s''(T)=0, terminal position free."""
    a0, a1, a2 = s0, s0_dot, 0.5 * s0_ddot
    A = np.array(
        [
            [3 * T**2, 4 * T**3],
            [6 * T, 12 * T**2],
        ]
    )
    b = np.array(
        [
            v_end - a1 - 2 * a2 * T,
            -2 * a2,
        ]
    )
    a3, a4 = np.linalg.solve(A, b)
    return np.array([a0, a1, a2, a3, a4])


def jerk_integral(coeffs: np.ndarray, T: float) -> float:
    """Exact integral of the squared third derivative over [0, T]."""
    jerk = P.polyder(coeffs, 3)
    sq = P.polymul(jerk, jerk)
    antideriv = P.polyint(sq)
    return float(P.polyval(T, antideriv))


def _realize(
    ref: ReferenceLine,
    lat: np.ndarray,
    lon: np.ndarray,
    duration: float,
    target_speed: float,
    target_offset: float,
) -> FrenetTrajectory | None:
    n = max(1, int(round(duration / DT)))
    t = np.arange(n + 1) * DT
    d = P.polyval(t, lat)
    d_dot = P.polyval(t, P.polyder(lat))
    d_ddot = P.polyval(t, P.polyder(lat, 2))
    s = P.polyval(t, lon)
    s_dot = P.polyval(t, P.polyder(lon))
    s_ddot = P.polyval(t, P.polyder(lon, 2))

    cart = to_cartesian_batch(ref, s, d, s_dot, d_dot)
    if not bool(cart["valid"].all()):
        return None

    speed = cart["speed"]
    accel = np.empty_like(speed)
    accel[:-1] = np.diff(speed) / DT
    accel[-1] = accel[-2] if len(accel) > 1 else 0.0

    heading_unwrapped = np.unwrap(cart["heading"])
    step_dist = np.hypot(np.diff(cart["x"]), np.diff(cart["y"]))
    curvature = np.zeros_like(speed)
    nz = step_dist > 1e-9
    curvature[:-1][nz] = np.diff(heading_unwrapped)[nz] / step_dist[nz]
    if len(curvature) > 1:
        curvature[-1] = curvature[-2]
    steer = np.arctan(WHEELBASE * curvature)

    score = (
        K_JERK * (jerk_integral(lat, duration) + jerk_integral(lon, duration))
        + K_TIME * duration
        + K_OFFSET * float(P.polyval(duration, lat)) ** 2
        + K_SPEED * (float(P.polyval(duration, P.polyder(lon))) - target_speed) ** 2
    )

    return FrenetTrajectory(
        lat_coeffs=lat,
        lon_coeffs=lon,
        duration=duration,
        target_speed=target_speed,
        target_offset=target_offset,
        score=score,
        t=t,
        s=s,
        s_dot=s_dot,
        s_ddot=s_ddot,
        d=d,
        d_dot=d_dot,
        d_ddot=d_ddot,
        x=cart["x"],
        y=cart["y"],
        vx=cart["vx"],
        vy=cart["vy"],
        heading=cart["heading"],
        speed=speed,
        accel=accel,
        curvature=curvature,
        steer=steer,
    )


def generate_planning_set(
    ref: ReferenceLine,
    start: FrenetState,
    target_speed: float,
    cfg: SamplingConfig,
) -> list[FrenetTrajectory]:
    """Candidate trajectories for one target speed over the sampling grid.

    Candidates are produced in deterministic grid order (terminal times
    outer, lateral offsets inner). Grid points whose Cartesian realization
    leaves the reference line are dropped; if none survive, there is no
    feasible trajectory for this action.
    """
    if target_speed <= 0:
        raise ValueError("target_speed must be > 0")
    candidates: list[FrenetTrajectory] = []
    for T_raw in cfg.terminal_times():
        n = max(1, int(round(T_raw / DT)))
        duration = n * DT  # align the fit horizon with the sample grid
        lon = fit_longitudinal_quartic(start.s, start.s_dot, start.s_ddot, target_speed, duration)
        for d_end in cfg.lateral_offsets():
            lat = fit_lateral_quintic(start.d, start.d_dot, start.d_ddot, d_end, duration)
            traj = _realize(ref, lat, lon, duration, target_speed, d_end)
            if traj is not None:
                candidates.append(traj)
    if not candidates:
        raise NoFeasibleTrajectoryError(
            f"no candidate for target speed {target_speed} could be realized on the reference line"
        )
    return candidates


def feasibility_violations(traj: FrenetTrajectory, d_max: float) -> list[str]:
    """Hard-cap violations that exclude a candidate from selection."""
    problems = []
    if traj.max_abs_accel > MAX_ACCEL:
        problems.append(f"|accel| {traj.max_abs_accel:.2f} > {MAX_ACCEL}")
    if traj.max_abs_curvature > MAX_CURVATURE:
        problems.append(f"|curvature| {traj.max_abs_curvature:.3f} > {MAX_CURVATURE}")
    if traj.max_abs_offset > d_max + 1e-9:
        problems.append(f"|d| {traj.max_abs_offset:.2f} > {d_max}")
    return problems


def select_best_path(
    candidates: list[FrenetTrajectory],
    d_max: float = SamplingConfig().d_max,
) -> FrenetTrajectory:
    """Lowest-score candidate after removing hard-infeasible ones."""
    best: FrenetTrajectory | None = None
    for traj in candidates:
        if feasibility_violations(traj, d_max):
            continue
        if best is None or traj.score < best.score:
            best = traj
    if best is None:
        raise NoFeasibleTrajectoryError(
            f"all {len(candidates)} candidates violate the feasibility caps"
        )
    return best
