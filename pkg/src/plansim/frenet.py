"""Arc-length reference lines and Cartesian <-> Frenet transforms.

The reference line is a dense arc-length table built from the ego route's
chained centerlines. Lateral offsets are left-positive: d > 0 means the
point lies left of the local tangent direction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FrenetSingularityError, ProjectionError, RouteGapError
from .scene import AgentState, Scenario, wrap_angle

SAMPLE_SPACING = 0.1  # max arc-length gap between table samples [m]
MAX_ROUTE_GAP = 0.5  # max join gap between consecutive route lanes [m]
MAX_LATERAL_OFFSET = 20.0  # projection sanity bound [m]
_JOIN_EPS = 1e-9


@dataclass(frozen=True)
class FrenetState:
    """Longitudinal/lateral position and derivatives relative to a reference line."""

    s: float
    d: float
    s_dot: float = 0.0
    d_dot: float = 0.0
    s_ddot: float = 0.0
    d_ddot: float = 0.0


class ReferenceLine:
    """Dense arc-length parameterization of a path.

    Stores (s, x, y, tangent heading, curvature) samples. Headings are kept
    unwrapped (continuous) so interpolation never crosses a branch cut;
    curvature comes from central finite differences of heading over arc
    length, with endpoint values copied from their neighbors.
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("reference line needs an (N, 2) array with N >= 2")
        seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
        if np.any(seg <= 0):
            keep = np.concatenate(([True], seg > 0))
            pts = pts[keep]
            seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
        s = np.concatenate(([0.0], np.cumsum(seg)))

        # Tangent heading via central differences of position (one-sided at
        # the ends), then unwrapped to stay continuous.
        n = len(pts)
        heading = np.empty(n)
        heading[0] = math.atan2(pts[1, 1] - pts[0, 1], pts[1, 0] - pts[0, 0])
        heading[-1] = math.atan2(pts[-1, 1] - pts[-2, 1], pts[-1, 0] - pts[-2, 0])
        if n > 2:
            heading[1:-1] = np.arctan2(
                pts[2:, 1] - pts[:-2, 1], pts[2:, 0] - pts[:-2, 0]
            )
        heading = np.unwrap(heading)

        curvature = np.zeros(n)
        if n > 2:
            curvature[1:-1] = (heading[2:] - heading[:-2]) / (s[2:] - s[:-2])
            curvature[0] = curvature[1]
            curvature[-1] = curvature[-2]

        self.s = s
        self.x = pts[:, 0].copy()
        self.y = pts[:, 1].copy()
        self.heading = heading
        self.curvature = curvature
        for arr in (self.s, self.x, self.y, self.heading, self.curvature):
            arr.setflags(write=False)

    @property
    def total_length(self) -> float:
        return float(self.s[-1])

    def eval(self, s):
        """Interpolate (x, y, heading, curvature) at arc length(s) s."""
        x = np.interp(s, self.s, self.x)
        y = np.interp(s, self.s, self.y)
        heading = np.interp(s, self.s, self.heading)
        curvature = np.interp(s, self.s, self.curvature)
        return x, y, heading, curvature


def _resample_polyline(pts: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    s = np.concatenate(([0.0], np.cumsum(seg)))
    total = float(s[-1])
    n_intervals = max(1, math.ceil(total / spacing - 1e-12))
    s_new = np.linspace(0.0, total, n_intervals + 1)
    return np.column_stack((np.interp(s_new, s, pts[:, 0]), np.interp(s_new, s, pts[:, 1])))


def reference_line_from_points(points, spacing: float = SAMPLE_SPACING) -> ReferenceLine:
    """Build a reference line from a raw polyline, resampled at <= spacing."""
    pts = np.asarray(points, dtype=float)
    return ReferenceLine(_resample_polyline(pts, spacing))


def build_reference_line(scenario: Scenario) -> ReferenceLine:
    """Concatenate the ego route's centerlines into one reference line."""
    chunks: list[np.ndarray] = []
    prev_end = None
    for lane_id in scenario.ego_route:
        lane = scenario.lane_by_id[lane_id]
        pts = lane.points_array
        if prev_end is not None:
            gap = float(np.hypot(*(pts[0] - prev_end)))
            if gap > MAX_ROUTE_GAP:
                raise RouteGapError(
                    f"route gap of {gap:.3f} m between lane end and start of '{lane_id}'"
                )
            if gap < _JOIN_EPS:
                pts = pts[1:]
        chunks.append(pts)
        prev_end = pts[-1] if len(pts) else prev_end
    merged = np.vstack(chunks)
    return ReferenceLine(_resample_polyline(merged, SAMPLE_SPACING))


def _tangential_residual(ref: ReferenceLine, px: float, py: float, s: float) -> float:
    x, y, heading, _ = ref.eval(s)
    return (px - x) * math.cos(heading) + (py - y) * math.sin(heading)


def project_point(ref: ReferenceLine, px: float, py: float) -> float:
    """Arc length of the closest reference-line point to (px, py).

    Nearest dense sample first; ties within 1e-6 resolve to the smallest s.
    The foot point is then refined by bisection on the tangential residual.
    Raises ProjectionError when the point projects beyond either end.
    """
    dist = np.hypot(ref.x - px, ref.y - py)
    dmin = float(dist.min())
    i = int(np.flatnonzero(dist <= dmin + 1e-6)[0])

    last = len(ref.s) - 1
    lo_i, hi_i = max(0, i - 1), min(last, i + 1)
    lo, hi = float(ref.s[lo_i]), float(ref.s[hi_i])
    g_lo = _tangential_residual(ref, px, py, lo)
    g_hi = _tangential_residual(ref, px, py, hi)
    # The residual decreases through the foot point; widen the bracket until
    # it changes sign across [lo, hi] (handles kinked polylines).
    for _ in range(6):
        if g_lo < 0.0 and lo_i > 0:
            lo_i = max(0, lo_i - 2)
            lo = float(ref.s[lo_i])
            g_lo = _tangential_residual(ref, px, py, lo)
        elif g_hi > 0.0 and hi_i < last:
            hi_i = min(last, hi_i + 2)
            hi = float(ref.s[hi_i])
            g_hi = _tangential_residual(ref, px, py, hi)
        else:
            break

    if g_lo < 0.0 and lo_i == 0:
        raise ProjectionError("point projects before the start of the reference line")
    if g_hi > 0.0 and hi_i == last:
        raise ProjectionError("point projects beyond the end of the reference line")
    if not (g_lo >= 0.0 >= g_hi):
        return float(ref.s[i])  # degenerate bracket; dense sample is the best answer

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        g_mid = _tangential_residual(ref, px, py, mid)
        if g_mid >= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def to_frenet(ref: ReferenceLine, state: AgentState) -> FrenetState:
    """Transform a Cartesian agent state into Frenet coordinates.

    Velocity splits into a path-tangential component (giving s_dot through
    the 1 - curvature*d metric factor) and a left-normal component (d_dot).
    Accelerations are not observable from a single state and are set to 0.
    """
    s = project_point(ref, state.x, state.y)
    x, y, heading, curvature = ref.eval(s)
    tx, ty = math.cos(heading), math.sin(heading)
    nx, ny = -ty, tx  # left normal
    dx, dy = state.x - x, state.y - y
    d = dx * nx + dy * ny
    if abs(d) >= MAX_LATERAL_OFFSET:
        raise ProjectionError(
            f"lateral offset {d:.2f} m exceeds the {MAX_LATERAL_OFFSET} m sanity bound"
        )
    one_minus_kd = 1.0 - curvature * d
    if one_minus_kd <= 0.0:
        raise FrenetSingularityError(
            f"1 - curvature*d = {one_minus_kd:.4f} <= 0 at s={s:.2f}"
        )
    v_t = state.vx * tx + state.vy * ty
    v_n = state.vx * nx + state.vy * ny
    return FrenetState(s=float(s), d=float(d), s_dot=float(v_t / one_minus_kd), d_dot=float(v_n))


def to_cartesian(ref: ReferenceLine, fstate: FrenetState) -> AgentState:
    """Transform a Frenet state back to a Cartesian agent state."""
    if not (0.0 <= fstate.s <= ref.total_length):
        raise ProjectionError(
            f"s={fstate.s:.3f} outside [0, {ref.total_length:.3f}]"
        )
    x, y, heading, curvature = ref.eval(fstate.s)
    one_minus_kd = 1.0 - curvature * fstate.d
    if one_minus_kd <= 0.0:
        raise FrenetSingularityError(
            f"1 - curvature*d = {one_minus_kd:.4f} <= 0 at s={fstate.s:.2f}"
        )
    nx, ny = -math.sin(heading), math.cos(heading)
    px = x + fstate.d * nx
    py = y + fstate.d * ny
    v_t = fstate.s_dot * one_minus_kd
    speed = math.hypot(v_t, fstate.d_dot)
    out_heading = wrap_angle(heading + math.atan2(fstate.d_dot, v_t)) if speed > 0 else wrap_angle(heading)
    return AgentState(
        x=float(px),
        y=float(py),
        vx=float(speed * math.cos(out_heading)),
        vy=float(speed * math.sin(out_heading)),
        heading=out_heading,
    )


def to_cartesian_batch(
    ref: ReferenceLine,
    s: np.ndarray,
    d: np.ndarray,
    s_dot: np.ndarray,
    d_dot: np.ndarray,
) -> dict[str, np.ndarray]:
    """Vectorized to_cartesian over sample arrays (for trajectory realization).

    Returns arrays x, y, vx, vy, heading, speed, valid; ``valid`` is False
    where s leaves the table or the curvature metric factor collapses.
    """
    s = np.asarray(s, dtype=float)
    x, y, heading, curvature = ref.eval(np.clip(s, 0.0, ref.total_length))
    one_minus_kd = 1.0 - curvature * d
    valid = (s >= 0.0) & (s <= ref.total_length) & (one_minus_kd > 0.0)
    nx, ny = -np.sin(heading), np.cos(heading)
    px = x + d * nx
    py = y + d * ny
    v_t = s_dot * one_minus_kd
    speed = np.hypot(v_t, d_dot)
    out_heading = heading + np.arctan2(d_dot, v_t)
    out_heading = np.where(speed > 0, out_heading, heading)
    out_heading = (out_heading + np.pi) % (2.0 * np.pi) - np.pi
    return {
        "x": px,
        "y": py,
        "vx": speed * np.cos(out_heading),
        "vy": speed * np.sin(out_heading),
        "heading": out_heading,
        "speed": speed,
        "valid": valid,
    }
