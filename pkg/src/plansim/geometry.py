"""Oriented-rectangle clearance used for collision metrics and termination.

Positive clearance = minimum distance between the two rectangle boundaries.
Negative clearance = penetration depth (smallest separating-axis overlap).
"""
from __future__ import annotations

import math

import numpy as np


def rectangle_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    """Corner coordinates (4x2) of a centered, heading-aligned rectangle."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def _axis_gaps(corners_a: np.ndarray, corners_b: np.ndarray) -> list[float]:
    """Signed gap along each rectangle edge normal (positive = separated)."""
    gaps = []
    for corners in (corners_a, corners_b):
        for i in range(2):  # two unique edge directions per rectangle
            edge = corners[i + 1] - corners[i]
            normal = np.array([-edge[1], edge[0]])
            normal /= np.hypot(normal[0], normal[1])
            pa = corners_a @ normal
            pb = corners_b @ normal
            gaps.append(max(pb.min() - pa.max(), pa.min() - pb.max()))
    return gaps


def _segment_distance(p1: np.ndarray, p2: np.ndarray, q1: np.ndarray, q2: np.ndarray) -> float:
    """Minimum distance between two 2D segments."""

    def point_seg(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        closest = a + t * ab
        return float(np.hypot(*(p - closest)))

    return min(
        point_seg(p1, q1, q2),
        point_seg(p2, q1, q2),
        point_seg(q1, p1, p2),
        point_seg(q2, p1, p2),
    )


def rectangle_clearance(
    pose_a: tuple[float, float, float],
    size_a: tuple[float, float],
    pose_b: tuple[float, float, float],
    size_b: tuple[float, float],
) -> float:
    """Signed clearance between two oriented rectangles.

    pose = (x, y, heading); size = (length, width). Returns the boundary
    distance when disjoint and minus the penetration depth when overlapping,
    so clearance <= 0 means collision.
    """
    ca = rectangle_corners(*pose_a, *size_a)
    cb = rectangle_corners(*pose_b, *size_b)
    gaps = _axis_gaps(ca, cb)
    if max(gaps) > 0.0:
        # Disjoint: exact distance between the two convex boundaries.
        best = math.inf
        for i in range(4):
            for j in range(4):
                d = _segment_distance(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4])
                best = min(best, d)
        return best
    # Overlapping: penetration depth is the smallest axis overlap.
    return max(gaps)
