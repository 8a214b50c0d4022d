"""Quaternion and planar-geometry primitives for oriented 3D boxes.

Rotation interpolation (slerp), translation interpolation, rotated
bird's-eye-view IoU via convex polygon clipping, and planar center distance.
All angles are radians, all lengths meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Skip renormalization when |q|^2 is already this close to 1 so that
# constructing from an already-unit quaternion preserves its bits exactly.
_UNIT_NORM_SQ_TOL = 1e-12
# Inputs further from unit than this are rejected by slerp.
_SLERP_INPUT_TOL = 1e-6
# Arc angle below which slerp falls back to normalized linear interpolation.
_SLERP_NLERP_ANGLE = 1e-6


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(angle, math.tau)
    if r <= -math.pi:
        r += math.tau
    return r


@dataclass(frozen=True, slots=True)
class Vec3:
    """Point or displacement in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite Vec3 component: {self}")


@dataclass(frozen=True, slots=True)
class Quaternion:
    """Unit quaternion, scalar-first (w, x, y, z).

    Normalized on construction and canonicalized to w >= 0; q and -q denote
    the same rotation.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n2 = self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
        if not math.isfinite(n2) or n2 == 0.0:
            raise ValueError("zero or non-finite quaternion")
        if abs(n2 - 1.0) > _UNIT_NORM_SQ_TOL:
            inv = 1.0 / math.sqrt(n2)
            for name in ("w", "x", "y", "z"):
                object.__setattr__(self, name, getattr(self, name) * inv)
        if self.w < 0.0:
            for name in ("w", "x", "y", "z"):
                object.__setattr__(self, name, -getattr(self, name))

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def rot_z(angle: float) -> "Quaternion":
        """Rotation by `angle` about the +z (up) axis."""
        half = 0.5 * angle
        return Quaternion(math.cos(half), 0.0, 0.0, math.sin(half))

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def dot(self, other: "Quaternion") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def yaw(self) -> float:
        """Heading about +z, in (-pi, pi]."""
        siny = 2.0 * (self.w * self.z + self.x * self.y)
        cosy = 1.0 - 2.0 * (self.y * self.y + self.z * self.z)
        return math.atan2(siny, cosy)


@dataclass(frozen=True, slots=True)
class BevRect:
    """Rotated rectangle in the ground plane.

    `length` extends along the heading given by `yaw`, `width` across it.
    """

    center_x: float
    center_y: float
    width: float
    length: float
    yaw: float

    def __post_init__(self):
        if not (self.width > 0.0 and self.length > 0.0):
            raise ValueError(f"non-positive rectangle size: {self.width} x {self.length}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def area(self) -> float:
        return self.width * self.length

    def corners(self) -> list[tuple[float, float]]:
        """Corner coordinates in counter-clockwise order."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        out = []
        for lx, ly in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
            out.append((self.center_x + c * lx - s * ly, self.center_y + s * lx + c * ly))
        return out


def lerp_translation(tr_s: Vec3, tr_e: Vec3, t_s: int, t_e: int, t: int) -> Vec3:
    """Linearly interpolate a translation between two timestamps (microseconds)."""
    if t_s == t_e:
        raise ValueError("zero-length interval")
    if t_s > t_e:
        raise ValueError(f"interval reversed: {t_s} > {t_e}")
    if not (t_s <= t <= t_e):
        raise ValueError(f"extrapolation refused: t={t} outside [{t_s}, {t_e}]")
    span = t_e - t_s
    w_s = (t_e - t) / span
    w_e = (t - t_s) / span
    return Vec3(
        w_s * tr_s.x + w_e * tr_e.x,
        w_s * tr_s.y + w_e * tr_e.y,
        w_s * tr_s.z + w_e * tr_e.z,
    )


def slerp(q_s: Quaternion, q_e: Quaternion, u: float) -> Quaternion:
    """Spherical linear interpolation along the shortest arc.

    `u` is the fraction elapsed from the start: slerp(a, b, 0) == a and
    slerp(a, b, 1) == b. Degrades to normalized lerp for near-identical
    rotations.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"interpolation fraction outside [0, 1]: {u}")
    for q in (q_s, q_e):
        if abs(q.w**2 + q.x**2 + q.y**2 + q.z**2 - 1.0) > _SLERP_INPUT_TOL:
            raise ValueError("unnormalized quaternion")

    d = q_s.dot(q_e)
    sign = 1.0
    if d < 0.0:  # shortest arc: interpolate toward -q_e
        d = -d
        sign = -1.0
    d = min(d, 1.0)
    theta = math.atan2(math.sqrt(max(0.0, 1.0 - d * d)), d)
    if theta < _SLERP_NLERP_ANGLE:
        w_s, w_e = 1.0 - u, u * sign
    else:
        sin_theta = math.sin(theta)
        w_s = math.sin((1.0 - u) * theta) / sin_theta
        w_e = math.sin(u * theta) / sin_theta * sign
    return Quaternion(
        w_s * q_s.w + w_e * q_e.w,
        w_s * q_s.x + w_e * q_e.x,
        w_s * q_s.y + w_e * q_e.y,
        w_s * q_s.z + w_e * q_e.z,
    )


def _clip_polygon(subject: list[tuple[float, float]], clip: list[tuple[float, float]]):
    """Sutherland-Hodgman clip of `subject` by convex CCW polygon `clip`.

    Boundary-inclusive, so clipping a polygon by itself returns its own
    vertices unchanged.
    """
    output = subject
    cx1, cy1 = clip[-1]
    for cx2, cy2 in clip:
        if not output:
            return []
        ex, ey = cx2 - cx1, cy2 - cy1
        inside = [ex * (py - cy1) - ey * (px - cx1) >= 0.0 for px, py in output]
        result = []
        n = len(output)
        for i in range(n):
            j = (i + 1) % n
            if inside[i]:
                result.append(output[i])
            if inside[i] != inside[j]:
                sx, sy = output[i]
                px, py = output[j]
                dx, dy = px - sx, py - sy
                denom = ex * dy - ey * dx
                # denom == 0 would mean a segment parallel to the clip edge
                # changing sides, which cannot happen.
                tpar = (ex * (sy - cy1) - ey * (sx - cx1)) / -denom
                result.append((sx + tpar * dx, sy + tpar * dy))
        output = result
        cx1, cy1 = cx2, cy2
    return output


def _polygon_area(points) -> float:
    if len(points) < 3:
        return 0.0
    acc = 0.0
    n = len(points)
    for i in range(n):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * abs(acc)


def bev_iou(a: BevRect, b: BevRect) -> float:
    """Intersection over union of two rotated rectangles in the ground plane."""
    inter = _polygon_area(_clip_polygon(a.corners(), b.corners()))
    if inter <= 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def center_distance(a: Vec3, b: Vec3) -> float:
    """Euclidean distance in the ground plane; z is ignored."""
    return math.hypot(a.x - b.x, a.y - b.y)
