"""Convex distance queries for collision checking.

Boxes and cylinders (and rigid composites of them) are convex enough to be
handled by support functions plus the GJK distance algorithm. Distances are
exact up to the iteration tolerance (~1e-9 m), which is far below the
millimeter scales the simulator cares about.

Contact semantics: resting contact is not a collision. `shapes_collide`
erodes both shapes by half the contact tolerance before the distance query,
so only interpenetration deeper than the tolerance registers.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import Box, Composite, Cylinder, Pose, Shape, compose, primitive_parts

CONTACT_TOL = 5e-4  # penetration below this counts as touching, not collision
_GJK_TOL = 1e-10
_MAX_ITER = 128


def support_local(shape: Shape, direction: np.ndarray) -> np.ndarray:
    """Farthest point of a primitive along `direction`, in its local frame."""
    if isinstance(shape, Box):
        return np.where(direction >= 0.0, shape.half_extents,
                        -shape.half_extents)
    if isinstance(shape, Cylinder):
        r = math.hypot(direction[0], direction[1])
        if r > 1e-15:
            x = shape.radius * direction[0] / r
            y = shape.radius * direction[1] / r
        else:
            x = y = 0.0
        z = shape.height / 2.0 if direction[2] >= 0 else -shape.height / 2.0
        return np.array([x, y, z])
    raise TypeError("support is defined for primitives only, got %r" % (shape,))


def support_world(shape: Shape, pose: Pose, direction) -> np.ndarray:
    """Farthest world point of a shape along a world direction."""
    d = np.asarray(direction, dtype=float)
    if isinstance(shape, Composite):
        best = None
        best_dot = -math.inf
        for s, p in shape.parts:
            pt = support_world(s, compose(pose, p), d)
            val = float(pt @ d)
            if val > best_dot:
                best_dot = val
                best = pt
        return best
    local = support_local(shape, d @ pose.rotation)
    return pose.rotation @ local + pose.translation


def lowest_point(shape: Shape, pose: Pose) -> float:
    """World z of the lowest point of a shape."""
    return float(support_world(shape, pose, np.array([0.0, 0.0, -1.0]))[2])


def highest_point(shape: Shape, pose: Pose) -> float:
    return float(support_world(shape, pose, np.array([0.0, 0.0, 1.0]))[2])


# ---------------------------------------------------------------------------
# closest point to the origin on a simplex (Ericson-style case analysis)
# ---------------------------------------------------------------------------


def _closest_on_segment(a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-300:
        return a, [a]
    t = -float(a @ ab) / denom
    if t <= 0.0:
        return a, [a]
    if t >= 1.0:
        return b, [b]
    return a + t * ab, [a, b]


def _closest_on_triangle(a, b, c):
    ab = b - a
    ac = c - a
    d1 = -float(ab @ a)
    d2 = -float(ac @ a)
    if d1 <= 0.0 and d2 <= 0.0:
        return a, [a]
    d3 = -float(ab @ b)
    d4 = -float(ac @ b)
    if d3 >= 0.0 and d4 <= d3:
        return b, [b]
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab, [a, b]
    d5 = -float(ab @ c)
    d6 = -float(ac @ c)
    if d6 >= 0.0 and d5 <= d6:
        return c, [c]
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac, [a, c]
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b), [b, c]
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w, [a, b, c]


def _origin_outside_plane(a, b, c, d):
    n = np.cross(b - a, c - a)
    signo = -float(a @ n)
    signd = float((d - a) @ n)
    if abs(signd) < 1e-300:
        return True  # degenerate tetrahedron: force reduction to a face
    return signo * signd < 0.0


def _closest_on_tetrahedron(a, b, c, d):
    best = None
    best_sq = math.inf
    inside = True
    for (p, q, r, s) in ((a, b, c, d), (a, c, d, b), (a, b, d, c), (b, c, d, a)):
        if _origin_outside_plane(p, q, r, s):
            inside = False
            pt, sup = _closest_on_triangle(p, q, r)
            sq = float(pt @ pt)
            if sq < best_sq:
                best_sq = sq
                best = (pt, sup)
    if inside:
        return np.zeros(3), [a, b, c, d]
    return best


def _closest_on_simplex(simplex):
    if len(simplex) == 1:
        return simplex[0], [simplex[0]]
    if len(simplex) == 2:
        return _closest_on_segment(simplex[0], simplex[1])
    if len(simplex) == 3:
        return _closest_on_triangle(simplex[0], simplex[1], simplex[2])
    return _closest_on_tetrahedron(*simplex)


# ---------------------------------------------------------------------------
# GJK distance
# ---------------------------------------------------------------------------


def gjk_distance(shape_a: Shape, pose_a: Pose, shape_b: Shape, pose_b: Pose,
                 tol: float = _GJK_TOL) -> float:
    """Distance between two convex primitives; 0.0 when they touch/overlap."""

    def minkowski_support(d):
        return (support_world(shape_a, pose_a, d)
                - support_world(shape_b, pose_b, -d))

    d0 = pose_a.translation - pose_b.translation
    if float(d0 @ d0) < 1e-18:
        d0 = np.array([1.0, 0.0, 0.0])
    simplex = [minkowski_support(d0)]
    for _ in range(_MAX_ITER):
        v, simplex = _closest_on_simplex(simplex)
        vsq = float(v @ v)
        if vsq < tol * tol:
            return 0.0
        w = minkowski_support(-v)
        # no further progress possible: |v| is the distance
        if vsq - float(v @ w) <= tol * math.sqrt(vsq) + 1e-300:
            return math.sqrt(vsq)
        for s in simplex:
            if float((w - s) @ (w - s)) < 1e-24:
                return math.sqrt(vsq)
        simplex.append(w)
    return math.sqrt(float(v @ v))


def separation(shape_a: Shape, pose_a: Pose, shape_b: Shape, pose_b: Pose) -> float:
    """Minimum distance between two (possibly composite) shapes."""
    best = math.inf
    for sa, pa in primitive_parts(shape_a, pose_a):
        for sb, pb in primitive_parts(shape_b, pose_b):
            d = gjk_distance(sa, pa, sb, pb)
            if d < best:
                best = d
                if best == 0.0:
                    return 0.0
    return best


def inflate(shape: Shape, delta: float) -> Shape:
    """Grow (delta > 0) or shrink (delta < 0) a shape by a margin.

    Exact for boxes and cylinders; composites are inflated part-wise, which
    for shrinking slightly under-approximates erosion near internal seams.
    """
    floor = 1e-6
    if isinstance(shape, Box):
        return Box(np.maximum(shape.half_extents + delta, floor))
    if isinstance(shape, Cylinder):
        return Cylinder(max(shape.radius + delta, floor),
                        max(shape.height + 2.0 * delta, floor))
    if isinstance(shape, Composite):
        return Composite(tuple((inflate(s, delta), p) for s, p in shape.parts))
    raise TypeError("cannot inflate %r" % (shape,))


def shapes_collide(shape_a: Shape, pose_a: Pose, shape_b: Shape, pose_b: Pose,
                   tol: float = CONTACT_TOL) -> bool:
    """True when two shapes interpenetrate deeper than the contact tolerance."""
    a = inflate(shape_a, -tol / 2.0)
    b = inflate(shape_b, -tol / 2.0)
    return separation(a, pose_a, b, pose_b) < 1e-9
