"""Shared oracle implementations for the test suite.

These deliberately re-derive results through slow, independent routes
(containment inequalities, ray marching, per-cell scans, surface sampling)
so the fast production code has something honest to be checked against.
"""

import math

import numpy as np

from hse3s.geometry import Box, Composite, Cylinder, Pose, compose


def contains(shape, pose, point, slack=0.0):
    """Point-in-solid test via direct inequalities (independent of GJK)."""
    p = pose.apply_inverse(np.asarray(point, dtype=float))
    if isinstance(shape, Box):
        return bool(np.all(np.abs(p) <= shape.half_extents + slack))
    if isinstance(shape, Cylinder):
        return (p[0] ** 2 + p[1] ** 2 <= (shape.radius + slack) ** 2
                and abs(p[2]) <= shape.height / 2.0 + slack)
    if isinstance(shape, Composite):
        return any(contains(s, compose(pose, pp), point, slack)
                   for s, pp in shape.parts)
    raise TypeError(shape)


def contains_many(shape, pose, points, slack=0.0):
    """Vectorized containment for (N, 3) points."""
    p = pose.apply_inverse(np.asarray(points, dtype=float))
    if isinstance(shape, Box):
        return np.all(np.abs(p) <= shape.half_extents + slack, axis=1)
    if isinstance(shape, Cylinder):
        return ((p[:, 0] ** 2 + p[:, 1] ** 2 <= (shape.radius + slack) ** 2)
                & (np.abs(p[:, 2]) <= shape.height / 2.0 + slack))
    if isinstance(shape, Composite):
        out = np.zeros(len(p), dtype=bool)
        for s, pp in shape.parts:
            out |= contains_many(s, compose(pose, pp), points, slack)
        return out
    raise TypeError(shape)


def ray_march(scene, origin, direction, t_max=5.0, step=1e-3, refine=1e-7):
    """First-surface distance by marching + bisection; None on a miss."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)

    def inside(t):
        pt = o + t * d
        return any(contains(s, p, pt) for s, p in scene)

    prev_t = 0.0
    prev_in = inside(0.0)
    t = step
    while t <= t_max:
        cur = inside(t)
        if cur != prev_in:
            lo, hi = prev_t, t
            while hi - lo > refine:
                mid = (lo + hi) / 2.0
                if inside(mid) != prev_in:
                    hi = mid
                else:
                    lo = mid
            return (lo + hi) / 2.0
        prev_t, prev_in = t, cur
        t += step
    return None


def brute_height_maps(points, extent, resolution):
    """Per-cell max scan over raw python loops; mirrors the documented layout."""
    img = np.zeros((3, resolution, resolution))
    half = extent.lengths / 2.0
    cell = extent.lengths / resolution
    layouts = ((2, 1, 0), (1, 2, 0), (0, 2, 1))
    for ch, (axis, row_axis, col_axis) in enumerate(layouts):
        for p in points:
            i = int(math.floor((half[row_axis] - p[row_axis]) / cell[row_axis]))
            j = int(math.floor((p[col_axis] + half[col_axis]) / cell[col_axis]))
            i = min(max(i, 0), resolution - 1)
            j = min(max(j, 0), resolution - 1)
            v = (p[axis] + half[axis]) / extent.lengths[axis]
            v = min(max(v, 0.0), 1.0)
            if v > img[ch, i, j]:
                img[ch, i, j] = v
    return img


def surface_samples(shape, pose, spacing):
    """Dense (points, outward normals) sampling of a shape's surface.

    Normals come straight from each face/lateral parametrization, making this
    an independent route to contact normals.
    """
    pts = []
    nrm = []
    if isinstance(shape, Composite):
        for s, pp in shape.parts:
            p, n = surface_samples(s, compose(pose, pp), spacing)
            pts.append(p)
            nrm.append(n)
        return np.concatenate(pts), np.concatenate(nrm)
    if isinstance(shape, Box):
        h = shape.half_extents
        for axis in range(3):
            u_axis, v_axis = [k for k in range(3) if k != axis]
            us = np.arange(-h[u_axis], h[u_axis] + spacing / 2, spacing)
            vs = np.arange(-h[v_axis], h[v_axis] + spacing / 2, spacing)
            uu, vv = np.meshgrid(us, vs)
            for sign in (-1.0, 1.0):
                p = np.zeros((uu.size, 3))
                p[:, axis] = sign * h[axis]
                p[:, u_axis] = uu.ravel()
                p[:, v_axis] = vv.ravel()
                n = np.zeros((uu.size, 3))
                n[:, axis] = sign
                pts.append(p)
                nrm.append(n)
    elif isinstance(shape, Cylinder):
        r, hz = shape.radius, shape.height / 2.0
        n_ang = max(8, int(round(2 * math.pi * r / spacing)))
        angles = np.arange(n_ang) * (2 * math.pi / n_ang)
        zs = np.arange(-hz, hz + spacing / 2, spacing)
        aa, zz = np.meshgrid(angles, zs)
        lateral = np.stack([r * np.cos(aa.ravel()), r * np.sin(aa.ravel()),
                            zz.ravel()], axis=1)
        lat_n = np.stack([np.cos(aa.ravel()), np.sin(aa.ravel()),
                          np.zeros(aa.size)], axis=1)
        pts.append(lateral)
        nrm.append(lat_n)
        rs = np.arange(0.0, r + spacing / 2, spacing)
        rr, a2 = np.meshgrid(rs, angles)
        for sign in (-1.0, 1.0):
            cap = np.stack([rr.ravel() * np.cos(a2.ravel()),
                            rr.ravel() * np.sin(a2.ravel()),
                            np.full(rr.size, sign * hz)], axis=1)
            cap_n = np.zeros((rr.size, 3))
            cap_n[:, 2] = sign
            pts.append(cap)
            nrm.append(cap_n)
    else:
        raise TypeError(shape)
    pts = np.concatenate(pts)
    nrm = np.concatenate(nrm)
    return pose.apply(pts), nrm @ pose.rotation.T


def random_rotation(rng):
    """Uniform-ish random rotation built from three random axis rotations."""
    a, b, c = rng.uniform(-math.pi, math.pi, 3)
    p = compose(Pose.rot_z(a), compose(Pose.rot_y(b), Pose.rot_x(c)))
    return p.rotation


def random_pose(rng, span=0.3):
    t = rng.uniform(-span, span, 3)
    return Pose(random_rotation(rng), t)


# ---------------------------------------------------------------------------
# grasp and collision oracles
# ---------------------------------------------------------------------------


def antipodal_oracle(objects, gripper_pose, max_width, half_angle,
                     march_step=2.5e-4, normal_spacing=5e-4,
                     sample_cache=None):
    """Independent antipodal decision via containment marching plus
    surface-sampled normals.

    Marches the closing segment from both finger start positions to find the
    outermost contacts, attributes them to objects by containment, and takes
    contact normals from the nearest dense surface sample (parametric
    normals). Returns (decision: bool, reason: str).
    """
    u = gripper_pose.rotation[:, 0]
    origin = gripper_pose.translation
    w2 = max_width / 2.0

    def point(t):
        return origin + t * u

    def inside_any(t):
        return any(contains(o.shape, o.pose, point(t)) for o in objects)

    if inside_any(-w2) or inside_any(w2):
        return False, "finger start inside an object"

    ts = np.arange(-w2, w2 + march_step / 2, march_step)
    occupancy = [inside_any(t) for t in ts]
    if not any(occupancy):
        return False, "no contact"
    first = next(i for i, v in enumerate(occupancy) if v)
    last = len(occupancy) - 1 - next(
        i for i, v in enumerate(reversed(occupancy)) if v)

    def refine(t_out, t_in):
        for _ in range(40):
            mid = (t_out + t_in) / 2.0
            if inside_any(mid):
                t_in = mid
            else:
                t_out = mid
        return (t_out + t_in) / 2.0

    t_lo = refine(ts[first] - march_step, ts[first])
    t_hi = refine(ts[last] + march_step, ts[last])

    def owner(t_in):
        for o in objects:
            if contains(o.shape, o.pose, point(t_in), slack=1e-6):
                return o
        return None

    obj_lo = owner(t_lo + 1e-5)
    obj_hi = owner(t_hi - 1e-5)
    if obj_lo is None or obj_hi is None:
        return False, "unattributable contact"
    if obj_lo is not obj_hi:
        return False, "two objects"
    if (t_hi - t_lo) > max_width:
        return False, "too wide"

    if sample_cache is not None and id(obj_lo) in sample_cache:
        spts, snrm = sample_cache[id(obj_lo)]
    else:
        spts, snrm = surface_samples(obj_lo.shape, obj_lo.pose, normal_spacing)
        if sample_cache is not None:
            sample_cache[id(obj_lo)] = (spts, snrm)

    def sampled_normal(p):
        d = np.linalg.norm(spts - p, axis=1)
        return snrm[np.argmin(d)]

    n_lo = sampled_normal(point(t_lo))
    n_hi = sampled_normal(point(t_hi))
    a_lo = math.acos(float(np.clip(n_lo @ -u, -1, 1)))
    a_hi = math.acos(float(np.clip(n_hi @ u, -1, 1)))
    if a_lo <= half_angle and a_hi <= half_angle:
        return True, "antipodal"
    return False, "outside friction cone"


def voxel_points(box_half, spacing=1e-3):
    """Cell-centered grid filling a box of given half extents."""
    axes = [np.arange(-h + spacing / 2, h, spacing) for h in box_half]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def collision_oracle(scene, gripper_parts, held_shape_pose=None,
                     spacing=1e-3):
    """Point-containment collision decision at the given sampling resolution.

    gripper_parts: [(Box, world Pose)]. Checks every sampled interior point of
    each part (and of a held shape) against all scene objects and the table
    plane z=0.
    """
    bodies = []
    for shape, pose in gripper_parts:
        bodies.append((voxel_points(shape.half_extents, spacing), pose))
    if held_shape_pose is not None:
        shape, pose = held_shape_pose
        pts = []
        for prim, ppose in ([(s, compose(pose, pp)) for s, pp in shape.parts]
                            if isinstance(shape, Composite)
                            else [(shape, pose)]):
            if isinstance(prim, Box):
                local = voxel_points(prim.half_extents, spacing)
            else:
                bound = np.array([prim.radius, prim.radius, prim.height / 2])
                local = voxel_points(bound, spacing)
                keep = local[:, 0] ** 2 + local[:, 1] ** 2 <= prim.radius ** 2
                local = local[keep]
            bodies.append((local, ppose))
    for local, pose in bodies:
        world = pose.apply(local)
        if (world[:, 2] < 0).any():
            return True
        for obj in scene:
            if contains_many(obj.shape, obj.pose, world).any():
                return True
    return False
