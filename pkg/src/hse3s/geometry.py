"""SE(3) poses, primitive shapes, ray-cast depth sensing, and height-map
projection.

Everything needed to manufacture the environment's state images: rigid
transforms, procedural shapes (boxes, cylinders, rigid composites), a pinhole
depth camera simulated by ray casting, point-cloud cropping to a gaze volume,
and the three-channel height-map encoding.

Conventions:
  - A Pose maps local to world coordinates: p_world = rotation @ p_local +
    translation.
  - A gaze frame has +z pointing from the scene toward the sensor; for a
    top-down gaze over the table the gaze rotation is the identity.
  - A camera pose (render_cloud) looks along its local +z axis with +x to the
    right and +y down the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# rotation matrices with |R^T R - I| beyond this are rejected / repaired
ORTHONORMAL_TOL = 1e-9
_RAY_EPS = 1e-12

IMAGE_RESOLUTION = 64


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise ValueError("expected a 3-vector, got shape %s" % (v.shape,))
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite 3-vector")
    return v


def _orthonormality_drift(rotation: np.ndarray) -> float:
    return float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))


def _reorthonormalize(rotation: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


@dataclass(frozen=True)
class Pose:
    """Rigid transform in SE(3): p_world = rotation @ p_local + translation.

    rotation must be orthonormal with determinant +1 (within ORTHONORMAL_TOL);
    translation is in meters.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = _vec3(self.translation).copy()
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if _orthonormality_drift(r) > ORTHONORMAL_TOL or np.linalg.det(r) < 0:
            raise ValueError("rotation is not orthonormal with det +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(t) -> "Pose":
        return Pose(np.eye(3), _vec3(t))

    @staticmethod
    def rot_x(angle: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        c, s = math.cos(angle), math.sin(angle)
        return Pose(np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float), t)

    @staticmethod
    def rot_y(angle: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        c, s = math.cos(angle), math.sin(angle)
        return Pose(np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float), t)

    @staticmethod
    def rot_z(angle: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        c, s = math.cos(angle), math.sin(angle)
        return Pose(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float), t)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform local points (..., 3) into the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Transform parent-frame points (..., 3) into this pose's frame."""
        p = np.asarray(points, dtype=float)
        return (p - self.translation) @ self.rotation


def compose(a: Pose, b: Pose) -> Pose:
    """Compose two rigid transforms; the result applies b, then a.

    The rotation product is re-orthonormalized (nearest rotation by SVD) when
    accumulated drift exceeds ORTHONORMAL_TOL.
    """
    r = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    if _orthonormality_drift(r) > ORTHONORMAL_TOL:
        r = _reorthonormalize(r)
    return Pose(r, t)


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle in radians of a 3x3 rotation matrix."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


@dataclass(frozen=True)
class Extent:
    """Length, width, height of an observed rectangular volume (meters)."""

    lengths: np.ndarray

    def __post_init__(self):
        v = _vec3(self.lengths).copy()
        if np.any(v <= 0):
            raise ValueError("extent lengths must be positive")
        v.flags.writeable = False
        object.__setattr__(self, "lengths", v)

    @staticmethod
    def cube(side: float) -> "Extent":
        return Extent(np.full(3, float(side)))

    @property
    def half(self) -> np.ndarray:
        return self.lengths / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def fits_within(self, other: "Extent") -> bool:
        return bool(np.all(self.lengths <= other.lengths + 1e-12))


class Shape:
    """Base class for rigid shapes used by the simulator."""

    __slots__ = ()


@dataclass(frozen=True)
class Box(Shape):
    """Axis-aligned box in its local frame, given by half extents."""

    half_extents: np.ndarray

    def __post_init__(self):
        v = _vec3(self.half_extents).copy()
        if np.any(v <= 0):
            raise ValueError("box half extents must be positive")
        v.flags.writeable = False
        object.__setattr__(self, "half_extents", v)


@dataclass(frozen=True)
class Cylinder(Shape):
    """Cylinder with axis +z in its local frame, centered at the origin."""

    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder dimensions must be positive")


@dataclass(frozen=True)
class Composite(Shape):
    """Rigid assembly of primitive parts, each at a fixed local pose.

    Parts must be primitives (nesting a Composite inside a Composite is
    rejected, keeping total nesting depth at most 2).
    """

    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("composite needs at least one part")
        for shape, pose in parts:
            if isinstance(shape, Composite):
                raise ValueError("composite parts must be primitive shapes")
            if not isinstance(shape, Shape) or not isinstance(pose, Pose):
                raise ValueError("composite parts must be (Shape, Pose) pairs")
        object.__setattr__(self, "parts", parts)


def primitive_parts(shape: Shape, pose: Pose):
    """Flatten a shape into [(primitive, world_pose)] pairs."""
    if isinstance(shape, Composite):
        return [(s, compose(pose, p)) for s, p in shape.parts]
    return [(shape, pose)]


@dataclass(frozen=True)
class PointCloud:
    """Sensed 3D points (N, 3) expressed in a declared reference frame."""

    points: np.ndarray
    frame: Pose

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if p.size and not np.all(np.isfinite(p)):
            raise ValueError("point cloud contains non-finite coordinates")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class HeightMapImage:
    """Three fixed-resolution height maps (channels along z, y, x) in [0, 1]."""

    channels: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.channels, dtype=float)
        if c.ndim != 3 or c.shape[0] != 3 or c.shape[1] != c.shape[2]:
            raise ValueError("channels must have shape (3, H, H)")
        if c.size and (c.min() < 0.0 or c.max() > 1.0):
            raise ValueError("height map values must lie in [0, 1]")
        c.flags.writeable = False
        object.__setattr__(self, "channels", c)

    @property
    def resolution(self) -> int:
        return self.channels.shape[1]


# ---------------------------------------------------------------------------
# ray and line intersections
# ---------------------------------------------------------------------------


def _box_line_interval(half, origin, direction):
    """Intersect an infinite line with a box; returns (t0, t1, n0, n1) or None.

    n0/n1 are outward face normals at the entry/exit points (local frame).
    """
    t0, t1 = -math.inf, math.inf
    n0 = np.zeros(3)
    n1 = np.zeros(3)
    for k in range(3):
        d = direction[k]
        o = origin[k]
        h = half[k]
        if abs(d) < 1e-15:
            if abs(o) > h:
                return None
            continue
        ta = (-h - o) / d
        tb = (h - o) / d
        if ta > tb:
            ta, tb = tb, ta
        # the line enters against the face normal and exits along it
        na = -1.0 if d > 0 else 1.0
        if ta > t0:
            t0 = ta
            n0 = np.zeros(3)
            n0[k] = na
        if tb < t1:
            t1 = tb
            n1 = np.zeros(3)
            n1[k] = -na
    if t0 > t1:
        return None
    return t0, t1, n0, n1


def _cylinder_line_interval(radius, height, origin, direction):
    """Intersect an infinite line with a solid cylinder (axis z, centered)."""
    hz = height / 2.0
    # z-slab constraint
    dz = direction[2]
    if abs(dz) < 1e-15:
        if abs(origin[2]) > hz:
            return None
        tz = (-math.inf, math.inf)
        nz = None
    else:
        ta = (-hz - origin[2]) / dz
        tb = (hz - origin[2]) / dz
        if ta > tb:
            ta, tb = tb, ta
        tz = (ta, tb)
        # entry cap opposes the direction of travel
        nz = np.array([0.0, 0.0, -1.0 if dz > 0 else 1.0])
    # radial constraint
    a = direction[0] ** 2 + direction[1] ** 2
    if a < 1e-18:
        if origin[0] ** 2 + origin[1] ** 2 > radius**2:
            return None
        tr = (-math.inf, math.inf)
        radial = False
    else:
        b = origin[0] * direction[0] + origin[1] * direction[1]
        c = origin[0] ** 2 + origin[1] ** 2 - radius**2
        disc = b * b - a * c
        if disc < 0:
            return None
        sq = math.sqrt(disc)
        tr = ((-b - sq) / a, (-b + sq) / a)
        radial = True

    def radial_normal(t):
        p = origin + t * direction
        n = np.array([p[0], p[1], 0.0])
        norm = np.linalg.norm(n)
        return n / norm if norm > 0 else np.array([1.0, 0.0, 0.0])

    if tz[0] >= tr[0]:
        t0, n0 = tz[0], nz
    else:
        t0, n0 = tr[0], None
    if tz[1] <= tr[1]:
        t1, n1 = tz[1], (-nz if nz is not None else None)
    else:
        t1, n1 = tr[1], None
    if t0 > t1:
        return None
    if n0 is None:
        n0 = radial_normal(t0)
    if n1 is None:
        n1 = radial_normal(t1)
    return t0, t1, n0, n1


def line_interval(shape: Shape, pose: Pose, origin, direction):
    """Intersect an infinite world-frame line with a solid shape.

    Returns (t_enter, t_exit, n_enter, n_exit) with outward world normals,
    or None if the line misses. For composites the hull interval is returned:
    earliest entry and latest exit over all parts (the surfaces a closing pair
    of fingers would touch first from either side).
    """
    o = _vec3(origin)
    d = _vec3(direction)
    if isinstance(shape, Composite):
        best = None
        for s, p in shape.parts:
            hit = line_interval(s, compose(pose, p), o, d)
            if hit is None:
                continue
            if best is None:
                best = list(hit)
            else:
                if hit[0] < best[0]:
                    best[0], best[2] = hit[0], hit[2]
                if hit[1] > best[1]:
                    best[1], best[3] = hit[1], hit[3]
        return None if best is None else tuple(best)
    lo = pose.apply_inverse(o)
    ld = d @ pose.rotation
    if isinstance(shape, Box):
        hit = _box_line_interval(shape.half_extents, lo, ld)
    elif isinstance(shape, Cylinder):
        hit = _cylinder_line_interval(shape.radius, shape.height, lo, ld)
    else:
        raise TypeError("unsupported shape %r" % (shape,))
    if hit is None:
        return None
    t0, t1, n0, n1 = hit
    return t0, t1, pose.rotation @ n0, pose.rotation @ n1


def _first_crossing(hit):
    if hit is None:
        return math.inf
    t0, t1 = hit[0], hit[1]
    if t0 > _RAY_EPS:
        return t0
    if t1 > _RAY_EPS:
        return t1
    return math.inf


def raycast(scene, origin, direction):
    """Cast a ray into a scene of (Shape, Pose) pairs.

    direction must be unit length (within 1e-9). Returns the nearest surface
    point as a 3-vector, or None on a miss. Exact distance ties are broken by
    the lowest scene index.
    """
    o = _vec3(origin)
    d = _vec3(direction)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("ray direction must be normalized")
    best = math.inf
    for shape, pose in scene:
        t = _first_crossing(line_interval(shape, pose, o, d))
        if t < best:
            best = t
    if not math.isfinite(best):
        return None
    return o + best * d


# vectorized first-hit helpers used by render_cloud -------------------------


def _ray_box_batch(half, origins, dirs):
    """First-crossing ts for N rays against a local-frame box; inf on miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (-half - origins) * inv
        tb = (half - origins) * inv
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    # rays parallel to a slab: reject if outside, ignore constraint if inside
    parallel = np.abs(dirs) < 1e-15
    inside = np.abs(origins) <= half
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    t0 = tmin.max(axis=1)
    t1 = tmax.min(axis=1)
    hit = t0 <= t1
    t = np.where(t0 > _RAY_EPS, t0, np.where(t1 > _RAY_EPS, t1, np.inf))
    return np.where(hit, t, np.inf)


def _ray_cylinder_batch(radius, height, origins, dirs):
    hz = height / 2.0
    oz = origins[:, 2]
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        tza = (-hz - oz) / dz
        tzb = (hz - oz) / dz
    tz0 = np.minimum(tza, tzb)
    tz1 = np.maximum(tza, tzb)
    parallel = np.abs(dz) < 1e-15
    inside_z = np.abs(oz) <= hz
    tz0 = np.where(parallel, np.where(inside_z, -np.inf, np.inf), tz0)
    tz1 = np.where(parallel, np.where(inside_z, np.inf, -np.inf), tz1)

    a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2
    b = origins[:, 0] * dirs[:, 0] + origins[:, 1] * dirs[:, 1]
    c = origins[:, 0] ** 2 + origins[:, 1] ** 2 - radius**2
    disc = b * b - a * c
    vertical = a < 1e-18
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        tr0 = (-b - sq) / a
        tr1 = (-b + sq) / a
    inside_r = c <= 0
    tr0 = np.where(vertical, np.where(inside_r, -np.inf, np.inf), tr0)
    tr1 = np.where(vertical, np.where(inside_r, np.inf, -np.inf), tr1)
    miss_r = (~vertical) & (disc < 0)
    tr0 = np.where(miss_r, np.inf, tr0)
    tr1 = np.where(miss_r, -np.inf, tr1)

    t0 = np.maximum(tz0, tr0)
    t1 = np.minimum(tz1, tr1)
    hit = t0 <= t1
    t = np.where(t0 > _RAY_EPS, t0, np.where(t1 > _RAY_EPS, t1, np.inf))
    return np.where(hit, t, np.inf)


def _batch_ts(shape, pose, origin, dirs):
    if isinstance(shape, Composite):
        ts = [_batch_ts(s, compose(pose, p), origin, dirs) for s, p in shape.parts]
        return np.min(ts, axis=0)
    lo = pose.apply_inverse(origin)
    ld = dirs @ pose.rotation
    los = np.broadcast_to(lo, ld.shape)
    if isinstance(shape, Box):
        return _ray_box_batch(shape.half_extents, los, ld)
    if isinstance(shape, Cylinder):
        return _ray_cylinder_batch(shape.radius, shape.height, los, ld)
    raise TypeError("unsupported shape %r" % (shape,))


def render_cloud(scene, viewpoint: Pose, rows: int, cols: int,
                 fov: float = math.radians(70.0)) -> PointCloud:
    """Render a depth image of the scene and return hits as a world cloud.

    One ray per pixel through a pinhole grid: the camera sits at the viewpoint
    origin and looks along its local +z with the given field of view. Missed
    rays are omitted. The returned cloud is expressed in the world frame.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    tan_half = math.tan(fov / 2.0)
    xs = (np.arange(cols) + 0.5) / cols * 2.0 - 1.0
    ys = (np.arange(rows) + 0.5) / rows * 2.0 - 1.0
    gx, gy = np.meshgrid(xs * tan_half, ys * tan_half)
    dirs_cam = np.stack([gx.ravel(), gy.ravel(), np.ones(gx.size)], axis=1)
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)
    dirs = dirs_cam @ viewpoint.rotation.T
    origin = viewpoint.translation
    if not scene:
        return PointCloud(np.zeros((0, 3)), Pose.identity())
    all_ts = np.stack([_batch_ts(s, p, origin, dirs) for s, p in scene])
    ts = all_ts.min(axis=0)
    ok = np.isfinite(ts)
    pts = origin + ts[ok, None] * dirs[ok]
    return PointCloud(pts, Pose.identity())


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose at `position` whose +z axis points at `target`."""
    pos = _vec3(position)
    fwd = _vec3(target) - pos
    fwd = fwd / np.linalg.norm(fwd)
    upv = _vec3(up)
    right = np.cross(fwd, -upv)
    n = np.linalg.norm(right)
    if n < 1e-12:
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        n = np.linalg.norm(right)
    right /= n
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd], axis=1)
    return Pose(_reorthonormalize(r), pos)


# ---------------------------------------------------------------------------
# cropping and height maps
# ---------------------------------------------------------------------------


def crop_mask(cloud: PointCloud, gaze: Pose, extent: Extent) -> np.ndarray:
    """Boolean mask of cloud points inside the gaze volume (closed bounds).

    The gaze pose is interpreted relative to the cloud's declared frame.
    """
    if not len(cloud):
        return np.zeros(0, dtype=bool)
    local = gaze.apply_inverse(cloud.points)
    return np.all(np.abs(local) <= extent.half, axis=1)


def crop(cloud: PointCloud, gaze: Pose, extent: Extent) -> PointCloud:
    """Crop a cloud to the rectangular gaze volume.

    The gaze pose is interpreted relative to the cloud's declared frame.
    Points are re-expressed in the gaze frame and kept when all three
    coordinates satisfy |p_k| <= extent_k / 2 (boundaries included). The
    returned cloud's frame is the gaze frame (cloud.frame composed with gaze),
    so nested crops with shrinking extents behave like a single direct crop.
    """
    local = gaze.apply_inverse(cloud.points) if len(cloud) else cloud.points
    if len(cloud):
        local = local[crop_mask(cloud, gaze, extent)]
    return PointCloud(local, compose(cloud.frame, gaze))


# per channel: (projection axis, row axis, col axis, flip row?)
_CHANNEL_AXES = ((2, 1, 0), (1, 2, 0), (0, 2, 1))


def height_maps(cloud: PointCloud, extent: Extent,
                resolution: int = IMAGE_RESOLUTION) -> HeightMapImage:
    """Project a gaze-frame cloud into three normalized height maps.

    The cloud must already be expressed in the gaze frame and cropped to the
    extent. Channel k stores, per cell, the maximum coordinate along its
    projection axis (z, y, x for channels 0, 1, 2), affinely normalized so
    -extent/2 -> 0 and +extent/2 -> 1. Empty cells are 0. Channel layouts:
    channel 0 rows run +y (top) to -y, cols -x to +x; channels 1 and 2 have
    rows +z (top) to -z with cols -x to +x and -y to +y respectively.
    """
    img = np.zeros((3, resolution, resolution))
    pts = cloud.points
    if pts.shape[0] == 0:
        return HeightMapImage(img)
    half = extent.half
    cell = extent.lengths / resolution
    for ch, (axis, row_axis, col_axis) in enumerate(_CHANNEL_AXES):
        vals = (pts[:, axis] + half[axis]) / extent.lengths[axis]
        rows = np.floor((half[row_axis] - pts[:, row_axis]) / cell[row_axis])
        cols = np.floor((pts[:, col_axis] + half[col_axis]) / cell[col_axis])
        rows = np.clip(rows, 0, resolution - 1).astype(np.intp)
        cols = np.clip(cols, 0, resolution - 1).astype(np.intp)
        flat = rows * resolution + cols
        order = np.argsort(flat, kind="stable")
        flat_sorted = flat[order]
        vals_sorted = vals[order]
        starts = np.flatnonzero(np.r_[True, np.diff(flat_sorted) > 0])
        cell_max = np.maximum.reduceat(vals_sorted, starts)
        occupied = flat_sorted[starts]
        img[ch, occupied // resolution, occupied % resolution] = np.clip(
            cell_max, 0.0, 1.0)
    return HeightMapImage(img)
