"""The environment: cluttered scenes of procedural objects, an abstract
parallel-jaw gripper, sense and move-effect transitions, grasp/place success
oracles, and partial-credit reward functions.

World frame: the table top is the z = 0 plane, the workspace is a
40 x 40 x 36 cm box centered above the table origin. Motions are teleports
with collision and feasibility checks; there are no dynamics beyond a small
settle-on-release snap.

Sensing is virtual: a scene is rendered once per scene change from two fixed
viewpoints 45 degrees above the table on opposite sides, and every sense
action crops and reprojects that merged cloud.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from shapely.geometry import MultiPoint

from . import convex
from .convex import (CONTACT_TOL, highest_point, lowest_point, separation,
                     shapes_collide)
from .geometry import (Box, Composite, Cylinder, Extent, IMAGE_RESOLUTION,
                       PointCloud, Pose, compose, crop, height_maps,
                       line_interval, look_at, render_cloud)

WORKSPACE_HALF_XY = 0.20
WORKSPACE_HEIGHT = 0.36
OBSERVE_SIDE = 0.36  # initial zoomed-out observation volume (cube side)
SPAWN_HALF_XY = 0.16
SPAWN_CLEARANCE = 0.003
TABLE_SHAPE = Box(np.array([0.4, 0.4, 0.02]))
TABLE_POSE = Pose(np.eye(3), np.array([0.0, 0.0, -0.02]))

VIEW_DISTANCE = 0.55
VIEW_ELEVATION = math.radians(45.0)
DEFAULT_RENDER_RESOLUTION = 160

TASKS = ("blocks", "mugs", "bottles")
OBJECT_COUNT_RANGE = {"blocks": (2, 10), "mugs": (1, 5), "bottles": (1, 3)}
N_COASTERS = 3

_APPROACH_STEPS = np.arange(1, 9) * 0.02  # vertical sweep up to 16 cm


@dataclass(frozen=True)
class GripperConfig:
    """Dimensions of the abstract parallel-jaw gripper (meters/radians)."""

    max_width: float = 0.085
    finger_thickness: float = 0.010
    finger_width: float = 0.020
    finger_depth: float = 0.040
    palm_thickness: float = 0.015
    friction_half_angle: float = math.radians(10.0)


def gripper_body(cfg: GripperConfig):
    """Collision body in the gripper frame: two finger boxes and a palm box.

    The closing line runs along local x through the origin; fingers extend
    from z = 0 (tips) to z = finger_depth, the palm sits behind them. The
    fingers are modeled at the full open width.
    """
    fx = cfg.max_width / 2 + cfg.finger_thickness / 2
    finger = Box(np.array([cfg.finger_thickness / 2, cfg.finger_width / 2,
                           cfg.finger_depth / 2]))
    palm = Box(np.array([cfg.max_width / 2 + cfg.finger_thickness,
                         cfg.finger_width / 2, cfg.palm_thickness / 2]))
    zf = cfg.finger_depth / 2
    zp = cfg.finger_depth + cfg.palm_thickness / 2
    return [
        (finger, Pose(np.eye(3), np.array([-fx, 0.0, zf]))),
        (finger, Pose(np.eye(3), np.array([fx, 0.0, zf]))),
        (palm, Pose(np.eye(3), np.array([0.0, 0.0, zp]))),
    ]


@dataclass(frozen=True)
class SceneObject:
    id: int
    category: str
    shape: object
    pose: Pose


@dataclass(frozen=True)
class Gripper:
    aperture: str  # "open" | "closed"
    max_width: float
    finger_depth: float
    pose: Pose
    held: tuple | None = None  # (object id, grasp transform)

    def __post_init__(self):
        if self.aperture not in ("open", "closed"):
            raise ValueError("aperture must be open or closed")
        if self.held is not None and self.aperture != "closed":
            raise ValueError("a holding gripper must be closed")


@dataclass(frozen=True)
class RewardSpec:
    """Evaluated named reward conditions for one grasp or place attempt.

    All required conditions must hold for a nonzero reward; meeting them is
    worth half credit, and the rest scales with the fraction of partial
    conditions met, so a fully clean attempt scores 1.
    """

    required: tuple  # ((name, bool), ...)
    partial: tuple

    @property
    def reward(self) -> float:
        if not all(ok for _, ok in self.required):
            return 0.0
        if not self.partial:
            return 1.0
        frac = sum(1.0 for _, ok in self.partial if ok) / len(self.partial)
        return 0.5 + 0.5 * frac

    def as_dict(self):
        return {"required": dict(self.required), "partial": dict(self.partial)}


@dataclass(frozen=True)
class EnvState:
    """Full environment state; treat as immutable and update via transitions."""

    task: str
    scene: tuple
    gripper: Gripper
    cloud: PointCloud
    gaze: Pose
    extent: Extent
    i1: np.ndarray  # (3, R, R) current observation
    i2: np.ndarray  # (3, R, R) observation just before the last move-effect
    phase: str = "grasp"  # "grasp" | "place"
    step_index: int = 0
    episode_done: bool = False
    flags: tuple = ()
    effect_info: dict | None = None
    gripper_cfg: GripperConfig = field(default_factory=GripperConfig)
    resolution: int = IMAGE_RESOLUTION
    render_resolution: int = DEFAULT_RENDER_RESOLUTION

    def object_by_id(self, obj_id: int) -> SceneObject:
        for obj in self.scene:
            if obj.id == obj_id:
                return obj
        raise KeyError(obj_id)


def initial_gaze() -> Pose:
    """Top-down gaze centered over the table at half the workspace height."""
    return Pose(np.eye(3), np.array([0.0, 0.0, WORKSPACE_HEIGHT / 2]))


def workspace_contains(point) -> bool:
    p = np.asarray(point, dtype=float)
    return bool(abs(p[0]) <= WORKSPACE_HALF_XY
                and abs(p[1]) <= WORKSPACE_HALF_XY
                and 0.0 <= p[2] <= WORKSPACE_HEIGHT)


# ---------------------------------------------------------------------------
# procedural objects
# ---------------------------------------------------------------------------


def build_block(half_extents) -> Box:
    return Box(np.asarray(half_extents, dtype=float))


def build_bottle(body_r, body_h, neck_r, neck_h) -> Composite:
    """Bottle: body cylinder with a narrower neck on top; local origin at the
    base center, +z up."""
    return Composite((
        (Cylinder(body_r, body_h),
         Pose(np.eye(3), np.array([0.0, 0.0, body_h / 2]))),
        (Cylinder(neck_r, neck_h),
         Pose(np.eye(3), np.array([0.0, 0.0, body_h + neck_h / 2]))),
    ))


def build_mug(body_r, body_h, handle_half) -> Composite:
    """Mug: body cylinder plus a box handle; local origin at the base center."""
    hh = np.asarray(handle_half, dtype=float)
    return Composite((
        (Cylinder(body_r, body_h),
         Pose(np.eye(3), np.array([0.0, 0.0, body_h / 2]))),
        (Box(hh),
         Pose(np.eye(3), np.array([body_r + hh[0] * 0.75, 0.0, body_h / 2]))),
    ))


def build_coaster(radius, height) -> Cylinder:
    return Cylinder(radius, height)


def shape_parameters(obj: SceneObject):
    """Category-specific shape parameters, matching the snapshot text format."""
    s = obj.shape
    if obj.category == "blocks":
        return tuple(s.half_extents)
    if obj.category == "coaster":
        return (s.radius, s.height)
    if obj.category == "bottles":
        body, neck = s.parts[0][0], s.parts[1][0]
        return (body.radius, body.height, neck.radius, neck.height)
    if obj.category == "mugs":
        body, handle = s.parts[0][0], s.parts[1][0]
        return (body.radius, body.height) + tuple(handle.half_extents)
    raise ValueError("unknown category %r" % obj.category)


def shape_from_parameters(category, params):
    if category == "blocks":
        return build_block(params)
    if category == "coaster":
        return build_coaster(*params)
    if category == "bottles":
        return build_bottle(*params)
    if category == "mugs":
        return build_mug(params[0], params[1], params[2:5])
    raise ValueError("unknown category %r" % category)


_BLOCK_FACES = (
    Pose.identity(), Pose.rot_x(math.pi / 2), Pose.rot_x(-math.pi / 2),
    Pose.rot_y(math.pi / 2), Pose.rot_y(-math.pi / 2), Pose.rot_x(math.pi),
)


def _sample_object(category, rng):
    """Random shape + resting orientation for one object."""
    if category == "blocks":
        shape = build_block(rng.uniform(0.010, 0.030, 3))
        face = _BLOCK_FACES[rng.integers(len(_BLOCK_FACES))]
        orientation = compose(Pose.rot_z(rng.uniform(-math.pi, math.pi)),
                              face).rotation
    elif category == "bottles":
        body_r = rng.uniform(0.022, 0.032)
        body_h = rng.uniform(0.10, 0.16)
        shape = build_bottle(body_r, body_h, body_r * rng.uniform(0.40, 0.55),
                             rng.uniform(0.025, 0.040))
        orientation = Pose.rot_z(rng.uniform(-math.pi, math.pi)).rotation
    elif category == "mugs":
        body_r = rng.uniform(0.030, 0.045)
        body_h = rng.uniform(0.070, 0.100)
        shape = build_mug(body_r, body_h,
                          (0.008, 0.012, body_h * 0.30))
        orientation = Pose.rot_z(rng.uniform(-math.pi, math.pi)).rotation
    elif category == "coaster":
        shape = build_coaster(rng.uniform(0.045, 0.055), 0.006)
        orientation = Pose.rot_z(rng.uniform(-math.pi, math.pi)).rotation
    else:
        raise ValueError(category)
    return shape, orientation


def _resting_pose(shape, orientation, xy):
    rest = Pose(orientation, np.zeros(3))
    z = -lowest_point(shape, rest)
    return Pose(orientation, np.array([xy[0], xy[1], z]))


def render_scene(scene, resolution=DEFAULT_RENDER_RESOLUTION) -> PointCloud:
    """Merged world cloud from the two fixed 45-degree viewpoints.

    The support plane is subtracted from the sensed cloud (the usual
    segmentation step): sensing sees objects only, so an empty scene yields
    an empty cloud and all-zero state images. The table still exists for
    collision checks and settling.
    """
    render_list = [(o.shape, o.pose) for o in scene]
    if not render_list:
        return PointCloud(np.zeros((0, 3)), Pose.identity())
    h = VIEW_DISTANCE * math.sin(VIEW_ELEVATION)
    d = VIEW_DISTANCE * math.cos(VIEW_ELEVATION)
    target = (0.0, 0.0, 0.0)
    clouds = [render_cloud(render_list, look_at((d, 0.0, h), target),
                           resolution, resolution),
              render_cloud(render_list, look_at((-d, 0.0, h), target),
                           resolution, resolution)]
    pts = np.vstack([c.points for c in clouds])
    return PointCloud(pts, Pose.identity())


def _observe(state: EnvState, gaze: Pose, extent: Extent) -> np.ndarray:
    cropped = crop(state.cloud, gaze, extent)
    return height_maps(cropped, extent, state.resolution).channels


def spawn_scene(task: str, rng_seed: int, *,
                min_objects: int | None = None,
                max_objects: int | None = None,
                render_resolution: int = DEFAULT_RENDER_RESOLUTION,
                image_resolution: int = IMAGE_RESOLUTION,
                gripper_cfg: GripperConfig | None = None) -> EnvState:
    """Create a task scene: sampled objects rested on the table without
    interpenetration (rejection sampling), deterministic per seed, with the
    initial zoomed-out observation already rendered.

    After 1000 placement rejections the scene degenerates to a single task
    object (plus coasters for the bottles task) and is flagged.
    """
    if task not in TASKS:
        raise ValueError("unknown task %r" % task)
    rng = np.random.default_rng(rng_seed)
    lo, hi = OBJECT_COUNT_RANGE[task]
    if min_objects is not None:
        lo = min_objects
    if max_objects is not None:
        hi = max_objects
    n_objects = int(rng.integers(lo, hi + 1))
    wanted = []
    if task == "bottles":
        wanted += ["coaster"] * N_COASTERS
    wanted += [task] * n_objects

    placed = []
    flags = []
    rejections = 0
    degenerate = False
    for category in wanted:
        shape, orientation = _sample_object(category, rng)
        ok = False
        while rejections < 1000:
            xy = rng.uniform(-SPAWN_HALF_XY, SPAWN_HALF_XY, 2)
            pose = _resting_pose(shape, orientation, xy)
            clear = all(
                separation(shape, pose, o.shape, o.pose) >= SPAWN_CLEARANCE
                for o in placed)
            if clear:
                placed.append(SceneObject(len(placed), category, shape, pose))
                ok = True
                break
            rejections += 1
        if not ok:
            degenerate = True
            break
    if degenerate:
        keep = [o for o in placed if o.category == "coaster"]
        task_objs = [o for o in placed if o.category != "coaster"]
        if not task_objs:
            shape, orientation = _sample_object(task, rng)
            task_objs = [SceneObject(len(keep), task, shape,
                                     _resting_pose(shape, orientation,
                                                   (0.0, 0.0)))]
        placed = keep + task_objs[:1]
        placed = [replace(o, id=i) for i, o in enumerate(placed)]
        flags.append("degenerate_scene")

    scene = tuple(placed)
    cloud = render_scene(scene, render_resolution)
    gaze = initial_gaze()
    extent = Extent.cube(OBSERVE_SIDE)
    cfg = gripper_cfg or GripperConfig()
    state = EnvState(
        task=task, scene=scene,
        gripper=Gripper("open", cfg.max_width, cfg.finger_depth, gaze),
        cloud=cloud, gaze=gaze, extent=extent,
        i1=np.zeros((3, image_resolution, image_resolution)),
        i2=np.zeros((3, image_resolution, image_resolution)),
        flags=tuple(flags), gripper_cfg=cfg, resolution=image_resolution,
        render_resolution=render_resolution)
    return replace(state, i1=_observe(state, gaze, extent))


# ---------------------------------------------------------------------------
# sense
# ---------------------------------------------------------------------------


def sense(state: EnvState, gaze: Pose, extent: Extent) -> EnvState:
    """Acquire a new observation at the gaze pose, cropped to the extent.

    The scene is untouched (static environment except during move-effect).
    A gaze outside the workspace is rejected: the state is returned unchanged
    apart from a flag.
    """
    if state.episode_done:
        raise ValueError("episode is over")
    if not workspace_contains(gaze.translation):
        return replace(state, flags=state.flags + ("gaze_rejected",))
    return replace(state, gaze=gaze, extent=extent,
                   i1=_observe(state, gaze, extent),
                   step_index=state.step_index + 1)


# ---------------------------------------------------------------------------
# grasp analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AntipodalResult:
    ok: bool
    object_id: int | None = None
    contact_lo: np.ndarray | None = None
    contact_hi: np.ndarray | None = None
    separation: float = math.nan
    angle_lo: float = math.nan   # angle of entry normal to -closing axis
    angle_hi: float = math.nan   # angle of exit normal to +closing axis
    single_object: bool = False
    within_reach: bool = False
    angle_margin: float = math.nan
    span_margin: float = math.nan
    rival_margin: float = math.inf  # closeness of a competing object's surface
    edge_margin: float = math.inf   # contact distance to a face/rim boundary


def _contact_edge_margin(shape, pose, point):
    """Distance from a surface contact point to the nearest face/rim edge."""
    best = math.inf
    for prim, ppose in _primitive_list(shape, pose):
        p = ppose.apply_inverse(point)
        if isinstance(prim, Box):
            h = prim.half_extents
            gaps = h - np.abs(p)
            if np.min(gaps) < -1e-7:
                continue  # not on this primitive
            on_face = np.argmin(np.abs(gaps))
            others = [g for k, g in enumerate(gaps) if k != on_face]
            best = min(best, min(others))
        elif isinstance(prim, Cylinder):
            hz = prim.height / 2
            r = math.hypot(p[0], p[1])
            radial_gap = prim.radius - r
            cap_gap = hz - abs(p[2])
            if radial_gap < -1e-7 or cap_gap < -1e-7:
                continue
            if radial_gap < cap_gap:
                best = min(best, cap_gap)  # on the lateral wall
            else:
                best = min(best, radial_gap)  # on a cap
    return best


def _primitive_list(shape, pose):
    if isinstance(shape, Composite):
        return [(s, compose(pose, p)) for s, p in shape.parts]
    return [(shape, pose)]


def antipodal_details(objects, gripper_pose: Pose, max_width: float,
                      friction_half_angle: float) -> AntipodalResult:
    """Analyze the closing line through the gripper origin along local x.

    The grasp is antipodal when the line's outermost contacts lie on exactly
    one object, both within the finger span, with surface normals antiparallel
    to the closing direction within the friction half-angle.
    """
    u = gripper_pose.rotation[:, 0]
    origin = gripper_pose.translation
    w2 = max_width / 2.0
    hits = []
    for obj in objects:
        hit = line_interval(obj.shape, obj.pose, origin, u)
        if hit is None:
            continue
        t0, t1, n0, n1 = hit
        if t1 < -w2 or t0 > w2:
            continue  # beyond the fingers on one side
        hits.append((t0, t1, n0, n1, obj))
    if not hits:
        return AntipodalResult(ok=False)

    lo = min(hits, key=lambda h: h[0])
    hi = max(hits, key=lambda h: h[1])
    t_lo, n_lo = lo[0], lo[2]
    t_hi, n_hi = hi[1], hi[3]
    sep = t_hi - t_lo
    single = lo[4] is hi[4]
    within = (t_lo >= -w2 - 1e-12) and (t_hi <= w2 + 1e-12)

    def _angle(n, ref):
        c = float(np.clip(n @ ref, -1.0, 1.0))
        return math.acos(c)

    angle_lo = _angle(n_lo, -u)
    angle_hi = _angle(n_hi, u)
    ok = (single and within and sep <= max_width + 1e-12
          and angle_lo <= friction_half_angle
          and angle_hi <= friction_half_angle)

    rival = math.inf
    for h in hits:
        if h[4] is lo[4] and h[4] is hi[4]:
            continue
        if h is not lo:
            rival = min(rival, abs(h[0] - t_lo))
        if h is not hi:
            rival = min(rival, abs(h[1] - t_hi))
    edge = math.inf
    if single:
        edge = min(
            _contact_edge_margin(lo[4].shape, lo[4].pose, origin + t_lo * u),
            _contact_edge_margin(hi[4].shape, hi[4].pose, origin + t_hi * u))
    return AntipodalResult(
        ok=ok, object_id=lo[4].id if single else None,
        contact_lo=origin + t_lo * u, contact_hi=origin + t_hi * u,
        separation=sep, angle_lo=angle_lo, angle_hi=angle_hi,
        single_object=single, within_reach=within,
        angle_margin=friction_half_angle - max(angle_lo, angle_hi),
        span_margin=min(t_lo + w2, w2 - t_hi),
        rival_margin=rival, edge_margin=edge)


def antipodal_check(scene, gripper_pose: Pose, max_width: float = 0.085,
                    friction_half_angle_deg: float = 10.0) -> bool:
    """True when the pose yields an antipodal grasp on exactly one object."""
    return antipodal_details(scene, gripper_pose, max_width,
                             math.radians(friction_half_angle_deg)).ok


def gripper_world_parts(cfg: GripperConfig, gripper_pose: Pose):
    return [(shape, compose(gripper_pose, local))
            for shape, local in gripper_body(cfg)]


def collision_check(scene, gripper_pose: Pose, held=None,
                    cfg: GripperConfig | None = None,
                    held_shape_pose=None) -> bool:
    """True when the gripper body or a held object intersects any non-held
    object or the table (deeper than the contact tolerance)."""
    cfg = cfg or GripperConfig()
    held_id = held[0] if held else None
    parts = gripper_world_parts(cfg, gripper_pose)
    bodies = list(parts)
    if held is not None and held_shape_pose is not None:
        bodies.append(held_shape_pose)
    for shape, pose in bodies:
        if lowest_point(shape, pose) < -CONTACT_TOL:
            return True
        for obj in scene:
            if obj.id == held_id:
                continue
            if shapes_collide(shape, pose, obj.shape, obj.pose):
                return True
    return False


def _approach_blocked(state: EnvState, target: Pose, held_shape_pose=None,
                      held_id=None) -> bool:
    """Straight vertical approach stub: the segment above the target pose must
    be collision-free (checked at 2 cm steps up to 16 cm)."""
    for dz in _APPROACH_STEPS:
        lifted = Pose(target.rotation, target.translation + [0, 0, dz])
        hsp = None
        if held_shape_pose is not None:
            shape, pose = held_shape_pose
            hsp = (shape, Pose(pose.rotation, pose.translation + [0, 0, dz]))
        if collision_check(state.scene, lifted,
                           held=(held_id, None) if held_id is not None else None,
                           cfg=state.gripper_cfg, held_shape_pose=hsp):
            return True
    return False


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------


def _up_angle(pose: Pose) -> float:
    return math.acos(float(np.clip(pose.rotation[2, 2], -1.0, 1.0)))


def _vertical_axis_angle(rotation: np.ndarray) -> float:
    """Tilt of the most-vertical local axis away from gravity.

    Zero when some face of the box points straight down; independent of spin
    about the vertical, which is what matters for resting a block flat.
    """
    return math.acos(float(np.clip(np.abs(rotation[2]).max(), -1.0, 1.0)))


def _placed_collides(others, shape, pose, lift=0.0) -> bool:
    p = Pose(pose.rotation, pose.translation + [0.0, 0.0, lift])
    if lowest_point(shape, p) < -CONTACT_TOL:
        return True
    return any(shapes_collide(shape, p, o.shape, o.pose) for o in others)


def _footprint(shape, pose):
    corners = []
    for prim, ppose in _primitive_list(shape, pose):
        if isinstance(prim, Box):
            h = prim.half_extents
            local = np.array([[sx * h[0], sy * h[1], sz * h[2]]
                              for sx in (-1, 1) for sy in (-1, 1)
                              for sz in (-1, 1)])
            corners.append(ppose.apply(local))
        elif isinstance(prim, Cylinder):
            ang = np.linspace(0, 2 * math.pi, 17)[:-1]
            ring = np.stack([prim.radius * np.cos(ang),
                             prim.radius * np.sin(ang),
                             np.zeros_like(ang)], axis=1)
            for z in (-prim.height / 2, prim.height / 2):
                corners.append(ppose.apply(ring + [0, 0, z]))
    pts = np.vstack(corners)[:, :2]
    return MultiPoint([tuple(p) for p in pts]).convex_hull


def place_reward_details(task, others, held_obj: SceneObject,
                         release_pose: Pose) -> RewardSpec:
    """Evaluate the task's place conditions for a held object released at the
    given (already settled) pose.

    Reaching the place phase at all implies the grasp's required conditions
    were met, so that required condition is structural here.
    """
    shape = held_obj.shape
    collision_free = not _placed_collides(others, shape, release_pose)
    clear_up = collision_free or not _placed_collides(others, shape,
                                                      release_pose, lift=0.02)
    if task == "bottles":
        tilt = _up_angle(release_pose)
        coasters = [o for o in others if o.category == "coaster"]
        base_xy = release_pose.translation[:2]
        coaster = None
        if coasters:
            coaster = min(coasters, key=lambda c: np.linalg.norm(
                c.pose.translation[:2] - base_xy))
        if coaster is not None:
            on_disk = (np.linalg.norm(coaster.pose.translation[:2] - base_xy)
                       <= coaster.shape.radius)
            top = highest_point(coaster.shape, coaster.pose)
            height = lowest_point(shape, release_pose) - top
            # embedded into the coaster still counts as above it (the
            # collision conditions grade that case); below the table does not
            above = on_disk and height >= -coaster.shape.height
        else:
            above, height = False, math.inf
        required = (
            ("upright_30deg", tilt <= math.radians(30.0)),
            ("above_coaster", above),
            ("height_4cm", above and height <= 0.04),
            ("collision_free_or_clear_2cm", clear_up),
        )
        partial = (
            ("upright_15deg", tilt <= math.radians(15.0)),
            ("height_2cm", above and height <= 0.02),
            ("not_in_collision", collision_free),
        )
    elif task == "blocks":
        blocks = [o for o in others if o.category == "blocks"]
        foot = _footprint(shape, release_pose)
        best_ratio, base = 0.0, None
        for o in blocks:
            ratio = (foot.intersection(_footprint(o.shape, o.pose)).area
                     / max(foot.area, 1e-12))
            if ratio > best_ratio:
                best_ratio, base = ratio, o
        if base is not None:
            gap = (lowest_point(shape, release_pose)
                   - highest_point(base.shape, base.pose))
        else:
            gap = math.inf
        aligned = _vertical_axis_angle(release_pose.rotation)
        required = (
            ("rests_on_block_2cm", base is not None and abs(gap) <= 0.02),
            ("footprint_overlap_50", best_ratio > 0.50),
            ("aligned_30deg", aligned <= math.radians(30.0)),
            ("collision_free_or_clear_2cm", clear_up),
        )
        partial = (
            ("aligned_15deg", aligned <= math.radians(15.0)),
            ("footprint_overlap_75", best_ratio > 0.75),
            ("not_in_collision", collision_free),
        )
    elif task == "mugs":
        tilt = _up_angle(release_pose)
        height = lowest_point(shape, release_pose)
        required = (
            ("upright_30deg", tilt <= math.radians(30.0)),
            ("height_4cm", height <= 0.04),
            ("collision_free_or_clear_2cm", clear_up),
        )
        partial = (
            ("upright_15deg", tilt <= math.radians(15.0)),
            ("height_2cm", height <= 0.02),
            ("not_in_collision", collision_free),
        )
    else:
        raise ValueError(task)
    return RewardSpec(required, partial)


def place_reward(task, scene, held_object: SceneObject,
                 release_pose: Pose) -> float:
    others = [o for o in scene if o.id != held_object.id]
    return place_reward_details(task, others, held_object, release_pose).reward


def grasp_reward_details(state: EnvState, gripper_pose: Pose) -> tuple:
    cfg = state.gripper_cfg
    det = antipodal_details(state.scene, gripper_pose, cfg.max_width,
                            cfg.friction_half_angle)
    collision_free = not collision_check(state.scene, gripper_pose,
                                         cfg=cfg)
    half_cone_ok = (det.ok and max(det.angle_lo, det.angle_hi)
                    <= cfg.friction_half_angle / 2)
    narrow = det.ok and det.separation <= 0.8 * cfg.max_width
    spec = RewardSpec(
        required=(("antipodal", det.ok),
                  ("collision_free", collision_free)),
        partial=(("antipodal_half_cone", half_cone_ok),
                 ("grip_within_80pct_width", narrow)))
    return spec, det, collision_free


# ---------------------------------------------------------------------------
# settling
# ---------------------------------------------------------------------------


def settle_pose(others, shape, pose: Pose, snap_within: float = 0.01) -> Pose:
    """Snap a released object down onto its support when the gap is small.

    The object drops along gravity by the distance to first contact with the
    table or another object, but only when that gap is within `snap_within`;
    otherwise it is left where released (no full dynamics).
    """
    gap = lowest_point(shape, pose)
    if gap < 0:
        return pose  # already into the table; collision predicates handle it

    def touching(m):
        p = Pose(pose.rotation, pose.translation - [0.0, 0.0, m])
        return any(separation(shape, p, o.shape, o.pose) <= 1e-9
                   for o in others)

    limit = min(gap, snap_within + 0.002)
    contact = None
    if touching(0.0):
        return pose
    m = 0.002
    while m <= limit + 1e-12:
        if touching(m):
            lo, hi = m - 0.002, m
            for _ in range(24):
                mid = (lo + hi) / 2
                if touching(mid):
                    hi = mid
                else:
                    lo = mid
            contact = hi
            break
        m += 0.002
    drop = min(gap, contact) if contact is not None else gap
    if drop <= snap_within + 1e-12:
        return Pose(pose.rotation, pose.translation - [0.0, 0.0, drop])
    return pose


# ---------------------------------------------------------------------------
# move-effect
# ---------------------------------------------------------------------------


def move_effect(state: EnvState, op: str):
    """Teleport the gripper to the current gaze and run the effector.

    close: attaches an object rigidly when the grasp is antipodal and
    collision-free on exactly one object; grasp reward per the grasp spec.
    open: releases the held object (with a settle snap), scores the place
    spec, and ends the episode. Either op fails with zero reward when the
    straight vertical approach is blocked.
    """
    if state.episode_done:
        raise ValueError("episode is over")
    if op not in ("open", "close"):
        raise ValueError("op must be open or close")
    pose = state.gaze
    i2 = state.i1  # observation just before the effect

    if op == "close":
        if state.gripper.aperture != "open":
            raise ValueError("close requires an open gripper")
        if _approach_blocked(state, pose):
            info = {"op": op, "failure": "motion_infeasible", "reward": 0.0}
            new = replace(state, episode_done=True, i2=i2,
                          flags=state.flags + ("motion_infeasible",),
                          gripper=replace(state.gripper, aperture="closed",
                                          pose=pose),
                          effect_info=info, step_index=state.step_index + 1)
            return new, 0.0
        spec, det, collision_free = grasp_reward_details(state, pose)
        reward = spec.reward
        held = None
        if det.ok and collision_free:
            obj = state.object_by_id(det.object_id)
            grasp_tf = compose(pose.inverse(), obj.pose)
            held = (obj.id, grasp_tf)
        info = {"op": op, "reward": reward, "spec": spec.as_dict(),
                "antipodal": det.ok, "collision_free": collision_free,
                "contact_separation": det.separation}
        gripper = Gripper("closed", state.gripper.max_width,
                          state.gripper.finger_depth, pose, held)
        if reward > 0.0:
            gaze = initial_gaze()
            extent = Extent.cube(OBSERVE_SIDE)
            new = replace(state, gripper=gripper, phase="place", gaze=gaze,
                          extent=extent, i2=i2, effect_info=info,
                          step_index=state.step_index + 1)
            new = replace(new, i1=_observe(new, gaze, extent))
        else:
            new = replace(state, gripper=gripper, episode_done=True, i2=i2,
                          effect_info=info, step_index=state.step_index + 1)
        return new, reward

    # op == "open"
    if state.gripper.aperture != "closed":
        raise ValueError("open requires a closed gripper")
    if state.gripper.held is None:
        raise ValueError("open without a held object")
    held_id, grasp_tf = state.gripper.held
    obj = state.object_by_id(held_id)
    held_pose = compose(pose, grasp_tf)
    others = [o for o in state.scene if o.id != held_id]

    gripper_open = Gripper("open", state.gripper.max_width,
                           state.gripper.finger_depth, pose)
    if _approach_blocked(state, pose, held_shape_pose=(obj.shape, held_pose),
                         held_id=held_id):
        info = {"op": op, "failure": "motion_infeasible", "reward": 0.0}
        new = replace(state, episode_done=True, i2=i2,
                      flags=state.flags + ("motion_infeasible",),
                      gripper=gripper_open, effect_info=info,
                      step_index=state.step_index + 1)
        return new, 0.0

    settled = settle_pose(others, obj.shape, held_pose)
    spec = place_reward_details(state.task, others, obj, settled)
    reward = spec.reward
    new_scene = tuple(replace(o, pose=settled) if o.id == held_id else o
                      for o in state.scene)
    info = {"op": op, "reward": reward, "spec": spec.as_dict(),
            "release_pose": settled}
    new = replace(state, scene=new_scene,
                  cloud=render_scene(new_scene, state.render_resolution),
                  gripper=gripper_open, episode_done=True, i2=i2,
                  effect_info=info, step_index=state.step_index + 1)
    return new, reward


# ---------------------------------------------------------------------------
# scene snapshot text format
# ---------------------------------------------------------------------------


def scene_to_text(scene) -> str:
    """Line-oriented snapshot: `id category shape-params pose(12 floats)`."""
    lines = []
    for obj in scene:
        params = " ".join("%.17g" % v for v in shape_parameters(obj))
        pose12 = list(obj.pose.rotation.ravel()) + list(obj.pose.translation)
        pose_s = " ".join("%.17g" % v for v in pose12)
        lines.append("%d %s %s %s" % (obj.id, obj.category, params, pose_s))
    return "\n".join(lines) + "\n"


def scene_from_text(text: str):
    objects = []
    for line in text.strip().splitlines():
        fields = line.split()
        obj_id = int(fields[0])
        category = fields[1]
        values = [float(v) for v in fields[2:]]
        params, pose12 = values[:-12], values[-12:]
        shape = shape_from_parameters(category, params)
        pose = Pose(np.array(pose12[:9]).reshape(3, 3), np.array(pose12[9:]))
        objects.append(SceneObject(obj_id, category, shape, pose))
    return tuple(objects)
