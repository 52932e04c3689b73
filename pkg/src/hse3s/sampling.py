"""Hierarchical SE(3) sampling: gaze schedules, per-level candidate
generation, trial execution, and n-trial selection.

An end-effector pose is chosen through a fixed sequence of progressively
zoomed sense actions. Each schedule level fixes the observation volume and a
small allowed offset range around the current gaze; a per-level value
function scores sampled offsets and the best (or an exploratory) one is
executed. Running several independent trials and keeping the one whose final
action scores highest counters sense-misleads at the blurry coarse levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .approximator import QFunction, forward_candidates
from .geometry import Extent, PointCloud, Pose, compose, crop_mask
from .world import EnvState, sense

MODES = ("cloud-point", "free-position", "rotation-z", "rotation-y",
         "axis-offset")
_ROTATION_SLOTS = {"rotation-z": (3, 5), "rotation-y": (4,)}


class EmptyCandidatesError(RuntimeError):
    """No candidates could be generated (empty observed cloud)."""


@dataclass(frozen=True)
class GazeLevel:
    """One schedule entry: observation volume, offset half-ranges, and how
    offsets are drawn.

    half_ranges is [x, y, z, theta, phi, rho]: positional offsets in meters
    along the current gaze axes, then rotations in radians about the current
    z, y, and (again) z axes. Rotation modes use exactly one rotation slot and
    no positional range; position modes use no rotation slots.
    """

    mode: str
    extent: Extent
    half_ranges: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError("unknown mode %r" % self.mode)
        d = np.asarray(self.half_ranges, dtype=float).copy()
        if d.shape != (6,) or np.any(d < 0):
            raise ValueError("half_ranges must be 6 non-negative values")
        pos, rot = d[:3], d[3:]
        if self.mode in _ROTATION_SLOTS:
            if pos.any():
                raise ValueError("rotation level cannot have positional range")
            hot = np.nonzero(rot)[0]
            if len(hot) != 1 or (hot[0] + 3) not in _ROTATION_SLOTS[self.mode]:
                raise ValueError("rotation level needs exactly one matching "
                                 "rotation slot")
        else:
            if rot.any():
                raise ValueError("position level cannot have rotation range")
        d.flags.writeable = False
        object.__setattr__(self, "half_ranges", d)

    @property
    def rotation_slot(self) -> int:
        return int(np.nonzero(self.half_ranges[3:])[0][0]) + 3


@dataclass(frozen=True)
class GazeSchedule:
    levels: tuple

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise ValueError("schedule must have at least one level")
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return len(self.levels)


@dataclass
class Candidate:
    """A sampled gaze offset: the action vector within the level's
    half-ranges (unused slots zero) and the gaze it leads to."""

    action_vector: np.ndarray
    resulting_gaze: Pose
    value: float = math.nan


@dataclass(frozen=True)
class TrialResult:
    chosen: tuple  # one Candidate per level
    final_gaze: Pose
    final_value: float
    observations: tuple = ()  # per level: (i1, i2) images seen at decision time


def default_schedule() -> GazeSchedule:
    """The six-level grasp/place schedule.

    Coarse position on an observed cloud point in the 36 cm view, fine
    position within +-4.5 cm at 9 cm zoom, rotations about the current z
    (+-pi), y (+-pi/2), z (+-pi) axes at 9 cm zoom, then a final +-10.5 cm
    offset along exactly one current axis at 10.5 cm zoom.
    """
    c36, c9, c105 = (Extent.cube(s) for s in (0.36, 0.09, 0.105))
    lv = (
        GazeLevel("cloud-point", c36, (0.18, 0.18, 0.18, 0, 0, 0)),
        GazeLevel("free-position", c9, (0.045, 0.045, 0.045, 0, 0, 0)),
        GazeLevel("rotation-z", c9, (0, 0, 0, math.pi, 0, 0)),
        GazeLevel("rotation-y", c9, (0, 0, 0, 0, math.pi / 2, 0)),
        GazeLevel("rotation-z", c9, (0, 0, 0, 0, 0, math.pi)),
        GazeLevel("axis-offset", c105, (0.105, 0.105, 0.105, 0, 0, 0)),
    )
    return GazeSchedule(lv)


# ---------------------------------------------------------------------------
# sample-complexity arithmetic
# ---------------------------------------------------------------------------

_CEIL_EPS = 1e-9


def flat_samples_needed(v0: float, alpha: float) -> int:
    """Samples to cover a volume v0 at one sample per alpha: ceil(v0/alpha)."""
    if v0 <= 0 or alpha <= 0:
        raise ValueError("volumes must be positive")
    return int(math.ceil(v0 / alpha - _CEIL_EPS))


def levels_needed(v0: float, alpha: float) -> int:
    """Hierarchy depth when each level splits the volume 8x: the smallest
    t with v0 / 8^t <= alpha. Zero when v0 < alpha."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    ratio = v0 / alpha
    t = 0
    scale = 1.0
    while ratio > scale * (1.0 + _CEIL_EPS):
        t += 1
        scale *= 8.0
    return t


# ---------------------------------------------------------------------------
# candidate generation
# ---------------------------------------------------------------------------


def _rotation_from_slot(slot: int, angle: float) -> Pose:
    if slot == 4:
        return Pose.rot_y(angle)
    return Pose.rot_z(angle)


def sample_candidates(level: GazeLevel, current_gaze: Pose,
                      observation: PointCloud | None, n: int,
                      rng: np.random.Generator):
    """Draw n candidate offsets for a level, uniform over its mode.

    cloud-point: uniform over the observed points (the observation must be in
    the frame the gaze lives in, typically the world cloud); the candidate
    position equals the sampled point exactly. free-position: uniform in the
    box +-d. rotation: uniform angle about the current axis. axis-offset:
    uniform axis choice, then a uniform offset along that axis only.
    Returns [] in cloud-point mode when the observation is empty.
    """
    if n < 1:
        raise ValueError("need n >= 1 candidates")
    d = level.half_ranges
    out = []
    if level.mode == "cloud-point":
        if observation is None or len(observation) == 0:
            return []
        pts = observation.points
        idx = rng.integers(len(pts), size=n)
        for i in idx:
            world = pts[i]
            action = np.zeros(6)
            action[:3] = current_gaze.apply_inverse(world)
            gaze = Pose(current_gaze.rotation, world)
            out.append(Candidate(action, gaze))
    elif level.mode == "free-position":
        offsets = rng.uniform(-d[:3], d[:3], size=(n, 3))
        for off in offsets:
            action = np.zeros(6)
            action[:3] = off
            gaze = compose(current_gaze, Pose.from_translation(off))
            out.append(Candidate(action, gaze))
    elif level.mode in _ROTATION_SLOTS:
        slot = level.rotation_slot
        angles = rng.uniform(-d[slot], d[slot], size=n)
        for ang in angles:
            action = np.zeros(6)
            action[slot] = ang
            gaze = compose(current_gaze, _rotation_from_slot(slot, ang))
            out.append(Candidate(action, gaze))
    else:  # axis-offset
        axes = rng.integers(3, size=n)
        for axis in axes:
            off = rng.uniform(-d[axis], d[axis])
            action = np.zeros(6)
            action[axis] = off
            vec = np.zeros(3)
            vec[axis] = off
            gaze = compose(current_gaze, Pose.from_translation(vec))
            out.append(Candidate(action, gaze))
    return out


def _observation_for(state: EnvState) -> PointCloud:
    """World-frame points currently visible in the gaze volume."""
    mask = crop_mask(state.cloud, state.gaze, state.extent)
    return PointCloud(state.cloud.points[mask], state.cloud.frame)


def state_image_stack(state: EnvState) -> np.ndarray:
    """(H, W, 6) channels-last stack of the two state images."""
    return np.concatenate([state.i1, state.i2], axis=0).transpose(1, 2, 0)


def candidate_values(qfunc, state: EnvState, candidates) -> np.ndarray:
    """Score candidates with a QFunction or any callable(state, candidates)."""
    if isinstance(qfunc, QFunction):
        actions = np.stack([c.action_vector for c in candidates])
        return forward_candidates(qfunc, state_image_stack(state), actions)
    return np.asarray(qfunc(state, candidates), dtype=float)


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------


def run_trial(state: EnvState, schedule: GazeSchedule, qfuncs,
              n_samples: int, selector, rng: np.random.Generator):
    """Run one pass of the gaze hierarchy from the current state.

    For each level: sample candidates, score them with that level's value
    function, pick the argmax (selector "greedy", ties to the lowest index)
    or a uniform-random candidate with probability epsilon (selector
    ("epsilon", eps)), and execute the sense. Returns (end state,
    TrialResult).
    """
    if len(qfuncs) != len(schedule):
        raise ValueError("need one value function per schedule level")
    eps = 0.0
    if selector != "greedy":
        kind, eps = selector
        if kind != "epsilon" or not 0.0 <= eps <= 1.0:
            raise ValueError("selector must be 'greedy' or ('epsilon', eps)")
    chosen = []
    seen = []
    for level, qf in zip(schedule.levels, qfuncs):
        obs = _observation_for(state) if level.mode == "cloud-point" else None
        cands = sample_candidates(level, state.gaze, obs, n_samples, rng)
        if not cands:
            raise EmptyCandidatesError("no candidates at level %d"
                                       % len(chosen))
        values = candidate_values(qf, state, cands)
        if eps > 0.0 and rng.random() < eps:
            idx = int(rng.integers(len(cands)))
        else:
            idx = int(np.argmax(values))
        pick = replace(cands[idx], value=float(values[idx]))
        chosen.append(pick)
        seen.append((state.i1, state.i2))
        state = sense(state, pick.resulting_gaze, level.extent)
    return state, TrialResult(tuple(chosen), state.gaze, chosen[-1].value,
                              tuple(seen))


def n_trial_select(state: EnvState, schedule: GazeSchedule, qfuncs,
                   n_trials: int, n_samples: int, rng: np.random.Generator):
    """Run n independent greedy trials and keep the best-scoring one.

    Trials draw fresh samples from the shared rng stream (so n_trials=1 is
    identical to run_trial). The winner is the trial with the highest final
    value, ties to the earliest; its end state carries the executed senses.
    Returns (winner end state, winner TrialResult, all TrialResults).
    """
    if n_trials < 1:
        raise ValueError("need n_trials >= 1")
    best = None
    trials = []
    for _ in range(n_trials):
        end_state, trial = run_trial(state, schedule, qfuncs, n_samples,
                                     "greedy", rng)
        trials.append(trial)
        if best is None or trial.final_value > best[1].final_value:
            best = (end_state, trial)
    return best[0], best[1], trials


# ---------------------------------------------------------------------------
# schedule text format
# ---------------------------------------------------------------------------


def schedule_to_text(schedule: GazeSchedule) -> str:
    """One line per level: mode, extent (3 floats), half-ranges (6 floats)."""
    lines = []
    for lv in schedule.levels:
        nums = list(lv.extent.lengths) + list(lv.half_ranges)
        lines.append(lv.mode + " " + " ".join("%.17g" % v for v in nums))
    return "\n".join(lines) + "\n"


def schedule_from_text(text: str) -> GazeSchedule:
    levels = []
    for line in text.strip().splitlines():
        fields = line.split()
        mode = fields[0]
        nums = [float(v) for v in fields[1:]]
        if len(nums) != 9:
            raise ValueError("level line needs 9 numbers: %r" % line)
        levels.append(GazeLevel(mode, Extent(np.array(nums[:3])),
                                np.array(nums[3:])))
    return GazeSchedule(tuple(levels))
