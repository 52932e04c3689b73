"""Hierarchical SE(3) gaze sampling for 6-DoF pick-and-place, learned from
reward alone in a self-contained geometric simulator."""

__version__ = "0.1.0"

from .geometry import (Box, Composite, Cylinder, Extent, HeightMapImage,
                       PointCloud, Pose, compose, crop, height_maps, raycast,
                       render_cloud)
from .world import (EnvState, Gripper, GripperConfig, RewardSpec, SceneObject,
                    antipodal_check, collision_check, move_effect,
                    place_reward, sense, spawn_scene)
from .sampling import (Candidate, GazeLevel, GazeSchedule, TrialResult,
                       default_schedule, flat_samples_needed, levels_needed,
                       n_trial_select, run_trial, sample_candidates)
from .approximator import Arch, QFunction, forward, grad_check, init, load, \
    save, sgd_step
from .learner import (ExplorationSchedule, ReplayBuffer, RoundConfig,
                      Transition, epsilon_at, evaluate, mc_labels,
                      run_episode, train)
from .config import RunConfig, config_hash, load_config
