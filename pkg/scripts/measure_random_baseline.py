#!/usr/bin/env python3
"""Measure the random-policy baseline on the desk-scale blocks task.

Plays epsilon = 1 episodes (uniform candidate choice at every level) and
reports grasp/place success rates and mean rewards. These are the numbers the
regression bounds in the test suite were frozen from.
"""

import argparse
import math

import numpy as np

from hse3s.approximator import Arch, init
from hse3s.learner import CLOSE_STEP, OPEN_STEP, run_episode
from hse3s.sampling import default_schedule
from hse3s.world import GripperConfig


def run(episodes, seed, friction_deg):
    qfuncs = [init(Arch(), i) for i in range(12)]
    spawn = dict(min_objects=2, max_objects=4, render_resolution=160,
                 gripper_cfg=GripperConfig(
                     friction_half_angle=math.radians(friction_deg)))
    grasp_rewards, place_rewards, successes = [], [], 0
    for e in range(episodes):
        transitions, ret = run_episode(
            seed * 100_000 + e, "blocks", qfuncs, default_schedule(),
            1.0, 1.0, np.random.default_rng(seed * 7 + e),
            n_samples=64, spawn_kwargs=spawn)
        g = next((t.reward for t in transitions if t.time_step == CLOSE_STEP),
                 0.0)
        p = next((t.reward for t in transitions if t.time_step == OPEN_STEP),
                 0.0)
        grasp_rewards.append(g)
        place_rewards.append(p)
        successes += g > 0
        if (e + 1) % 100 == 0:
            print("%d episodes: grasp success %.4f, mean grasp reward %.4f"
                  % (e + 1, successes / (e + 1), np.mean(grasp_rewards)))
    print("\nfinal over %d episodes (friction half-angle %g deg):"
          % (episodes, friction_deg))
    print("  grasp success rate : %.4f" % (successes / episodes))
    print("  mean grasp reward  : %.4f" % np.mean(grasp_rewards))
    print("  mean place reward  : %.4f" % np.mean(place_rewards))


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--friction-deg", type=float, default=15.0)
    args = ap.parse_args()
    run(args.episodes, args.seed, args.friction_deg)
