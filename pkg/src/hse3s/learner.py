"""Training loop: episode generation under the gaze hierarchy with
epsilon-greedy exploration, experience replay, Monte Carlo return labeling,
round-based SGD, and the evaluation protocol.

An episode is (sense)^6 close (sense)^6 open. The twelve sense steps are the
decision steps, each with its own value network; move-effect steps carry the
rewards. Training labels are undiscounted forward reward sums.
"""

from __future__ import annotations

import math
import multiprocessing
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .approximator import Arch, QFunction, init, sgd_step
from .sampling import (EmptyCandidatesError, GazeSchedule, default_schedule,
                       n_trial_select, run_trial)
from .world import (antipodal_check, collision_check, move_effect,
                    spawn_scene)

N_DECISION_STEPS = 12
CLOSE_STEP = 6
OPEN_STEP = 13


@dataclass
class Transition:
    """One recorded step: the state images seen when the action was chosen.

    i2 is shared by reference across an episode's place phase and None during
    the grasp phase (the second image is all zeros then); rewards are nonzero
    only on move-effect steps.
    """

    time_step: int
    i1: np.ndarray
    i2: np.ndarray | None
    action: np.ndarray
    reward: float
    episode_id: int
    label: float = math.nan

    def image_stack(self) -> np.ndarray:
        """(H, W, 6) float64 channels-last stack for the approximator."""
        i1 = np.asarray(self.i1, dtype=np.float64)
        if self.i2 is None:
            i2 = np.zeros_like(i1)
        else:
            i2 = np.asarray(self.i2, dtype=np.float64)
        return np.concatenate([i1, i2], axis=0).transpose(1, 2, 0)


def net_index(time_step: int) -> int | None:
    """Map an episode step to its decision network, None for move-effects."""
    if 0 <= time_step <= 5:
        return time_step
    if 7 <= time_step <= 12:
        return time_step - 1
    return None


def mc_labels(episode_rewards) -> list:
    """Undiscounted forward reward sums: label_t = r_t + label_{t+1}."""
    rewards = list(episode_rewards)
    if not rewards:
        raise ValueError("empty reward sequence")
    labels = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + acc
        labels[t] = acc
    return labels


class ReplayBuffer:
    """FIFO transition store grouped by episode; evicts whole episodes."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._episodes = deque()
        self._size = 0

    def __len__(self):
        return self._size

    @property
    def n_episodes(self):
        return len(self._episodes)

    def add_episode(self, transitions):
        transitions = list(transitions)
        if not transitions:
            return
        self._episodes.append(transitions)
        self._size += len(transitions)
        while self._size > self.capacity and len(self._episodes) > 1:
            self._size -= len(self._episodes.popleft())

    def for_step(self, time_step: int):
        return [tr for ep in self._episodes for tr in ep
                if tr.time_step == time_step]

    def episodes(self):
        return list(self._episodes)


@dataclass(frozen=True)
class ExplorationSchedule:
    """Per-round epsilon laws for the two phases.

    Grasp epsilon starts at 1, decays linearly to the floor by decay_rounds,
    and is forced to 0 for the last zero_tail rounds. Place epsilon decays
    with the number of successful-grasp experiences toward place_target and
    shares the zero tail.
    """

    rounds: int = 30
    floor: float = 0.05
    decay_rounds: int = 25
    zero_tail: int = 5
    place_target: int = 5000


def epsilon_at(schedule: ExplorationSchedule, round_index: int, phase: str,
               successful_places: int = 0) -> float:
    if not 0 <= round_index < schedule.rounds:
        raise ValueError("round outside the configured horizon")
    if round_index >= schedule.rounds - schedule.zero_tail:
        return 0.0
    if phase == "grasp":
        if round_index >= schedule.decay_rounds:
            return schedule.floor
        span = 1.0 - schedule.floor
        return 1.0 - span * round_index / schedule.decay_rounds
    if phase == "place":
        return max(schedule.floor,
                   1.0 - successful_places / schedule.place_target)
    raise ValueError("phase must be grasp or place")


@dataclass(frozen=True)
class RoundConfig:
    episodes_per_round: int = 2000
    sgd_iters_per_round: int = 3000
    rounds: int = 30

    def __post_init__(self):
        if min(self.episodes_per_round, self.sgd_iters_per_round,
               self.rounds) < 1:
            raise ValueError("round configuration must be positive")


def _store_image(img: np.ndarray) -> np.ndarray:
    # replay copies are float32: halves buffer memory, networks stay float64
    return np.asarray(img, dtype=np.float32)


def run_episode(env_seed: int, task: str, qfuncs, schedule: GazeSchedule,
                eps_grasp: float, eps_place: float,
                rng: np.random.Generator, *, n_samples: int = 64,
                episode_id: int = 0, spawn_kwargs: dict | None = None):
    """Play one episode with 1-trial epsilon-greedy gaze selection.

    Returns (transitions, episode return). A failed grasp ends the episode
    after 7 steps (6 senses + close); otherwise the place phase follows for
    14 steps total. An empty-candidate abort yields no transitions and
    return 0.
    """
    if len(qfuncs) != 2 * 6:
        raise ValueError("need 12 per-step value functions")
    state = spawn_scene(task, env_seed, **(spawn_kwargs or {}))
    transitions = []
    rewards = []
    shared = {}  # id(array) -> float32 copy, so an episode's i2 is stored once

    def stored_i2(img):
        if img is None or not img.any():
            return None
        key = id(img)
        if key not in shared:
            shared[key] = _store_image(img)
        return shared[key]

    def record_trial(trial, base_step):
        for k, pick in enumerate(trial.chosen):
            i1, i2 = trial.observations[k]
            transitions.append(Transition(
                base_step + k, _store_image(i1), stored_i2(i2),
                pick.action_vector.copy(), 0.0, episode_id))
            rewards.append(0.0)

    try:
        state, trial = run_trial(state, schedule, qfuncs[:6], n_samples,
                                 ("epsilon", eps_grasp), rng)
    except EmptyCandidatesError:
        return [], 0.0
    record_trial(trial, 0)
    pre_close = (_store_image(state.i1), None)
    state, grasp_reward = move_effect(state, "close")
    transitions.append(Transition(CLOSE_STEP, pre_close[0], pre_close[1],
                                  np.zeros(6), grasp_reward, episode_id))
    rewards.append(grasp_reward)

    if grasp_reward > 0.0:
        try:
            state, trial = run_trial(state, schedule, qfuncs[6:], n_samples,
                                     ("epsilon", eps_place), rng)
        except EmptyCandidatesError:
            trial = None
        if trial is not None:
            record_trial(trial, 7)
            pre_open = (_store_image(state.i1), stored_i2(state.i2))
            state, place_reward = move_effect(state, "open")
            transitions.append(Transition(OPEN_STEP, pre_open[0], pre_open[1],
                                          np.zeros(6), place_reward,
                                          episode_id))
            rewards.append(place_reward)

    labels = mc_labels(rewards)
    for tr, lab in zip(transitions, labels):
        tr.label = lab
    return transitions, float(sum(rewards))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    qfuncs: list
    curve: list          # dict rows: the learning-curve CSV contract
    round_stats: list    # dict rows: extra per-round diagnostics


CURVE_FIELDS = ("round", "episodes", "mean_grasp_reward", "mean_place_reward",
                "epsilon_grasp", "epsilon_place", "wall_seconds")

STATS_FIELDS = ("round", "grasp_success_rate", "place_success_rate",
                "place_attempts", "buffer_transitions", "mean_sgd_loss")


def _episode_rng(seed: int, round_index: int, episode_index: int):
    ss = np.random.SeedSequence(entropy=seed,
                                spawn_key=(round_index, episode_index))
    env_seed = int(ss.generate_state(1, np.uint64)[0])
    return env_seed, np.random.default_rng(ss.spawn(1)[0])


_POOL_CTX: dict = {}


def _pool_init(args):
    _POOL_CTX.update(args)


def _pool_episode(job):
    round_index, episode_index = job
    c = _POOL_CTX
    env_seed, rng = _episode_rng(c["seed"], round_index, episode_index)
    return run_episode(env_seed, c["task"], c["qfuncs"], c["schedule"],
                       c["eps_grasp"], c["eps_place"], rng,
                       n_samples=c["n_samples"], episode_id=episode_index,
                       spawn_kwargs=c["spawn_kwargs"])


def train(task: str, round_config: RoundConfig, schedule: GazeSchedule | None,
          seed: int, *, exploration: ExplorationSchedule | None = None,
          n_samples: int = 64, lr: float = 1e-3, lr_decay_steps: int = 2000,
          batch_size: int = 32, buffer_capacity: int = 50_000,
          arch: Arch | None = None, spawn_kwargs: dict | None = None,
          workers: int = 1, checkpoint_fn=None,
          progress_fn=None) -> TrainResult:
    """Alternate data-collection rounds with SGD phases.

    Each round plays episodes_per_round 1-trial epsilon-greedy episodes, then
    runs sgd_iters_per_round SGD iterations per decision step on batches
    drawn uniformly from that step's replay transitions. checkpoint_fn, when
    given, is called as checkpoint_fn(round_index, qfuncs) after each round.
    A fixed seed makes the whole run deterministic (single worker or not).
    """
    schedule = schedule or default_schedule()
    arch = arch or Arch()
    exploration = exploration or ExplorationSchedule(rounds=round_config.rounds)
    if exploration.rounds != round_config.rounds:
        raise ValueError("exploration horizon must match the round count")
    qfuncs = [init(arch, s) for s in range(seed * 37 + 1,
                                            seed * 37 + 1 + N_DECISION_STEPS)]
    buffer = ReplayBuffer(buffer_capacity)
    curve = []
    stats = []
    places_total = 0
    for r in range(round_config.rounds):
        t0 = time.monotonic()
        eps_g = epsilon_at(exploration, r, "grasp")
        eps_p = epsilon_at(exploration, r, "place", places_total)
        jobs = [(r, e) for e in range(round_config.episodes_per_round)]
        if workers > 1:
            ctx = multiprocessing.get_context("fork")
            shared = dict(seed=seed, task=task, qfuncs=qfuncs,
                          schedule=schedule, eps_grasp=eps_g, eps_place=eps_p,
                          n_samples=n_samples, spawn_kwargs=spawn_kwargs)
            with ctx.Pool(workers, _pool_init, (shared,)) as pool:
                results = pool.map(_pool_episode, jobs, chunksize=8)
        else:
            results = []
            for job in jobs:
                env_seed, rng = _episode_rng(seed, r, job[1])
                results.append(run_episode(
                    env_seed, task, qfuncs, schedule, eps_g, eps_p, rng,
                    n_samples=n_samples, episode_id=job[1],
                    spawn_kwargs=spawn_kwargs))

        grasp_rewards = []
        place_rewards = []
        grasp_successes = 0
        place_successes = 0
        place_attempts = 0
        for transitions, _ret in results:
            buffer.add_episode(transitions)
            g = next((t.reward for t in transitions
                      if t.time_step == CLOSE_STEP), 0.0)
            grasp_rewards.append(g)
            p = next((t.reward for t in transitions
                      if t.time_step == OPEN_STEP), None)
            if g > 0.0:
                place_attempts += 1
                places_total += 1
            place_rewards.append(p if p is not None else 0.0)
            grasp_successes += g > 0.0
            place_successes += (p or 0.0) > 0.0

        losses = []
        for t_net in range(N_DECISION_STEPS):
            raw_step = t_net if t_net <= 5 else t_net + 1
            data = buffer.for_step(raw_step)
            if not data:
                continue
            rng_t = np.random.default_rng(
                np.random.SeedSequence(entropy=seed,
                                       spawn_key=(r, 10_000 + t_net)))
            q = qfuncs[t_net]
            for _ in range(round_config.sgd_iters_per_round):
                idx = rng_t.integers(len(data), size=batch_size)
                imgs = np.stack([data[i].image_stack() for i in idx])
                acts = np.stack([data[i].action for i in idx])
                labels = np.array([data[i].label for i in idx])
                lr_eff = lr / (1.0 + q.step_count / lr_decay_steps)
                q, loss = sgd_step(q, (imgs, acts, labels), lr_eff)
                losses.append(loss)
            qfuncs[t_net] = q

        n_ep = len(results)
        curve.append({
            "round": r, "episodes": n_ep,
            "mean_grasp_reward": float(np.mean(grasp_rewards)),
            "mean_place_reward": float(np.mean(place_rewards)),
            "epsilon_grasp": eps_g, "epsilon_place": eps_p,
            "wall_seconds": time.monotonic() - t0,
        })
        stats.append({
            "round": r,
            "grasp_success_rate": grasp_successes / n_ep,
            "place_success_rate": (place_successes / place_attempts
                                   if place_attempts else 0.0),
            "place_attempts": place_attempts,
            "buffer_transitions": len(buffer),
            "mean_sgd_loss": float(np.mean(losses)) if losses else math.nan,
        })
        if checkpoint_fn is not None:
            checkpoint_fn(r, qfuncs)
        if progress_fn is not None:
            progress_fn(curve[-1], stats[-1])
    return TrainResult(qfuncs, curve, stats)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


FAILURE_KINDS = ("DF", "GF", "FOS", "PUD", "PIS")


@dataclass
class EvalReport:
    episodes: int = 0
    grasp_a: int = 0          # antipodal condition met at close
    grasp_acf: int = 0        # antipodal and collision-free
    grasp_rewarded: int = 0   # grasp reward > 0 (place attempted)
    place_success: int = 0
    task_success: int = 0
    failures: dict = field(default_factory=lambda: dict.fromkeys(
        FAILURE_KINDS, 0))

    def rates(self, include_df: bool = True) -> dict:
        df = self.failures["DF"]
        n = self.episodes if include_df else max(self.episodes - df, 1)
        attempts = self.grasp_rewarded
        return {
            "grasp_A": self.grasp_a / max(n, 1),
            "grasp_ACF": self.grasp_acf / max(n, 1),
            "place": self.place_success / max(attempts, 1),
            "task": self.task_success / max(n, 1),
        }


def _classify_place_failure(task: str, spec_dict: dict) -> str:
    req = spec_dict["required"]
    if task == "bottles":
        if not req["upright_30deg"]:
            return "PUD"
        if not (req["above_coaster"] and req["height_4cm"]):
            return "FOS"
        return "PIS"
    if task == "blocks":
        if not (req["rests_on_block_2cm"] and req["footprint_overlap_50"]
                and req["aligned_30deg"]):
            return "FOS"
        return "PIS"
    if task == "mugs":
        if not req["upright_30deg"]:
            return "PUD"
        return "PIS"
    raise ValueError(task)


def _detection_failure(trial, threshold) -> bool:
    if threshold is None:
        return False
    return any(pick.value < threshold for pick in trial.chosen)


def evaluate(task: str, qfuncs, n_episodes: int, n_trials: int = 10,
             schedule: GazeSchedule | None = None, *, seed: int = 0,
             n_samples: int = 100, detect_threshold: float | None = None,
             spawn_kwargs: dict | None = None,
             friction_half_angle_deg: float = 10.0) -> EvalReport:
    """Greedy n-trial evaluation over independent episodes.

    Reports grasp success under the antipodal condition alone and under
    antipodal-and-collision-free, the place and full-task rates, and failure
    counts (detection failure, grasp failure, fell-off-support,
    placed-upside-down, placed-into-support analogues).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    schedule = schedule or default_schedule()
    report = EvalReport(episodes=n_episodes)
    for e in range(n_episodes):
        env_seed, rng = _episode_rng(seed, 0, e)
        state = spawn_scene(task, env_seed, **(spawn_kwargs or {}))
        try:
            state, trial, _ = n_trial_select(state, schedule, qfuncs[:6],
                                             n_trials, n_samples, rng)
        except EmptyCandidatesError:
            report.failures["GF"] += 1
            continue
        if _detection_failure(trial, detect_threshold):
            report.failures["DF"] += 1
            continue
        close_pose = state.gaze
        a_ok = antipodal_check(state.scene, close_pose,
                               state.gripper_cfg.max_width,
                               friction_half_angle_deg)
        cf_ok = not collision_check(state.scene, close_pose,
                                    cfg=state.gripper_cfg)
        report.grasp_a += a_ok
        report.grasp_acf += a_ok and cf_ok
        state, grasp_reward = move_effect(state, "close")
        if grasp_reward <= 0.0:
            report.failures["GF"] += 1
            continue
        report.grasp_rewarded += 1
        try:
            state, trial, _ = n_trial_select(state, schedule, qfuncs[6:],
                                             n_trials, n_samples, rng)
        except EmptyCandidatesError:
            report.failures["FOS"] += 1
            continue
        if _detection_failure(trial, detect_threshold):
            report.failures["DF"] += 1
            continue
        state, place_reward = move_effect(state, "open")
        if place_reward > 0.0:
            report.place_success += 1
            report.task_success += 1
        else:
            info = state.effect_info or {}
            if info.get("failure") == "motion_infeasible":
                report.failures["FOS"] += 1
            else:
                report.failures[_classify_place_failure(
                    task, info["spec"])] += 1
    return report
