"""Expert rollout generation: track a behavior's reference targets with the
simulator's PD actuators, optionally perturbed by seeded Gaussian action
noise, and record the full episode.

Applied actions are rounded to float32 before stepping so that episodes
survive the 32-bit dataset store bit-exactly: replaying stored actions from
the stored initial state reproduces the stored trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from motionlab.constants import CONTROL_HZ, EPISODE_CAP_STEPS
from motionlab.errors import MotionLabError
from motionlab.experts.behaviors import BehaviorSpec
from motionlab.physim.body import BodyModel
from motionlab.physim.sim import SimState, Simulator


@dataclass
class Episode:
    """One rollout: time-aligned observations, actions, and states.
    actions[t] was applied at states[t] and produced states[t+1]; the final
    (possibly fallen) state is not recorded.
    """

    behavior: str
    observations: np.ndarray      # (T, D_obs) float64
    actions: np.ndarray           # (T, D_act) float64, float32-representable
    states: list[SimState]
    terminated_by_fall: bool
    noise_seed: int

    @property
    def episode_length(self) -> int:
        return len(self.states)


def expert_action(state: SimState, behavior: BehaviorSpec, t: float) -> np.ndarray:
    """Reference target at time t. The expert is a pure feed-forward tracker:
    the state argument is part of the policy interface but unused."""
    del state
    return behavior.action_at(t)


def settled_reset(sim: Simulator, pose: np.ndarray, joint_vel=None, root_vel=(0.0, 0.0)) -> SimState:
    """Reset with the root lowered so the lowest contact point carries the
    static penalty penetration; avoids a touch-down splash at t=0."""
    probe = sim.reset(pose)
    dirs, pivots, _ = sim._fk(probe.root_pos, probe.root_angle, probe.joint_q)
    cp_z = pivots[sim._cp_link][:, 1] + sim._cp_off * dirs[sim._cp_link][:, 1]
    weight = sim.model.gravity * float(np.sum(sim._mass))
    pen = weight / (sim.n_cp * sim.model.contact_stiffness)
    root_z = sim.model.standing_height - float(cp_z.min()) - pen
    return sim.reset(pose, root_pos=(0.0, root_z), joint_vel=joint_vel, root_vel=root_vel)


def gait_start_state(sim: Simulator, behavior: BehaviorSpec) -> SimState:
    """Initial state in phase with the reference: joint velocities from the
    reference derivative and the nominal root speed, so cyclic gaits do not
    stumble out of a cold stand."""
    pose = np.clip(behavior.action_at(0.0), sim._lo, sim._hi)
    dt = 1.0 / CONTROL_HZ
    vel = (behavior.action_at(dt) - behavior.action_at(0.0)) / dt
    speed = behavior.root_velocity.value_at(0.0)
    return settled_reset(sim, pose, joint_vel=vel, root_vel=(speed, 0.0))


def generate_rollout(behavior: BehaviorSpec, model: BodyModel, noise_scale: float,
                     seed: int, sim: Simulator | None = None) -> Episode:
    """Roll the expert forward until a fall or the 480-step cap.

    Deterministic given the seed; the recorded action is exactly the noisy
    action that was applied.
    """
    if noise_scale < 0:
        raise MotionLabError("noise_scale must be >= 0")
    sim = sim or Simulator(model)
    rng = np.random.default_rng(seed)

    state = gait_start_state(sim, behavior)

    observations = []
    actions = []
    states = []
    fell = False
    for t in range(EPISODE_CAP_STEPS):
        obs = sim.observe(state)
        ref = behavior.action_at(t / CONTROL_HZ)
        noisy = ref + noise_scale * rng.standard_normal(sim.act_dim)
        applied = noisy.astype(np.float32).astype(np.float64)
        observations.append(obs)
        actions.append(applied)
        states.append(state)
        state = sim.step(state, applied)
        if sim.is_fallen(state):
            fell = True
            break

    return Episode(
        behavior=behavior.name,
        observations=np.asarray(observations),
        actions=np.asarray(actions),
        states=states,
        terminated_by_fall=fell,
        noise_seed=seed,
    )


def episode_seed(base_seed: int, behavior_name: str, index: int) -> int:
    from motionlab.util import stable_seed
    return (int(base_seed) + stable_seed(behavior_name, index)) % (2**63 - 1)


def build_dataset(behaviors, model: BodyModel, rollouts_per_behavior: int,
                  noise_scale: float, seed: int, root, dataset_id: str,
                  jobs: int = 1):
    """Generate rollouts for every behavior and persist them as a dataset.
    Returns the finalized DatasetStore. Held-out-seed episodes (the last 10%
    of indices, at least one when rollouts >= 2) and all episodes of the
    validation behaviors land in the validation split.
    """
    from motionlab import dataset as ds
    from motionlab.experts.behaviors import VALIDATION_BEHAVIOR_NAMES

    if rollouts_per_behavior < 1:
        raise MotionLabError("rollouts_per_behavior must be >= 1")
    names = [b.name for b in behaviors]
    if len(set(names)) != len(names):
        raise MotionLabError(f"duplicate behavior names in {names}")

    sim = Simulator(model)
    store = ds.DatasetStore.create(root, dataset_id, d_obs=sim.obs_dim, d_act=sim.act_dim,
                                   seed=seed, noise_scale=noise_scale, body_model=model)

    jobs_list = [(b, i) for b in behaviors for i in range(rollouts_per_behavior)]

    def split_of(behavior_name: str, index: int) -> str:
        if behavior_name in VALIDATION_BEHAVIOR_NAMES:
            return "validation"
        holdout_from = int(np.ceil(0.9 * rollouts_per_behavior))
        if rollouts_per_behavior >= 2 and index >= holdout_from:
            return "validation"
        return "train"

    if jobs > 1:
        episodes = _parallel_rollouts(jobs_list, model, noise_scale, seed, jobs)
    else:
        episodes = (generate_rollout(b, model, noise_scale,
                                     episode_seed(seed, b.name, i), sim=sim)
                    for b, i in jobs_list)

    with store.writer():
        for (b, i), ep in zip(jobs_list, episodes):
            store.write_episode(ep, episode_id=f"{b.name}-{i:04d}",
                                split=split_of(b.name, i))
        store.finalize()
    return store


def _parallel_rollouts(jobs_list, model, noise_scale, seed, jobs):
    from concurrent.futures import ProcessPoolExecutor

    args = [(b, model, noise_scale, episode_seed(seed, b.name, i)) for b, i in jobs_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(_rollout_job, args, chunksize=4)


def _rollout_job(arg):
    behavior, model, noise_scale, seed = arg
    return generate_rollout(behavior, model, noise_scale, seed)
