"""Return-conditioned policy training over the weekly epidemic environment.

The learner keeps a bounded buffer of episodes ranked by Pareto non-dominance
of their episodic returns (ties broken by crowding distance, then recency).
Episodes are collected by conditioning the policy network on a desired return
and horizon sampled from the buffer's current front, nudged outward with
Gaussian noise; the network is then regressed (MSE) onto the actions that
produced those returns. Execution-time policies are deterministic; exploration
noise is only added while collecting.

Conditioning units: the environment emits scaled rewards, and before entering
the network, desired returns and horizons are additionally multiplied by a
per-component conditioning scale so the conditioning subnet sees O(1) values.
The scale is calibrated from the warmup episodes by default and is stored in
checkpoints so evaluation uses identical units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn, pareto
from .env import EnvConfig, MobelcovEnv
from .parameters import ModelParameters
from .rng import derive_rng

logger = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """One episode: per-step observations, executed actions, scaled rewards."""

    observations: np.ndarray   # (T, obs_size)
    actions: np.ndarray        # (T, 3)
    rewards: np.ndarray        # (T, 2)

    def __post_init__(self):
        if not (len(self.observations) == len(self.actions) == len(self.rewards)):
            raise ValueError("trajectory arrays disagree on length")
        if len(self.rewards) < 1:
            raise ValueError("trajectory must contain at least one step")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def episodic_return(self) -> np.ndarray:
        return self.rewards.sum(axis=0)

    def suffix_returns(self) -> np.ndarray:
        """Return-to-go from each step (telescopes by the observed rewards)."""
        return np.cumsum(self.rewards[::-1], axis=0)[::-1]

    def remaining_horizons(self) -> np.ndarray:
        return np.arange(len(self), 0, -1, dtype=float)


@dataclass(frozen=True)
class DesiredTarget:
    desired_return: tuple[float, float]   # scaled reward units
    desired_horizon: float

    def __post_init__(self):
        if self.desired_horizon < 1:
            raise ValueError("desired horizon must be >= 1")
        if not np.all(np.isfinite(self.desired_return)):
            raise ValueError("desired return must be finite")


def nondominated_sort(returns: np.ndarray) -> np.ndarray:
    """Non-domination rank per row (0 = front), maximization orientation."""
    n = len(returns)
    if n == 0:
        return np.zeros(0, dtype=int)
    ge = np.all(returns[:, None, :] >= returns[None, :, :], axis=2)
    gt = np.any(returns[:, None, :] > returns[None, :, :], axis=2)
    dominates = ge & gt                       # [i, j]: i dominates j
    n_dominators = dominates.sum(axis=0)
    ranks = np.full(n, -1, dtype=int)
    current = np.flatnonzero(n_dominators == 0)
    rank = 0
    remaining = n
    while remaining:
        ranks[current] = rank
        remaining -= len(current)
        n_dominators = n_dominators - dominates[current].sum(axis=0)
        n_dominators[ranks >= 0] = -1
        current = np.flatnonzero(n_dominators == 0)
        rank += 1
    return ranks


def crowding_distance(returns: np.ndarray) -> np.ndarray:
    """Crowding distance within one rank class (range-normalized).

    Exact duplicates share one distance value, so ties among them fall through
    to the recency rule instead of being decided by sort position."""
    unique, inverse = np.unique(returns, axis=0, return_inverse=True)
    inverse = inverse.ravel()  # 2-D on one numpy release
    n = len(unique)
    if n <= 2:
        return np.full(len(returns), np.inf)
    dist = np.zeros(n)
    for o in range(unique.shape[1]):
        order = np.argsort(unique[:, o], kind="stable")
        span = unique[order[-1], o] - unique[order[0], o]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            gaps = (unique[order[2:], o] - unique[order[:-2], o]) / span
            dist[order[1:-1]] += gaps
    return dist[inverse]


class ExperienceBuffer:
    """Bounded episode store pruned by (rank, crowding, recency)."""

    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.items: list[Trajectory] = []
        self._ids: list[int] = []
        self._counter = 0
        self.ranks = np.zeros(0, dtype=int)

    def __len__(self) -> int:
        return len(self.items)

    def returns(self) -> np.ndarray:
        if not self.items:
            return np.zeros((0, 2))
        return np.vstack([t.episodic_return for t in self.items])

    def front(self) -> np.ndarray:
        """Non-dominated episodic returns currently stored."""
        rets = self.returns()
        if not len(rets):
            return rets
        return pareto.nondominated_filter(rets)

    def front_items(self) -> list[Trajectory]:
        return [t for t, r in zip(self.items, self.ranks) if r == 0]

    def update(self, new_trajectories) -> None:
        for traj in new_trajectories:
            self.items.append(traj)
            self._ids.append(self._counter)
            self._counter += 1
        self.ranks = nondominated_sort(self.returns())
        while len(self.items) > self.capacity:
            self._evict_one()
        # ranks of survivors are unchanged by evictions from the worst class

    def _evict_one(self) -> None:
        worst = self.ranks.max()
        class_idx = np.flatnonzero(self.ranks == worst)
        crowd = crowding_distance(self.returns()[class_idx])
        least = crowd.min()
        candidates = class_idx[crowd == least]
        victim = min(candidates, key=lambda i: self._ids[i])  # drop the oldest
        del self.items[victim]
        del self._ids[victim]
        self.ranks = np.delete(self.ranks, victim)


def choose_desired(buffer: ExperienceBuffer, return_noise_scale: float,
                   rng: np.random.Generator) -> DesiredTarget:
    """Sample a conditioning target from the buffer's front, pushed outward.

    The target return is a front episode's return plus Gaussian noise with
    per-objective scale `return_noise_scale * std(buffer returns)`; one
    uniformly chosen objective gets an extra deterministic nudge of the same
    size so targets slightly overshoot the achieved front.
    """
    if not len(buffer):
        raise ValueError("cannot choose a target from an empty buffer")
    front = buffer.front_items()
    pick = front[rng.integers(len(front))]
    desired = pick.episodic_return.astype(float).copy()
    if return_noise_scale > 0:
        std = buffer.returns().std(axis=0)
        desired += rng.normal(0.0, 1.0, 2) * (return_noise_scale * std)
        objective = int(rng.integers(2))
        desired[objective] += return_noise_scale * std[objective]
    return DesiredTarget(desired_return=tuple(desired), desired_horizon=float(max(len(pick), 1)))


def run_episode(env: MobelcovEnv, net: nn.NetworkParams, target: DesiredTarget,
                noise_scale: float, rng: np.random.Generator,
                cond_scale: np.ndarray, env_rng: np.random.Generator | None = None) -> Trajectory:
    """Collect one episode conditioned on `target`.

    After every step the desired return is reduced by the observed reward and
    the desired horizon decremented (floored at 1). `rng` drives exploration
    noise; `env_rng` drives stochastic transitions.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    state, _ = env.reset(env_rng)
    desired = np.asarray(target.desired_return, dtype=float).copy()
    horizon = float(target.desired_horizon)
    obs_rows, act_rows, rew_rows = [], [], []
    done = False
    while not done:
        obs = env.observe(state)
        action = nn.policy_forward(net, obs, desired * cond_scale[:2], horizon * cond_scale[2])
        if noise_scale > 0:
            action = np.clip(action + noise_scale * rng.standard_normal(3), 0.0, 1.0)
        state, reward, done, _ = env.step(state, action, env_rng)
        obs_rows.append(obs)
        act_rows.append(np.asarray(action, dtype=float))
        rew_rows.append(reward)
        desired -= reward
        horizon = max(horizon - 1.0, 1.0)
    return Trajectory(np.asarray(obs_rows), np.asarray(act_rows), np.asarray(rew_rows))


def random_episode(env: MobelcovEnv, rng: np.random.Generator,
                   env_rng: np.random.Generator | None = None) -> Trajectory:
    """Warmup episode with uniform-random actions."""
    state, _ = env.reset(env_rng)
    obs_rows, act_rows, rew_rows = [], [], []
    done = False
    while not done:
        obs = env.observe(state)
        action = rng.uniform(0.0, 1.0, 3)
        state, reward, done, _ = env.step(state, action, env_rng)
        obs_rows.append(obs)
        act_rows.append(action)
        rew_rows.append(reward)
    return Trajectory(np.asarray(obs_rows), np.asarray(act_rows), np.asarray(rew_rows))


@dataclass(frozen=True)
class PcnConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    arch: str = "dense-big"
    total_steps: int = 300_000
    warmup_episodes: int = 200
    episodes_per_iteration: int = 10
    updates_per_iteration: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-3
    buffer_capacity: int = 1000
    exploration_noise: float = 0.1
    desired_return_noise: float = 0.2
    train_input_noise: float = 0.05
    conditioning_scale: tuple | None = None   # None: calibrate from warmup returns
    horizon_scale: float = 0.1
    master_seed: int = 0


@dataclass
class CoveragePoint:
    policy_id: int
    desired_return: tuple[float, float]    # scaled units (conditioning target)
    desired_horizon: float
    achieved_return: tuple[float, float]   # scaled units


@dataclass
class TrainResult:
    net: nn.NetworkParams
    cond_scale: np.ndarray                 # (3,): two return components + horizon
    coverage: list[CoveragePoint]
    log_rows: list[dict]
    steps_used: int
    config: PcnConfig


def _transition_batch(buffer: ExperienceBuffer, batch_size: int,
                      input_noise: float, cond_scale: np.ndarray,
                      rng: np.random.Generator) -> nn.TrainingBatch:
    """Uniform sample over all stored transitions, with Gaussian noise on the
    desired-return inputs (scaled per objective by the buffer's return std)."""
    lengths = np.array([len(t) for t in buffer.items])
    cumulative = np.cumsum(lengths)
    picks = rng.integers(cumulative[-1], size=batch_size)
    traj_idx = np.searchsorted(cumulative, picks, side="right")
    step_idx = picks - (cumulative[traj_idx] - lengths[traj_idx])

    obs = np.empty((batch_size, buffer.items[0].observations.shape[1]))
    rets = np.empty((batch_size, 2))
    hors = np.empty(batch_size)
    acts = np.empty((batch_size, 3))
    for row, (ti, si) in enumerate(zip(traj_idx, step_idx)):
        traj = buffer.items[ti]
        obs[row] = traj.observations[si]
        rets[row] = traj.suffix_returns()[si]
        hors[row] = len(traj) - si
        acts[row] = traj.actions[si]
    if input_noise > 0:
        std = buffer.returns().std(axis=0)
        rets += rng.normal(0.0, 1.0, rets.shape) * (input_noise * std)
    return nn.TrainingBatch(obs=obs, desired_return=rets * cond_scale[:2],
                            desired_horizon=hors * cond_scale[2], target_action=acts)


def _auto_cond_scale(returns: np.ndarray, horizon_scale: float) -> np.ndarray:
    """Per-objective inverse magnitude so conditioning inputs are O(1)."""
    magnitude = np.maximum(np.abs(returns).mean(axis=0), 1e-9)
    return np.array([1.0 / magnitude[0], 1.0 / magnitude[1], horizon_scale])


def train(cfg: PcnConfig, model: ModelParameters) -> TrainResult:
    env = MobelcovEnv(cfg.env, model)
    horizon = env.n_weeks
    if cfg.total_steps < cfg.warmup_episodes * horizon:
        raise ValueError(
            f"step budget {cfg.total_steps} cannot cover {cfg.warmup_episodes} warmup "
            f"episodes of {horizon} steps")

    seed = cfg.master_seed
    rng_warmup = derive_rng(seed, "pcn-warmup")
    rng_target = derive_rng(seed, "pcn-target")
    rng_explore = derive_rng(seed, "pcn-explore")
    rng_batch = derive_rng(seed, "pcn-batch")
    rng_env = derive_rng(seed, "pcn-env")
    net = nn.init_network(cfg.arch, seed=int(derive_rng(seed, "pcn-init").integers(2 ** 31)))
    adam = nn.Adam()
    buffer = ExperienceBuffer(cfg.buffer_capacity)

    steps_used = 0
    warmup = []
    for _ in range(cfg.warmup_episodes):
        traj = random_episode(env, rng_warmup, rng_env)
        warmup.append(traj)
        steps_used += len(traj)
    buffer.update(warmup)

    if cfg.conditioning_scale is not None:
        cond_scale = np.asarray(cfg.conditioning_scale, dtype=float)
        if cond_scale.shape != (3,):
            raise ValueError("conditioning_scale must have 3 components")
    else:
        cond_scale = _auto_cond_scale(buffer.returns(), cfg.horizon_scale)
        logger.info("calibrated conditioning scale: %s", cond_scale)

    log_rows: list[dict] = []
    bounds_lo = buffer.returns().min(axis=0)
    bounds_hi = buffer.returns().max(axis=0)
    iteration = 0
    while steps_used < cfg.total_steps:
        collected = []
        for _ in range(cfg.episodes_per_iteration):
            target = choose_desired(buffer, cfg.desired_return_noise, rng_target)
            traj = run_episode(env, net, target, cfg.exploration_noise, rng_explore,
                               cond_scale, rng_env)
            collected.append(traj)
            steps_used += len(traj)
        buffer.update(collected)

        loss = 0.0
        for _ in range(cfg.updates_per_iteration):
            batch = _transition_batch(buffer, cfg.batch_size, cfg.train_input_noise,
                                      cond_scale, rng_batch)
            loss = nn.train_batch(net, adam, batch, cfg.learning_rate)

        rets = buffer.returns()
        bounds_lo = np.minimum(bounds_lo, rets.min(axis=0))
        bounds_hi = np.maximum(bounds_hi, rets.max(axis=0))
        bounds = pareto.NormalizationBounds(lo=tuple(bounds_lo), hi=tuple(bounds_hi))
        hv = pareto.hypervolume_2d(pareto.normalize_points(buffer.front(), bounds), (0.0, 0.0))
        iteration += 1
        log_rows.append({"iteration": iteration, "steps": steps_used,
                         "buffer_size": len(buffer), "hypervolume": hv,
                         "last_loss": loss})

    coverage = []
    front = sorted(buffer.front_items(), key=lambda t: tuple(t.episodic_return))
    for idx, traj in enumerate(front):
        ret = tuple(float(x) for x in traj.episodic_return)
        coverage.append(CoveragePoint(policy_id=idx, desired_return=ret,
                                      desired_horizon=float(len(traj)),
                                      achieved_return=ret))
    return TrainResult(net=net, cond_scale=cond_scale, coverage=coverage,
                       log_rows=log_rows, steps_used=steps_used, config=cfg)


@dataclass
class RobustnessRow:
    policy_id: int
    desired_return: tuple[float, float]
    desired_horizon: float
    achieved_mean: tuple[float, float]


def evaluate_policies(net: nn.NetworkParams, cond_scale: np.ndarray,
                      coverage: list[CoveragePoint], env: MobelcovEnv,
                      n_eval: int, master_seed: int = 0
                      ) -> tuple[list[RobustnessRow], float, float]:
    """Re-execute every coverage policy without exploration noise.

    Each point's conditioning target is replayed `n_eval` times; returns the
    per-point mean achieved returns plus the epsilon indicators between the
    desired and achieved sets in normalized units.
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    if not coverage:
        raise ValueError("coverage set is empty")
    rows = []
    no_noise_rng = derive_rng(master_seed, "eval-unused")
    for point in coverage:
        achieved = np.zeros(2)
        for rep in range(n_eval):
            env_rng = derive_rng(master_seed, "eval-env", point.policy_id * n_eval + rep)
            target = DesiredTarget(point.desired_return, point.desired_horizon)
            traj = run_episode(env, net, target, 0.0, no_noise_rng, cond_scale, env_rng)
            achieved += traj.episodic_return
        achieved /= n_eval
        rows.append(RobustnessRow(point.policy_id, point.desired_return,
                                  point.desired_horizon, tuple(achieved)))

    desired = np.array([r.desired_return for r in rows])
    got = np.array([r.achieved_mean for r in rows])
    bounds = pareto.NormalizationBounds.from_point_sets(desired, got)
    i_eps, i_eps_mean = pareto.epsilon_indicators(
        pareto.normalize_points(desired, bounds), pareto.normalize_points(got, bounds))
    return rows, i_eps, i_eps_mean
