"""Fixed-policy reference sweep.

Each fixed policy applies one restriction level l in [0, 1] for the whole
episode, interpolating the contact matrix between the home-only floor and the
unrestricted matrix. That is exactly the constant action (l, l, l), so the
sweep reuses the environment step (holiday school closure included).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pareto
from .env import EnvConfig, MobelcovEnv
from .parameters import ModelParameters
from .rng import derive_rng

DEFAULT_LEVELS = 100


@dataclass(frozen=True)
class FixedPolicy:
    level: float

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ValueError("restriction level must lie in [0, 1]")

    @property
    def action(self) -> tuple[float, float, float]:
        return (self.level, self.level, self.level)


@dataclass
class SweepRow:
    level: float
    episodic_return: tuple[float, float]   # scaled units
    nondominated: bool = False


@dataclass
class SweepResult:
    rows: list[SweepRow]

    def returns(self) -> np.ndarray:
        return np.array([r.episodic_return for r in self.rows])

    def front(self) -> np.ndarray:
        return pareto.nondominated_filter(self.returns())


def run_fixed_policy(env: MobelcovEnv, policy: FixedPolicy,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    state, _ = env.reset(rng)
    total = np.zeros(2)
    done = False
    while not done:
        state, reward, done, _ = env.step(state, policy.action, rng)
        total += reward
    return total


def fixed_policy_sweep(env_cfg: EnvConfig, model: ModelParameters,
                       n_levels: int = DEFAULT_LEVELS, repeats: int = 1,
                       master_seed: int = 0) -> SweepResult:
    """Episodic returns of `n_levels` uniform restriction levels over [0, 1].

    In stochastic mode every (level, repeat) pair gets an independent derived
    stream and the returns are averaged over `repeats`.
    """
    if n_levels < 2:
        raise ValueError("need at least 2 levels to sweep [0, 1]")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    env = MobelcovEnv(env_cfg, model)
    stochastic = env_cfg.mode == "stochastic"
    rows = []
    for i, level in enumerate(np.linspace(0.0, 1.0, n_levels)):
        policy = FixedPolicy(float(level))
        totals = np.zeros(2)
        for rep in range(repeats if stochastic else 1):
            rng = derive_rng(master_seed, "baseline", i * repeats + rep) if stochastic else None
            totals += run_fixed_policy(env, policy, rng)
        totals /= repeats if stochastic else 1
        rows.append(SweepRow(level=policy.level, episodic_return=tuple(totals)))

    returns = np.array([r.episodic_return for r in rows])
    mask = pareto.nondominated_mask(returns)
    for row, keep in zip(rows, mask):
        row.nondominated = bool(keep)
    return SweepResult(rows=rows)
