"""Weekly decision environment wrapped around the compartment model.

An episode covers a fixed 2020 calendar: infections are seeded on 1 March, a
scripted lockdown runs from 14 March, and agent control starts on 4 May with
one action per week until 31 August (17 weeks). Actions are contact-reduction
proportions (work incl. transport, school, leisure incl. other) in [0,1]^3.
During the school holidays (1 July - 31 August) the school proportion is
forced to zero on a per-day basis.

Two reward objectives are emitted per step, both negative costs:
  * attack rate, either as infections (susceptible depletion) or as new
    hospital admissions over the week, and
  * social burden, the contact deficit of the installed matrix weighted by
    the uninfected (susceptible and recovered) population products.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, replace

import numpy as np

from . import epi_core as ec
from .parameters import ContactMatrixSet, ModelParameters

OBJECTIVES_ARH = "arh-sb"   # weekly new hospitalizations vs social burden
OBJECTIVES_ARI = "ari-sb"   # weekly new infections vs social burden

LOCKDOWN_ACTION = (0.2, 0.0, 0.1)
FULL_OPEN_ACTION = (1.0, 1.0, 1.0)

N_OBJECTIVES = 2
N_CHANNELS = ec.N_COMPARTMENTS + 2   # + weekly new hospitalizations / deaths


class EpisodeDone(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    mode: str = ec.DETERMINISTIC
    objectives: str = OBJECTIVES_ARH
    seed_infections: tuple | None = None     # None: ~2.1e-4 of each group, rounded
    start: dt.date = dt.date(2020, 3, 1)
    lockdown_start: dt.date = dt.date(2020, 3, 14)
    control_start: dt.date = dt.date(2020, 5, 4)
    holiday_start: dt.date = dt.date(2020, 7, 1)
    end: dt.date = dt.date(2020, 8, 31)
    holiday_end: dt.date | None = None       # defaults to `end`
    lockdown_action: tuple = LOCKDOWN_ACTION
    reward_scale: tuple = (10_000.0, 100.0)  # attack objective, social-burden objective
    sb_unit: float = 1e6                     # pre-divisor bringing person*person products down
    sb_per_capita: bool = False              # use population fractions in the burden products

    def __post_init__(self):
        if self.mode not in (ec.DETERMINISTIC, ec.STOCHASTIC):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.objectives not in (OBJECTIVES_ARH, OBJECTIVES_ARI):
            raise ValueError(f"unknown objective pair {self.objectives!r}")
        if self.holiday_end is None:
            object.__setattr__(self, "holiday_end", self.end)
        ordered = (self.start, self.lockdown_start, self.control_start,
                   self.holiday_start, self.end)
        if not all(a < b for a, b in zip(ordered, ordered[1:])):
            raise ValueError("calendar dates must be strictly ordered")
        if not self.holiday_start <= self.holiday_end <= self.end:
            raise ValueError("holiday window must fall inside the episode")
        if (self.end - self.control_start).days % 7 != 0:
            raise ValueError("control phase must span whole weeks")
        if (self.control_start - self.lockdown_start).days < 7:
            raise ValueError("lockdown phase must cover at least the final pre-control week")
        if any(not 0 <= x <= 1 for x in self.lockdown_action):
            raise ValueError("lockdown action components must lie in [0, 1]")
        if min(self.reward_scale) <= 0 or self.sb_unit <= 0:
            raise ValueError("reward scaling divisors must be positive")

    # Day indices count from `start`.
    def day_of(self, date: dt.date) -> int:
        return (date - self.start).days

    def date_of(self, day: int) -> dt.date:
        return self.start + dt.timedelta(days=int(day))

    @property
    def n_weeks(self) -> int:
        return (self.end - self.control_start).days // 7

    def is_holiday(self, day: int) -> bool:
        return self.day_of(self.holiday_start) <= day <= self.day_of(self.holiday_end)


@dataclass
class EnvState:
    model: ec.CompartmentState
    prev_action: tuple          # action as executed on the most recent day
    week_index: int
    calendar_day: int
    holiday_flag: bool
    installed_action: tuple     # action defining the compliance target matrix
    c_prev: np.ndarray          # matrix in force when the target was installed
    c_target: np.ndarray
    t_anchor: float
    week_new_hosp: np.ndarray   # previous week's admissions / deaths per group
    week_new_deaths: np.ndarray
    done: bool = False

    def copy(self) -> "EnvState":
        return replace(self, model=self.model.copy(),
                       week_new_hosp=self.week_new_hosp.copy(),
                       week_new_deaths=self.week_new_deaths.copy())


def validate_action(action) -> tuple:
    action = tuple(float(x) for x in action)
    if len(action) != 3 or any(not np.isfinite(x) or not 0.0 <= x <= 1.0 for x in action):
        raise ValueError(f"action must lie in [0,1]^3, got {action}")
    return action


def social_burden(state: ec.CompartmentState, c_hat: np.ndarray, cms: ContactMatrixSet,
                  population: np.ndarray, per_capita: bool = False) -> float:
    """Contact deficit of c_hat against the unrestricted matrix, weighted by
    susceptible-susceptible and recovered-recovered population products."""
    diff = c_hat - cms.full
    s = state.counts[ec.S].astype(float)
    r = state.counts[ec.R].astype(float)
    if per_capita:
        s = s / population
        r = r / population
    return float(s @ diff @ s + r @ diff @ r)


def compute_rewards(state: EnvState, action, state_next: EnvState,
                    cms: ContactMatrixSet, population: np.ndarray,
                    per_capita: bool = False) -> tuple[float, float, float]:
    """Raw (infections, hospitalizations, social burden) rewards for one week.

    The burden term uses the matrix installed by `action` directly; the weekly
    step applies the same formula day by day so holiday overrides are honored.
    """
    c_hat = ec.effective_contact_matrix(cms, validate_action(action))
    r_ari = -(state.model.counts[ec.S].sum() - state_next.model.counts[ec.S].sum())
    r_arh = -state_next.model.counts[ec.H_NEW].sum()
    r_sb = social_burden(state.model, c_hat, cms, population, per_capita)
    return float(r_ari), float(r_arh), float(r_sb)


class MobelcovEnv:
    """Weekly multi-objective environment; `reset`/`step` are pure given an rng."""

    def __init__(self, cfg: EnvConfig, model: ModelParameters):
        self.cfg = cfg
        self.model = model
        self.k = model.age.n_groups
        self._full = model.contacts.full
        self._matrix_cache: dict[tuple, np.ndarray] = {}

    # -- helpers ---------------------------------------------------------------

    @property
    def n_weeks(self) -> int:
        return self.cfg.n_weeks

    def target_matrix(self, action: tuple) -> np.ndarray:
        mat = self._matrix_cache.get(action)
        if mat is None:
            mat = ec.effective_contact_matrix(self.model.contacts, action)
            self._matrix_cache[action] = mat
        return mat

    def seed_vector(self) -> np.ndarray:
        if self.cfg.seed_infections is not None:
            seeds = np.asarray(self.cfg.seed_infections, dtype=float)
            if seeds.shape != (self.k,) or np.any(seeds < 0):
                raise ValueError("seed_infections must be a non-negative K-vector")
        else:
            seeds = np.round(self.model.age.population * 2.13e-4)
        return seeds

    def _dtype(self):
        return np.int64 if self.cfg.mode == ec.STOCHASTIC else float

    def _effective_action(self, action: tuple, day: int) -> tuple:
        if self.cfg.is_holiday(day):
            return (action[0], 0.0, action[2])
        return action

    def _simulate_day(self, state: EnvState, day: int, action: tuple,
                      rng, day_rows: list | None) -> tuple[EnvState, tuple]:
        """Advance one calendar day under `action`, switching the compliance
        target whenever the day's effective action changes."""
        eff = self._effective_action(action, day)
        if eff != state.installed_action:
            weight = ec.compliance_weight(day, state.t_anchor, self.model.epi)
            state.c_prev = ec.blended_matrix(state.c_prev, state.c_target, weight)
            state.c_target = self.target_matrix(eff)
            state.t_anchor = float(day)
            state.installed_action = eff
        flows = ec.FlowTotals.zeros(self.k) if day_rows is not None else None
        state.model = ec.simulate_days(
            state.model, state.c_prev, state.c_target, state.t_anchor, float(day), 1.0,
            self.cfg.mode, self.model.epi, self.model.contacts, rng=rng, flows=flows)
        if day_rows is not None:
            day_rows.append({
                "dates": self.cfg.date_of(day).isoformat(),
                "i_hosp_new": float(flows.hosp_admissions.sum()),
                "i_icu_new": float(flows.icu_admissions.sum()),
                "d_new": float(flows.deaths.sum()),
                "p_w": eff[0], "p_s": eff[1], "p_l": eff[2],
            })
        state.prev_action = eff
        return state, eff

    # -- MDP interface ----------------------------------------------------------

    def reset(self, rng: np.random.Generator | None = None,
              collect_daily: bool = False) -> tuple[EnvState, dict]:
        cfg = self.cfg
        if cfg.mode == ec.STOCHASTIC and rng is None:
            raise ValueError("stochastic mode requires an rng at reset")
        dtype = self._dtype()
        seeds = self.seed_vector().astype(dtype)
        population = self.model.age.population.astype(dtype)
        state = EnvState(
            model=ec.CompartmentState.seeded(population, seeds, dtype=dtype),
            prev_action=FULL_OPEN_ACTION,
            week_index=0,
            calendar_day=0,
            holiday_flag=False,
            installed_action=FULL_OPEN_ACTION,
            c_prev=self._full,
            c_target=self._full,
            t_anchor=0.0,
            week_new_hosp=np.zeros(self.k),
            week_new_deaths=np.zeros(self.k),
        )
        day_rows: list | None = [] if collect_daily else None

        lockdown_day = cfg.day_of(cfg.lockdown_start)
        control_day = cfg.day_of(cfg.control_start)
        for day in range(lockdown_day):
            state, _ = self._simulate_day(state, day, FULL_OPEN_ACTION, rng, day_rows)
        for day in range(lockdown_day, control_day - 7):
            state, _ = self._simulate_day(state, day, cfg.lockdown_action, rng, day_rows)
        hosp_mark = state.model.counts[ec.H_NEW].astype(float).copy()
        dead_mark = state.model.counts[ec.D].astype(float).copy()
        for day in range(control_day - 7, control_day):
            state, _ = self._simulate_day(state, day, cfg.lockdown_action, rng, day_rows)

        state.week_new_hosp = state.model.counts[ec.H_NEW] - hosp_mark
        state.week_new_deaths = state.model.counts[ec.D] - dead_mark
        state.model.counts[ec.H_NEW] = 0
        state.calendar_day = control_day
        state.week_index = 0
        state.holiday_flag = cfg.is_holiday(control_day)
        info = {"daily": day_rows} if collect_daily else {}
        return state, info

    def step(self, state: EnvState, action, rng: np.random.Generator | None = None,
             collect_daily: bool = False) -> tuple[EnvState, np.ndarray, bool, dict]:
        cfg = self.cfg
        if state.done:
            raise EpisodeDone("episode already finished; call reset")
        if cfg.mode == ec.STOCHASTIC and rng is None:
            raise ValueError("stochastic mode requires an rng at step")
        action = validate_action(action)

        state = state.copy()
        s_before = state.model.copy()
        state.model.counts[ec.H_NEW] = 0
        dead_mark = state.model.counts[ec.D].astype(float).copy()
        day_rows: list | None = [] if collect_daily else None

        sb_terms = []
        for d in range(7):
            day = state.calendar_day + d
            state, eff = self._simulate_day(state, day, action, rng, day_rows)
            sb_terms.append(social_burden(s_before, self.target_matrix(eff),
                                          self.model.contacts, self.model.age.population,
                                          cfg.sb_per_capita))

        r_ari = -float(s_before.counts[ec.S].sum() - state.model.counts[ec.S].sum())
        r_arh = -float(state.model.counts[ec.H_NEW].sum())
        r_sb = float(np.mean(sb_terms))

        state.week_new_hosp = state.model.counts[ec.H_NEW].astype(float).copy()
        state.week_new_deaths = state.model.counts[ec.D] - dead_mark
        state.week_index += 1
        state.calendar_day += 7
        state.holiday_flag = cfg.is_holiday(state.calendar_day)
        state.done = state.week_index >= cfg.n_weeks

        attack = r_arh if cfg.objectives == OBJECTIVES_ARH else r_ari
        reward = np.array([attack / cfg.reward_scale[0],
                           (r_sb / cfg.sb_unit) / cfg.reward_scale[1]])
        info = {"raw_rewards": (r_ari, r_arh, r_sb)}
        if collect_daily:
            info["daily"] = day_rows
        return state, reward, state.done, info

    def observe(self, state: EnvState) -> np.ndarray:
        """Feature vector: 13 per-group channels scaled by group population,
        then the previous action and the holiday flag (13 K + 4 values)."""
        population = self.model.age.population
        channels = np.vstack([
            state.model.counts.astype(float),
            state.week_new_hosp[None, :],
            state.week_new_deaths[None, :],
        ]) / population[None, :]
        return np.concatenate([
            channels.ravel(),                 # channel-major: channel 0 group 0..K-1, ...
            np.asarray(state.prev_action, dtype=float),
            [1.0 if state.holiday_flag else 0.0],
        ])

    @property
    def observation_size(self) -> int:
        return N_CHANNELS * self.k + 4
