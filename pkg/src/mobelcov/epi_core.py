"""Age-structured compartment dynamics.

One substep advances the state by `h` days, either with a forward-Euler update
of the flow equations (deterministic mode) or with binomial draws of every flow
(stochastic mode). Both modes share the time grid and the flow structure:

    s -> e -> i_presym -> {i_asym -> r, i_mild -> {i_sev -> {i_hosp, i_icu}, r}}
    i_hosp -> {r, d},  i_icu -> {r, d}

`h_new` is a hospital-admission counter; it is excluded from conservation and
may be zeroed by callers that track admissions per reporting window.

Competing exits from one compartment are drawn jointly in stochastic mode (one
binomial for the total at the summed rate, then a conditional split), so the
exits can never overdraw the source and person totals are conserved exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .parameters import ContactMatrixSet, EpiParams

logger = logging.getLogger(__name__)

# Channel indices of the state array.
S, E, I_PRESYM, I_ASYM, I_MILD, I_SEV, I_HOSP, I_ICU, H_NEW, D, R = range(11)
N_COMPARTMENTS = 11
CHANNELS = ("s", "e", "i_presym", "i_asym", "i_mild", "i_sev",
            "i_hosp", "i_icu", "h_new", "d", "r")
# h_new is a counter, not a person bucket.
CONSERVED = np.array([i for i in range(N_COMPARTMENTS) if i != H_NEW])

DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"


@dataclass
class CompartmentState:
    """Person counts per compartment and age group, shape (11, K)."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2 or self.counts.shape[0] != N_COMPARTMENTS:
            raise ValueError(f"state must have shape (11, K), got {self.counts.shape}")

    @classmethod
    def disease_free(cls, population: np.ndarray, dtype=float) -> "CompartmentState":
        counts = np.zeros((N_COMPARTMENTS, len(population)), dtype=dtype)
        counts[S] = population
        return cls(counts)

    @classmethod
    def seeded(cls, population: np.ndarray, exposed: np.ndarray, dtype=float) -> "CompartmentState":
        exposed = np.asarray(exposed, dtype=dtype)
        if np.any(exposed < 0) or np.any(exposed > population):
            raise ValueError("seeded exposures must lie in [0, population] per group")
        state = cls.disease_free(population, dtype=dtype)
        state.counts[S] -= exposed
        state.counts[E] += exposed
        return state

    @property
    def n_groups(self) -> int:
        return self.counts.shape[1]

    def copy(self) -> "CompartmentState":
        return CompartmentState(self.counts.copy())

    def alive_per_group(self) -> np.ndarray:
        """Per-group person total over all compartments except the admission counter."""
        return self.counts[CONSERVED].sum(axis=0)

    def channel(self, name: str) -> np.ndarray:
        return self.counts[CHANNELS.index(name)]


@dataclass
class StepDiagnostics:
    """Mutable counters threaded through substeps by interested callers."""

    substeps: int = 0
    negative_clamps: int = 0


@dataclass
class FlowTotals:
    """Accumulated inflows over a simulation span (per age group)."""

    infections: np.ndarray
    hosp_admissions: np.ndarray
    icu_admissions: np.ndarray
    deaths: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "FlowTotals":
        return cls(*(np.zeros(k) for _ in range(4)))


def effective_contact_matrix(cms: ContactMatrixSet, action) -> np.ndarray:
    """Aggregate contact matrix once work/school/leisure proportions are applied.

    action is (p_work, p_school, p_leisure) in [0,1]^3; work covers transport
    and leisure covers the residual location. Bounds: home <= result <= full.
    """
    p_w, p_s, p_l = (float(x) for x in action)
    for name, p in (("p_work", p_w), ("p_school", p_s), ("p_leisure", p_l)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return (cms.home
            + p_w * (cms.work + cms.transport)
            + p_s * cms.school
            + p_l * (cms.leisure + cms.other))


def compliance_weight(t: float, t_start: float, params: EpiParams) -> float:
    """Logistic share of the population already adhering to the measure
    installed at `t_start` (days). Non-decreasing in t for non-negative slope."""
    x = params.compliance_intercept + params.compliance_slope * (t - t_start)
    # Stable logistic for both signs of x.
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


def blended_matrix(c_prev: np.ndarray, c_target: np.ndarray, weight: float) -> np.ndarray:
    """Convex mix (1-w)*previous + w*target of two contact matrices."""
    if c_prev.shape != c_target.shape:
        raise ValueError(f"matrix shapes differ: {c_prev.shape} vs {c_target.shape}")
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"blend weight must lie in [0, 1], got {weight}")
    return (1.0 - weight) * c_prev + weight * c_target


def force_of_infection(state: CompartmentState, params: EpiParams,
                       cms: ContactMatrixSet, c_eff: np.ndarray | None = None) -> np.ndarray:
    """Per-susceptible infection rate (per day) for each age group.

    With `c_eff` given (the contact matrix currently in force), the asym/sym
    transmission matrices are rescaled entrywise by their share of the
    unrestricted matrix; without it the unrestricted matrices apply.
    """
    counts = state.counts
    inf_asym = counts[I_PRESYM] + counts[I_ASYM]
    inf_sym = counts[I_MILD] + counts[I_SEV]
    if c_eff is None:
        mat_a, mat_s = cms.asym, cms.sym
    else:
        mat_a = cms.asym_ratio * c_eff
        mat_s = cms.sym_ratio * c_eff
    return params.q_asym * (mat_a @ inf_asym) + params.q_sym * (mat_s @ inf_sym)


def deterministic_substep(state: CompartmentState, c_hat: np.ndarray, params: EpiParams,
                          cms: ContactMatrixSet, diag: StepDiagnostics | None = None,
                          flows: FlowTotals | None = None) -> CompartmentState:
    """One forward-Euler substep of length h days under contact matrix c_hat."""
    c = state.counts.astype(float, copy=True)
    h = params.h
    lam = force_of_infection(state, params, cms, c_eff=c_hat)
    new_e = lam * c[S] * h

    outflows = c[[E, I_PRESYM, I_ASYM, I_MILD, I_SEV, I_HOSP, I_ICU]] \
        * params.outflow_rate_stack * h
    new_presym, presym_exit, asym_rec, mild_exit, admissions, hosp_exit, icu_exit = outflows
    splits = outflows[[1, 3, 4, 5, 6]] * params.branch_frac_stack
    to_asym, to_sev, to_hosp, hosp_rec, icu_rec = splits
    to_mild = presym_exit - to_asym
    mild_rec = mild_exit - to_sev
    to_icu = admissions - to_hosp
    hosp_dead = hosp_exit - hosp_rec
    icu_dead = icu_exit - icu_rec

    c[S] -= new_e
    c[E] += new_e - new_presym
    c[I_PRESYM] += new_presym - presym_exit
    c[I_ASYM] += to_asym - asym_rec
    c[I_MILD] += to_mild - to_sev - mild_rec
    c[I_SEV] += to_sev - admissions
    c[I_HOSP] += to_hosp - hosp_rec - hosp_dead
    c[I_ICU] += to_icu - icu_rec - icu_dead
    c[H_NEW] += to_hosp
    c[D] += hosp_dead + icu_dead
    c[R] += asym_rec + mild_rec + hosp_rec + icu_rec

    if diag is not None:
        diag.substeps += 1
    neg = c < 0
    if neg.any():
        # Euler overshoot; only reachable with extreme rate * h products.
        if diag is not None:
            diag.negative_clamps += int(neg.sum())
        logger.warning("clamped %d negative compartment values to 0", int(neg.sum()))
        np.clip(c, 0.0, None, out=c)
    if flows is not None:
        flows.infections += new_e
        flows.hosp_admissions += to_hosp
        flows.icu_admissions += to_icu
        flows.deaths += hosp_dead + icu_dead
    return CompartmentState(c)


def stochastic_substep(state: CompartmentState, c_hat: np.ndarray, params: EpiParams,
                       cms: ContactMatrixSet, rng: np.random.Generator,
                       diag: StepDiagnostics | None = None,
                       flows: FlowTotals | None = None) -> CompartmentState:
    """One chain-binomial substep of length h days; integer in, integer out."""
    c = np.asarray(state.counts, dtype=np.int64).copy()
    if np.any(c < 0):
        raise ValueError("stochastic substep requires non-negative integer counts")

    lam = force_of_infection(state, params, cms, c_eff=c_hat)
    p_infect = 1.0 - np.exp(-params.h * lam)
    new_e = rng.binomial(c[S], p_infect)

    # All compartment exits in one draw, then the competing-destination splits.
    exits = rng.binomial(c[[E, I_PRESYM, I_ASYM, I_MILD, I_SEV, I_HOSP, I_ICU]],
                         params.exit_prob_stack)
    new_presym, presym_exit, asym_rec, mild_exit, admissions, hosp_exit, icu_exit = exits
    splits = rng.binomial(exits[[1, 3, 4, 5, 6]], params.branch_frac_stack)
    to_asym, to_sev, to_hosp, hosp_rec, icu_rec = splits
    to_mild = presym_exit - to_asym
    mild_rec = mild_exit - to_sev
    to_icu = admissions - to_hosp
    hosp_dead = hosp_exit - hosp_rec
    icu_dead = icu_exit - icu_rec

    c[S] -= new_e
    c[E] += new_e - new_presym
    c[I_PRESYM] += new_presym - presym_exit
    c[I_ASYM] += to_asym - asym_rec
    c[I_MILD] += to_mild - mild_exit
    c[I_SEV] += to_sev - admissions
    c[I_HOSP] += to_hosp - hosp_exit
    c[I_ICU] += to_icu - icu_exit
    c[H_NEW] += to_hosp
    c[D] += hosp_dead + icu_dead
    c[R] += asym_rec + mild_rec + hosp_rec + icu_rec

    if diag is not None:
        diag.substeps += 1
    if flows is not None:
        flows.infections += new_e
        flows.hosp_admissions += to_hosp
        flows.icu_admissions += to_icu
        flows.deaths += hosp_dead + icu_dead
    return CompartmentState(c)


def simulate_days(state: CompartmentState, c_prev: np.ndarray, c_target: np.ndarray,
                  t_anchor: float, t_start: float, n_days: float, mode: str,
                  params: EpiParams, cms: ContactMatrixSet,
                  rng: np.random.Generator | None = None,
                  diag: StepDiagnostics | None = None,
                  flows: FlowTotals | None = None) -> CompartmentState:
    """Advance the state by n_days on the substep grid.

    At every substep the contact matrix in force is the compliance-weighted mix
    of `c_prev` (matrix in force when the current target was installed at day
    `t_anchor`) and `c_target`.
    """
    if n_days <= 0:
        raise ValueError("n_days must be >= 1 substep worth of time")
    if mode == DETERMINISTIC:
        substep = lambda st, ch: deterministic_substep(st, ch, params, cms, diag, flows)
    elif mode == STOCHASTIC:
        if rng is None:
            raise ValueError("stochastic mode requires an rng stream")
        substep = lambda st, ch: stochastic_substep(st, ch, params, cms, rng, diag, flows)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    n_sub = int(round(n_days / params.h))
    static_target = np.array_equal(c_prev, c_target)
    for i in range(n_sub):
        if static_target:
            c_hat = c_target
        else:
            t = t_start + i * params.h
            c_hat = blended_matrix(c_prev, c_target, compliance_weight(t, t_anchor, params))
        state = substep(state, c_hat)
    return state
