"""Model parameters: age structure, transition rates, and social contact matrices.

Everything is loaded from a single JSON parameter file (key-value with nested
arrays). The packaged default file contains synthetic, plausible-but-not-
calibrated values; see its `description` field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

PARAMS_SCHEMA_VERSION = 1

LOCATIONS = ("home", "work", "transport", "school", "leisure", "other")


class ParameterError(ValueError):
    """Raised when a parameter file or parameter set violates its invariants."""


def _vector(x, k: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(k, float(arr))
    if arr.shape != (k,):
        raise ParameterError(f"{name} must be a scalar or length-{k} vector, got shape {arr.shape}")
    return arr


@dataclass
class AgeStructure:
    """Population split into K age groups; totals are conserved by the dynamics."""

    population: np.ndarray
    group_labels: tuple[str, ...]

    def __post_init__(self):
        self.population = np.asarray(self.population, dtype=float)
        self.group_labels = tuple(self.group_labels)
        if self.population.ndim != 1 or self.population.size < 1:
            raise ParameterError("population must be a non-empty vector")
        if np.any(self.population <= 0):
            raise ParameterError("every age-group population must be positive")
        if len(self.group_labels) != self.population.size:
            raise ParameterError("group_labels length must match population length")

    @property
    def n_groups(self) -> int:
        return self.population.size

    @property
    def total(self) -> float:
        return float(self.population.sum())


@dataclass
class EpiParams:
    """Per-day transition rates and probabilities of the compartment model.

    Vector fields hold one entry per age group. `h` is the integration substep
    in days (both the forward-Euler and the binomial stepper use the same grid).
    """

    q_asym: float                 # transmissibility factor, presym/asym route
    q_sym: float                  # transmissibility factor, mild/severe route
    gamma_rate: float             # exposed -> presymptomatic
    theta: float                  # presymptomatic exit rate
    asym_prob: np.ndarray         # share of presymptomatic exits that stay asymptomatic
    psi: np.ndarray               # mild -> severe
    omega: np.ndarray             # severe exit rate (admission)
    hosp_prob: np.ndarray         # share of admissions that go to ward (rest to ICU)
    delta_asym: np.ndarray        # recovery rates per compartment
    delta_mild: np.ndarray
    delta_hosp: np.ndarray
    delta_icu: np.ndarray
    tau_hosp: np.ndarray          # death rates in ward / ICU
    tau_icu: np.ndarray
    compliance_intercept: float   # logistic ramp of adherence to a new measure
    compliance_slope: float
    h: float = 1.0 / 24.0

    _RATE_VECTORS = ("psi", "omega", "delta_asym", "delta_mild", "delta_hosp",
                     "delta_icu", "tau_hosp", "tau_icu")
    _PROB_VECTORS = ("asym_prob", "hosp_prob")

    def validate(self, k: int) -> "EpiParams":
        for name in self._RATE_VECTORS + self._PROB_VECTORS:
            setattr(self, name, _vector(getattr(self, name), k, name))
        for name in ("q_asym", "q_sym", "gamma_rate", "theta"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        for name in self._RATE_VECTORS:
            if np.any(getattr(self, name) < 0):
                raise ParameterError(f"{name} entries must be >= 0")
        for name in self._PROB_VECTORS:
            v = getattr(self, name)
            if np.any((v < 0) | (v > 1)):
                raise ParameterError(f"{name} entries must lie in [0, 1]")
        if not self.h > 0:
            raise ParameterError("substep h must be positive")
        return self

    # Substep quantities reused millions of times per run; cache them.
    @cached_property
    def exit_prob(self) -> dict[str, np.ndarray]:
        """Per-substep exit probabilities 1 - exp(-h * total outflow rate)."""
        h = self.h
        return {
            "e": np.atleast_1d(1.0 - np.exp(-h * self.gamma_rate)),
            "presym": np.atleast_1d(1.0 - np.exp(-h * self.theta)),
            "asym": 1.0 - np.exp(-h * self.delta_asym),
            "mild": 1.0 - np.exp(-h * (self.psi + self.delta_mild)),
            "sev": 1.0 - np.exp(-h * self.omega),
            "hosp": 1.0 - np.exp(-h * (self.delta_hosp + self.tau_hosp)),
            "icu": 1.0 - np.exp(-h * (self.delta_icu + self.tau_icu)),
        }

    @cached_property
    def branch_frac(self) -> dict[str, np.ndarray]:
        """Conditional split of joint exits between competing destinations."""
        def ratio(a, b):
            tot = a + b
            return np.where(tot > 0, a / np.where(tot > 0, tot, 1.0), 0.0)

        return {
            "presym_to_asym": self.asym_prob,
            "mild_to_sev": ratio(self.psi, self.delta_mild),
            "sev_to_hosp": self.hosp_prob,
            "hosp_to_rec": ratio(self.delta_hosp, self.tau_hosp),
            "icu_to_rec": ratio(self.delta_icu, self.tau_icu),
        }

    @cached_property
    def outflow_rate_stack(self) -> np.ndarray:
        """Total per-day exit rates, same row order as exit_prob_stack."""
        k = len(self.psi)
        return np.vstack([
            np.broadcast_to(self.gamma_rate, (k,)),
            np.broadcast_to(self.theta, (k,)),
            self.delta_asym,
            self.psi + self.delta_mild,
            self.omega,
            self.delta_hosp + self.tau_hosp,
            self.delta_icu + self.tau_icu,
        ])

    # Stacked forms so one binomial call can draw all exits (resp. splits).
    @cached_property
    def exit_prob_stack(self) -> np.ndarray:
        ep = self.exit_prob
        k = len(self.psi)
        rows = [np.broadcast_to(ep[name], (k,)) for name in
                ("e", "presym", "asym", "mild", "sev", "hosp", "icu")]
        return np.vstack(rows)

    @cached_property
    def branch_frac_stack(self) -> np.ndarray:
        bf = self.branch_frac
        return np.vstack([bf[name] for name in
                          ("presym_to_asym", "mild_to_sev", "sev_to_hosp",
                           "hosp_to_rec", "icu_to_rec")])


@dataclass
class ContactMatrixSet:
    """Location-specific contact matrices plus the transmission variants.

    `asym`/`sym` are the contact matrices governing transmission from
    (pre)asymptomatic and symptomatic individuals under unrestricted mixing.
    When an intervention replaces the aggregate matrix, both are rescaled
    entrywise by their ratio to the full matrix (the damping is per pair of
    age groups, so reducing a location reduces both routes alike).
    """

    home: np.ndarray
    work: np.ndarray
    transport: np.ndarray
    school: np.ndarray
    leisure: np.ndarray
    other: np.ndarray
    asym: np.ndarray
    sym: np.ndarray

    def __post_init__(self):
        mats = {f.name: np.asarray(getattr(self, f.name), dtype=float) for f in fields(self)}
        shapes = {m.shape for m in mats.values()}
        if len(shapes) != 1:
            raise ParameterError(f"contact matrices must share one K x K shape, got {shapes}")
        shape = shapes.pop()
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ParameterError(f"contact matrices must be square, got {shape}")
        for name, m in mats.items():
            if np.any(m < 0):
                raise ParameterError(f"contact matrix '{name}' has negative entries")
            setattr(self, name, m)

    @property
    def n_groups(self) -> int:
        return self.home.shape[0]

    @cached_property
    def full(self) -> np.ndarray:
        """Unrestricted aggregate matrix (sum over the six locations).

        Grouped like the reduction formula so the all-open action reproduces
        it bitwise."""
        return self.home + (self.work + self.transport) + self.school + (self.leisure + self.other)

    @cached_property
    def asym_ratio(self) -> np.ndarray:
        return self._ratio(self.asym)

    @cached_property
    def sym_ratio(self) -> np.ndarray:
        return self._ratio(self.sym)

    def _ratio(self, mat: np.ndarray) -> np.ndarray:
        full = self.full
        out = np.zeros_like(full)
        np.divide(mat, full, out=out, where=full > 0)
        return out


@dataclass
class ModelParameters:
    """Bundle loaded from one parameter file."""

    age: AgeStructure
    epi: EpiParams
    contacts: ContactMatrixSet
    description: str = ""
    source_path: str | None = field(default=None, compare=False)

    def __post_init__(self):
        k = self.age.n_groups
        if self.contacts.n_groups != k:
            raise ParameterError("contact matrices and age structure disagree on K")
        self.epi.validate(k)


_EPI_FILE_KEYS = [f.name for f in fields(EpiParams)]


def to_dict(params: ModelParameters) -> dict:
    def arr(x):
        return np.asarray(x).tolist()

    return {
        "schema_version": PARAMS_SCHEMA_VERSION,
        "description": params.description,
        "age_structure": {
            "group_labels": list(params.age.group_labels),
            "population": arr(params.age.population),
        },
        "epi": {k: arr(getattr(params.epi, k)) if isinstance(getattr(params.epi, k), np.ndarray)
                else getattr(params.epi, k) for k in _EPI_FILE_KEYS},
        "contact_matrices": {f.name: arr(getattr(params.contacts, f.name))
                             for f in fields(ContactMatrixSet)},
    }


def from_dict(doc: dict, source: str | None = None) -> ModelParameters:
    try:
        age = AgeStructure(
            population=doc["age_structure"]["population"],
            group_labels=doc["age_structure"]["group_labels"],
        )
        epi = EpiParams(**doc["epi"])
        contacts = ContactMatrixSet(**{k: np.asarray(v, dtype=float)
                                       for k, v in doc["contact_matrices"].items()})
    except KeyError as exc:
        raise ParameterError(f"parameter file is missing required key: {exc}") from exc
    return ModelParameters(age=age, epi=epi, contacts=contacts,
                           description=doc.get("description", ""), source_path=source)


def save_parameters(params: ModelParameters, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(params), indent=1))


def load_parameters(path: str | Path) -> ModelParameters:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParameterError(f"parameter file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParameterError(f"parameter file {path} is not valid JSON: {exc}") from exc
    return from_dict(doc, source=str(path))


def load_default_parameters() -> ModelParameters:
    """Packaged synthetic defaults (clearly labeled non-calibrated)."""
    ref = resources.files("mobelcov.data").joinpath("default_params.json")
    return from_dict(json.loads(ref.read_text()), source=str(ref))
