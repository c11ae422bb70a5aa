import numpy as np
import pytest

from mobelcov.parameters import (AgeStructure, ContactMatrixSet, EpiParams,
                                 ModelParameters, load_default_parameters)


def small_epi_params(k: int, **overrides) -> EpiParams:
    base = dict(
        q_asym=2e-5, q_sym=1.2e-5,
        gamma_rate=0.25, theta=0.5,
        asym_prob=np.full(k, 0.6),
        psi=np.full(k, 0.03),
        omega=np.full(k, 0.3),
        hosp_prob=np.full(k, 0.85),
        delta_asym=np.full(k, 0.2),
        delta_mild=np.full(k, 0.143),
        delta_hosp=np.full(k, 0.1),
        delta_icu=np.full(k, 0.07),
        tau_hosp=np.full(k, 0.01),
        tau_icu=np.full(k, 0.03),
        compliance_intercept=-5.0,
        compliance_slope=0.5,
    )
    base.update(overrides)
    return EpiParams(**base).validate(k)


def small_contacts(k: int, rng: np.random.Generator | None = None) -> ContactMatrixSet:
    rng = rng or np.random.default_rng(7)
    mats = {name: rng.uniform(0.05, 1.0, (k, k)) for name in
            ("home", "work", "transport", "school", "leisure", "other")}
    full = sum(mats.values())
    return ContactMatrixSet(asym=full, sym=mats["home"] + 0.1 * (full - mats["home"]), **mats)


def small_model(k: int = 3, population=None, **epi_overrides) -> ModelParameters:
    population = population if population is not None else np.full(k, 50_000.0)
    return ModelParameters(
        age=AgeStructure(population=population, group_labels=tuple(f"g{i}" for i in range(k))),
        epi=small_epi_params(k, **epi_overrides),
        contacts=small_contacts(k),
    )


@pytest.fixture(scope="session")
def default_params() -> ModelParameters:
    return load_default_parameters()
