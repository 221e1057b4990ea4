"""Shared fixture builders for the CLI and acceptance suites."""

import csv

import numpy as np
import pytest

from quaropt.distributions import TruncNormalParams, truncnormal_sample
from quaropt.incubation_model import ConditionalIncubationModel

TABLE2_MODEL = ConditionalIncubationModel(
    shape=1.57, gamma=(9.09, -0.11, 0.0015), age_support=(11, 80)
)
TABLE2_REPORTED_SE = (0.03, 0.92, 0.04, 0.0005)

#: Age law standing in for the patient ages behind the real-data analysis.
PATIENT_AGE_LAW = TruncNormalParams(55.0, 625.0, 10.0, 80.0)


def synthetic_patient_arrays(seed: int, n: int = 1770, model=TABLE2_MODEL):
    """Ages and ceiled incubation periods drawn from the fitted-parameter model."""
    rng = np.random.default_rng(seed)
    ages = np.clip(np.rint(truncnormal_sample(PATIENT_AGE_LAW, rng, n)), 11, 80).astype(int)
    z = np.ceil(model.sample(ages.astype(float), rng)).astype(int)
    return ages, z


def write_patient_records_csv(path, seed: int, n: int = 1770) -> None:
    ages, z = synthetic_patient_arrays(seed, n)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age", "risk_level", "infected", "z"])
        for a, zz in zip(ages, z):
            writer.writerow([int(a), "none", 1, int(zz)])


def write_bell_population_csv(path, center: float = 35.0, spread: float = 16.0) -> None:
    ages = np.arange(11, 81)
    weights = np.exp(-0.5 * ((ages - center) / spread) ** 2)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age", "weight"])
        for a, w in zip(ages, weights):
            writer.writerow([int(a), repr(float(w))])


@pytest.fixture()
def patient_records_csv(tmp_path):
    path = tmp_path / "records.csv"
    write_patient_records_csv(path, seed=501)
    return path


@pytest.fixture()
def population_csv(tmp_path):
    path = tmp_path / "population.csv"
    write_bell_population_csv(path)
    return path
