import csv
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fairstage.datasets import data_dir, estimate_distribution, load_dataset  # noqa: E402
from fairstage.model import FeatureSpace, JointDistribution  # noqa: E402


def uniform_distribution(features, positive=0.5) -> JointDistribution:
    space = FeatureSpace(tuple(features))
    return JointDistribution(space, np.full(space.n_cells, 1 / space.n_cells), np.full(space.n_cells, positive))


def random_distribution(d: int, seed: int, zero_frac: float = 0.0, names=None) -> JointDistribution:
    """Dirichlet cell masses and uniform positives; optionally some empty cells."""
    rng = np.random.default_rng(seed)
    n = 1 << d
    mass = rng.dirichlet(np.ones(n))
    if zero_frac:
        mass[rng.random(n) < zero_frac] = 0.0
        if mass.sum() == 0:
            mass[0] = 1.0
        mass /= mass.sum()
    positive = np.where(mass > 0, rng.random(n), 0.0)
    return JointDistribution(FeatureSpace(tuple(names or (f"f{j}" for j in range(d)))), mass, positive)


def read_raw(name: str, delimiter=",", header=False):
    """Raw records with the csv module, whitespace-stripped; blank and '|' lines skipped."""
    rows = []
    with open(data_dir() / name, newline="") as fh:
        for rec in csv.reader(fh, delimiter=delimiter):
            rec = [f.strip() for f in rec]
            if not rec or not any(rec) or rec[0].startswith("|"):
                continue
            rows.append(rec)
    return rows


@pytest.fixture(scope="session")
def adult_raw_rows():
    rows = read_raw("adult.data") + read_raw("adult.test")
    return [r[:-1] + [r[-1].rstrip(".")] for r in rows]


@pytest.fixture(scope="session")
def compas_raw_rows():
    rows = read_raw("compas-scores-two-years.csv")
    header, body = rows[0], rows[1:]
    return [dict(zip(header, r)) for r in body]


@pytest.fixture(scope="session")
def german_raw_rows():
    return read_raw("german.data", delimiter=" ")


@pytest.fixture(scope="session")
def adult_batch():
    return load_dataset("adult")


@pytest.fixture(scope="session")
def compas_batch():
    return load_dataset("compas")


@pytest.fixture(scope="session")
def german_batch():
    return load_dataset("german")


@pytest.fixture(scope="session")
def adult_dist(adult_batch):
    return estimate_distribution(adult_batch)


@pytest.fixture(scope="session")
def compas_dist(compas_batch):
    return estimate_distribution(compas_batch)


@pytest.fixture(scope="session")
def german_dist(german_batch):
    return estimate_distribution(german_batch)
