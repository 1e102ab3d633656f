import numpy as np
import pytest

from unzipseq.energy import (
    BaseSequence,
    EnergyTable,
    Environment,
    ForceField,
    ModelParams,
)


@pytest.fixture(scope="session")
def table1():
    return EnergyTable.default()


def make_env(letters: str, g1, beta: float = 1.0, r: float = 1.0, table=None):
    """Environment from a base string; g1 is a constant or per-site list."""
    seq = BaseSequence.from_string(letters)
    table = table if table is not None else EnergyTable.default()
    if np.isscalar(g1):
        force = ForceField.constant(float(g1), len(seq) - 1)
    else:
        force = ForceField(np.asarray(g1, dtype=float))
    return Environment(seq, table, force, ModelParams(beta=beta, rate_scale=r))


def random_sequence(rng: np.random.Generator, M: int) -> str:
    return "".join(rng.choice(list("ATCG"), size=M))
