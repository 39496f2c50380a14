import itertools

import numpy as np
import pytest

from ladder.expr import generate_database
from ladder.latent import build_codebook


def brute_string_kernel(s1, s2, gap, match, n, exact=False):
    """Enumerate every pair of index tuples with equal tokens (inclusive ends)."""
    total = 0.0
    lengths = [n] if exact else range(1, n + 1)
    for k in lengths:
        for i in itertools.combinations(range(len(s1)), k):
            u = [s1[a] for a in i]
            for j in itertools.combinations(range(len(s2)), k):
                if all(s2[b] == t for b, t in zip(j, u)):
                    total += match ** (2 * k) * gap ** ((i[-1] - i[0]) + (j[-1] - j[0]))
    return total


@pytest.fixture(scope="session")
def small_db():
    return generate_database(300, seed=11)


@pytest.fixture(scope="session")
def small_codebook(small_db):
    return build_codebook(small_db, d=8, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
