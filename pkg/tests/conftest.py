"""Shared fixtures: standard coupling matrices and Lagrangian lists."""

import numpy as np
import pytest

from hjweave.coupling import CouplingMatrix
from hjweave.lagrangians import quadratic_kinetic, quartic_kinetic


@pytest.fixture
def symmetric_coupling():
    """Cooperative irreducible 2x2 with zero row sums."""
    return CouplingMatrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))


@pytest.fixture
def swap_coupling():
    """Non-cooperative 2x2 swap matrix (short-time regime only)."""
    return CouplingMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))


@pytest.fixture
def zero_coupling():
    return CouplingMatrix(np.zeros((2, 2)))


@pytest.fixture
def free_particles():
    """Two identical free Lagrangians L = |v|^2 / 2 in dimension 1."""
    return (quadratic_kinetic(1), quadratic_kinetic(1))


@pytest.fixture
def mixed_quadratics():
    """Distinct quadratic kinetics 1/2 v^2 and v^2 (masses 1 and 2), dim 1."""
    return (quadratic_kinetic(1, mass=1.0), quadratic_kinetic(1, mass=2.0))


@pytest.fixture
def quartic_pair():
    return (quadratic_kinetic(1), quartic_kinetic(1, eps=0.25))


def random_cooperative_irreducible(rng, m, scale=1.0):
    """Random cooperative irreducible matrix with a full off-diagonal graph."""
    a = -rng.uniform(0.1, 1.0, size=(m, m))
    np.fill_diagonal(a, rng.uniform(-1.0, 1.0, size=m))
    norm = np.linalg.norm(a, 2)
    if norm > scale:
        a *= scale / norm
    return CouplingMatrix(a)
