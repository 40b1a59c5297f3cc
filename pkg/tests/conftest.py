"""Shared fixtures: the example groups and seeded generators."""

import math

import numpy as np
import pytest

from app.services.group import Circle, GroupPresentation, make_cyclic_translation, make_schottky_2d


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def cyclic_group() -> GroupPresentation:
    """Translation of length 1 along e1 in B^2."""
    return make_cyclic_translation(2, 1.0)


@pytest.fixture(scope="session")
def cyclic_group_3d() -> GroupPresentation:
    return make_cyclic_translation(3, 1.0)


@pytest.fixture(scope="session")
def schottky_group() -> GroupPresentation:
    """Two circle pairs on the coordinate axes, geodesics at distance 1 from 0."""
    pairs = [
        (Circle.from_geodesic(0.0, 1.0), Circle.from_geodesic(math.pi, 1.0)),
        (Circle.from_geodesic(math.pi / 2, 1.0), Circle.from_geodesic(-math.pi / 2, 1.0)),
    ]
    return make_schottky_2d(pairs, "schottky-2-pair")


@pytest.fixture(scope="session")
def trivial_group() -> GroupPresentation:
    return GroupPresentation(2, (), "identity")
