"""Shared session fixtures: the heavy partition builds run once."""

import pytest

from limitset import group_models as gm
from limitset import markov_coding as mc

SCHOTTKY_CENTERS = (-6.0, -2.0, 2.0, 6.0)


@pytest.fixture(scope="session")
def octagon():
    pres, rho = gm.build_regular_4g_gon_group(2)
    return pres, rho


@pytest.fixture(scope="session")
def octagon_partition(octagon):
    pres, rho = octagon
    return mc.build_bowen_series_partition(pres, rho)


@pytest.fixture(scope="session")
def octagon_tm(octagon_partition):
    return mc.transition_matrix(octagon_partition)


@pytest.fixture(scope="session")
def schottky_group():
    return gm.build_schottky([(c, 1.0) for c in SCHOTTKY_CENTERS])


@pytest.fixture(scope="session")
def schottky_coding(schottky_group):
    return mc.build_schottky_coding(schottky_group)
