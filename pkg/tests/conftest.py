"""Shared model builders for the test suite."""

import pytest

from gibbslab import lattice as lt


@pytest.fixture
def gaussian_2site():
    lat = lt.Lattice.box((2,))
    return lt.make_model(lat, lt.GAUSSIAN, [[1.0, -0.2], [-0.2, 1.0]])


@pytest.fixture
def gaussian_3site():
    lat = lt.Lattice.box((3,))
    m = [[1.0, -0.2, 0.0], [-0.2, 1.0, -0.2], [0.0, -0.2, 1.0]]
    return lt.make_model(lat, lt.GAUSSIAN, m)


@pytest.fixture
def single_site_ou():
    return lt.make_model(lt.Lattice.box((1,)), lt.GAUSSIAN, [[0.5]])


def power_law_chain(n, amplitude, exponent, diagonal=1.0, ferromagnetic=True,
                    potential=lt.GAUSSIAN):
    lat = lt.Lattice.box((n,))
    m = lt.power_law_interaction(lat, amplitude, exponent, diagonal,
                                 ferromagnetic=ferromagnetic)
    return lt.make_model(lat, potential, m,
                         decay=lt.DecayParams(abs(amplitude), exponent))
