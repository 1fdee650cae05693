import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gibbslab import lattice as lt
from gibbslab.errors import (
    AsymmetricInteractionError,
    BadRadiusError,
    DecayViolatedError,
    DimensionMismatchError,
    IllTemperedBoundaryError,
    NonDominantError,
)


class TestDist:
    def test_identity(self):
        assert lt.dist((0, 0), (0, 0)) == 0

    def test_two_dim(self):
        assert lt.dist((1, 2), (4, -1)) == 3

    def test_scalar_coordinates(self):
        assert lt.dist(5, -2) == 7

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            lt.dist((0, 0), (0, 0, 0))

    def test_metric_axioms_exhaustive(self):
        pts = list(itertools.product(range(-2, 3), repeat=2))
        for a in pts:
            for b in pts:
                assert lt.dist(a, b) == lt.dist(b, a)
                assert (lt.dist(a, b) == 0) == (a == b)
        for a, b, c in itertools.product(pts[::3], pts[::4], pts[::5]):
            assert lt.dist(a, c) <= lt.dist(a, b) + lt.dist(b, c)


class TestBall:
    def test_one_dim(self):
        lam = lt.Lattice.centered(3)
        assert lt.ball((0,), 1.5, lam) == [(-1,), (0,), (1,)]

    def test_two_dim_count(self):
        lam = lt.Lattice.centered(4, dim=2)
        assert len(lt.ball((0, 0), 1.5, lam)) == 9

    def test_tiny_radius(self):
        lam = lt.Lattice.centered(3)
        assert lt.ball((0,), 0.5, lam) == [(0,)]

    def test_clipping_subset(self):
        lam = lt.Lattice.box((4,))
        members = lt.ball((0,), 2.5, lam)
        assert all(s in lam for s in members)
        assert members == [(0,), (1,), (2,)]

    def test_unclipped_cardinality(self):
        lam = lt.Lattice.centered(10, dim=2)
        assert len(lt.ball((0, 0), 2.5, lam)) == 5**2


class TestTiling:
    @given(
        st.integers(min_value=-40, max_value=40),
        st.sampled_from([0.5, 1.5, 2.5, 3.5]),
    )
    def test_every_site_in_exactly_one_ball(self, coord, radius):
        k = lt.block_index((coord,), radius)
        center = 2.0 * radius * k[0]
        assert abs(coord - center) <= radius
        # neighbors of k do not also claim the site
        for other in (k[0] - 1, k[0] + 1):
            assert abs(coord - 2.0 * radius * other) > radius

    def test_two_dim_partition(self):
        radius = 1.5
        lam = lt.Lattice.centered(7, dim=2)
        counts = {}
        for s in lam.sites():
            counts.setdefault(lt.block_index(s, radius), 0)
            counts[lt.block_index(s, radius)] += 1
        # interior blocks have a full complement of sites
        assert max(counts.values()) == (2 * 1 + 1) ** 2

    def test_integer_radius_rejected(self):
        with pytest.raises(BadRadiusError):
            lt.block_index((0,), 2.0)


class TestBox:
    def test_contains(self):
        b = lt.Box(center=(0, 0), radius=1.5)
        assert b.contains((1, -1))
        assert not b.contains((2, 0))

    def test_clipped_sites(self):
        lam = lt.Lattice.box((3, 3))
        b = lt.Box(center=(0, 0), radius=1.5)
        members = b.sites(lam)
        assert all(s in lam for s in members)
        assert len(members) == 4  # the corner quadrant of the 3x3 ball


class TestMakeModel:
    def test_gaussian_chain_margin(self, gaussian_2site):
        assert_allclose(gaussian_2site.delta, 0.8)

    def test_non_dominant(self):
        lam = lt.Lattice.box((2,))
        with pytest.raises(NonDominantError):
            lt.make_model(lam, lt.GAUSSIAN, [[1.0, -1.2], [-1.2, 1.0]])

    def test_power_law_margin_row_sum_oracle(self):
        # min_i (M_ii - sum_j |M_ij|) enumerated independently
        model = _chain64()
        assert_allclose(model.delta, 0.9798402444405334, rtol=1e-12)

    def test_asymmetric(self):
        lam = lt.Lattice.box((2,))
        with pytest.raises(AsymmetricInteractionError):
            lt.make_model(lam, lt.GAUSSIAN, [[1.0, 0.3], [-0.3, 1.0]])

    def test_decay_violation(self):
        lam = lt.Lattice.box((3,))
        m = [[1.0, -0.4, 0.0], [-0.4, 1.0, -0.4], [0.0, -0.4, 1.0]]
        with pytest.raises(DecayViolatedError):
            lt.make_model(lam, lt.GAUSSIAN, m, decay=lt.DecayParams(0.1, 3.0))

    def test_ill_tempered(self):
        lam = lt.Lattice.box((2,))
        with pytest.raises(IllTemperedBoundaryError):
            lt.make_model(
                lam,
                lt.GAUSSIAN,
                [[1.0, -0.2], [-0.2, 1.0]],
                ext_sites=[(-1,)],
                ext_interaction=[[-0.1], [0.0]],
                boundary=[np.inf],
            )

    def test_dominance_includes_exterior(self):
        lam = lt.Lattice.box((1,))
        with pytest.raises(NonDominantError):
            lt.make_model(
                lam,
                lt.GAUSSIAN,
                [[1.0]],
                ext_sites=[(-1,)],
                ext_interaction=[[-1.5]],
                boundary=[0.0],
            )


class TestEnergy:
    def test_grad_single_site(self):
        model = lt.make_model(lt.Lattice.box((1,)), lt.GAUSSIAN, [[0.5]])
        assert_allclose(lt.grad_energy(model, [2.0]), [2.0])

    def test_grad_two_site(self, gaussian_2site):
        assert_allclose(lt.grad_energy(gaussian_2site, [1.0, 1.0]), [1.6, 1.6])

    def test_grad_quartic(self):
        model = lt.make_model(lt.Lattice.box((1,)), lt.QUARTIC, [[1.0]])
        assert_allclose(lt.grad_energy(model, [1.0]), [3.0])

    def test_energy_matches_gradient(self, gaussian_3site):
        rng = np.random.default_rng(0)
        x = rng.normal(size=3)
        g = lt.grad_energy(gaussian_3site, x)
        eps = 1e-6
        for t in range(3):
            xp = x.copy()
            xp[t] += eps
            xm = x.copy()
            xm[t] -= eps
            fd = (lt.energy(gaussian_3site, xp) - lt.energy(gaussian_3site, xm)) / (
                2 * eps
            )
            assert_allclose(g[t], fd, rtol=1e-6, atol=1e-7)

    def test_boundary_enters_linearly(self):
        lam = lt.Lattice.box((1,))
        model = lt.make_model(
            lam,
            lt.GAUSSIAN,
            [[1.0]],
            ext_sites=[(-1,)],
            ext_interaction=[[-0.3]],
            boundary=[2.0],
        )
        # energy x^2 + 2*(-0.3)*2*x; gradient 2x - 1.2
        assert_allclose(lt.grad_energy(model, [1.0]), [2.0 - 1.2])


class TestFerromagnetize:
    def test_sign_flip(self):
        lam = lt.Lattice.box((2,))
        model = lt.make_model(lam, lt.GAUSSIAN, [[1.0, 0.2], [0.2, 1.0]])
        fer = lt.ferromagnetize(model)
        assert_allclose(fer.interaction, [[1.0, -0.2], [-0.2, 1.0]])

    def test_fixed_point(self, gaussian_2site):
        fer = lt.ferromagnetize(gaussian_2site)
        assert_allclose(fer.interaction, gaussian_2site.interaction)

    def test_idempotent_and_margin_preserved(self):
        lam = lt.Lattice.box((8,))
        m = lt.power_law_interaction(lam, 0.08, 3.0, 1.0, ferromagnetic=False,
                                     sign_seed=11)
        model = lt.make_model(lam, lt.GAUSSIAN, m)
        fer = lt.ferromagnetize(model)
        assert_allclose(fer.delta, _row_sum_margin(m), rtol=1e-12)
        assert_allclose(fer.delta, model.delta, rtol=1e-12)
        again = lt.ferromagnetize(fer)
        assert_allclose(again.interaction, fer.interaction)


def _row_sum_margin(m):
    m = np.asarray(m)
    off = np.abs(m).sum(axis=1) - np.abs(np.diag(m))
    return float((np.diag(m) - off).min())


def _chain64():
    lam = lt.Lattice.box((64,))
    m = lt.power_law_interaction(lam, 0.05, 3.0, 1.0, ferromagnetic=True)
    return lt.make_model(lam, lt.GAUSSIAN, m, decay=lt.DecayParams(0.05, 3.0))


class TestBuildModelFromConfig:
    def test_power_law_chain(self):
        from gibbslab.config import config_from_dict

        cfg = config_from_dict(
            {
                "lattice": {"extent": 16},
                "potential": {"kind": "gaussian"},
                "interaction": {
                    "kind": "power_law",
                    "amplitude": 0.05,
                    "exponent": 3.0,
                    "diagonal": 1.0,
                    "ferromagnetic": True,
                },
                "boundary": {"kind": "zero"},
            }
        )
        model = lt.build_model(cfg)
        assert model.n_sites == 16
        assert model.is_ferromagnetic()
        assert len(model.ext_sites) > 0
        assert_allclose(model.boundary, 0.0)

    def test_explicit_matrix(self):
        from gibbslab.config import config_from_dict

        cfg = config_from_dict(
            {
                "lattice": {"extent": 2},
                "potential": {"kind": "quartic"},
                "interaction": {
                    "kind": "explicit",
                    "matrix": [[1.0, -0.2], [-0.2, 1.0]],
                },
            }
        )
        model = lt.build_model(cfg)
        assert_allclose(model.delta, 0.8)
        assert model.potentials[0].name == "quartic"

    def test_random_boundary_is_seeded(self):
        from gibbslab.config import config_from_dict

        raw = {
            "lattice": {"extent": 8},
            "potential": {"kind": "gaussian"},
            "interaction": {"kind": "power_law", "amplitude": 0.05,
                            "exponent": 3.0, "diagonal": 1.0},
            "boundary": {"kind": "random", "value": 1.0, "seed": 3},
        }
        a = lt.build_model(config_from_dict(raw))
        b = lt.build_model(config_from_dict(raw))
        assert_allclose(a.boundary, b.boundary)
        assert np.abs(a.boundary).max() <= 1.0
