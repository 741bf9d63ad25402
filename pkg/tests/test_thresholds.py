import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hqpamp.numerics import SupSearchConfig, mc_engine
from hqpamp.thresholds import (
    ScalarMap,
    kappa_binary,
    kappa_general_lower_bound,
    kappa_matching,
    kappa_sym,
    phi_binary,
    phi_sym,
    scalar_fixed_points,
    scalar_se,
)

# independent references: mpmath quadrature for phi, scipy quad + bounded
# minimisation for the suprema
PHI_HALF_AT_ONE = 0.19898643359162492
KAPPA_BIN = {0.1: 0.23846524139037473, 0.3: 0.4269071270652682, 0.5: 0.4795159706351345}
KAPPA_PAIR_12 = 0.2333482276438283  # pi = (0.2, 0.3, 0.5), pair (1, 2)


class TestBinary:
    def test_phi_reference_value(self):
        assert phi_binary(1.0, 0.5) == pytest.approx(PHI_HALF_AT_ONE, rel=1e-12)

    def test_phi_small_and_large_states(self):
        assert phi_binary(0.0, 0.4) == 0.0
        # infinite noise leaves the prior variance p(1 - p)
        assert phi_binary(1e8, 0.4) == pytest.approx(0.24, rel=1e-3)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.05, 0.95), st.floats(0.01, 5.0))
    def test_phi_is_increasing(self, p, a):
        assert phi_binary(a, p) < phi_binary(1.1 * a, p)

    @pytest.mark.parametrize("p", sorted(KAPPA_BIN))
    def test_threshold_reference_values(self, p):
        res = kappa_binary(p)
        assert res.kappa_star == pytest.approx(KAPPA_BIN[p], abs=1e-9)
        assert not res.at_boundary
        assert res.cross_check == pytest.approx(res.kappa_star, abs=1e-9)

    @pytest.mark.parametrize("p", [0.1, 0.25, 0.4])
    def test_threshold_is_symmetric_in_p(self, p):
        assert kappa_binary(p).kappa_star == pytest.approx(kappa_binary(1 - p).kappa_star, abs=1e-12)

    def test_threshold_rejects_degenerate_prior(self):
        with pytest.raises(ValueError):
            kappa_binary(1.0)

    def test_result_document(self):
        doc = kappa_binary(0.5).to_dict()
        assert {"kappa_star", "x_star", "std_err", "boundary_flag"} <= set(doc)


class TestScalar:
    def test_fixed_point_and_mse(self):
        res = scalar_se(0.5, 0.3)
        assert res.converged
        assert res.a_star == pytest.approx(0.5674492374686151, rel=1e-9)
        assert res.mse_limit == pytest.approx(0.34046954248116906, rel=1e-9)

    def test_roots(self):
        roots = scalar_fixed_points(0.5, 0.3)
        np.testing.assert_allclose(roots, [0.06704817217481496, 0.5674492374683983], rtol=1e-9)

    def test_above_threshold_converges_to_zero(self):
        res = scalar_se(0.3, 0.45)
        assert res.a_star < 1e-10

    def test_trajectory_is_monotone_from_the_prior(self):
        res = scalar_se(0.5, 0.3)
        assert np.all(np.diff(res.trajectory) <= 1e-15)
        assert res.mse[0] == pytest.approx(0.5)

    def test_validation(self):
        with pytest.raises(ValueError):
            scalar_se(0.5, 0.0)
        with pytest.raises(ValueError):
            scalar_se(0.5, 0.3, a0=-1.0)


class TestMatching:
    def test_reference_value(self):
        assert kappa_matching((0.2, 0.3, 0.5), 0, 1).kappa_star == pytest.approx(KAPPA_PAIR_12, abs=1e-9)

    def test_order_of_the_pair_does_not_matter(self):
        pi = (0.2, 0.3, 0.5)
        assert kappa_matching(pi, 2, 0).kappa_star == kappa_matching(pi, 0, 2).kappa_star

    def test_two_categories_reduce_to_the_binary_case(self):
        assert kappa_matching((0.3, 0.7), 0, 1).kappa_star == pytest.approx(kappa_binary(0.3).kappa_star, abs=1e-14)

    def test_rejects_bad_pairs(self):
        with pytest.raises(ValueError):
            kappa_matching((0.5, 0.5), 1, 1)


class TestSymmetric:
    def test_two_categories_match_the_binary_map(self):
        eng = mc_engine(2, 200_000, seed=0)
        # the uniform ray with d = 2 is the edge ray at half the scale
        for a in (0.3, 1.0):
            assert phi_sym(a, 2, eng) == pytest.approx(2 * phi_binary(a / 2, 0.5), abs=3e-3)

    def test_two_categories_threshold(self):
        res = kappa_sym(2, n_samples=50_000)
        assert res.kappa_star == pytest.approx(kappa_binary(0.5).kappa_star, abs=0.01)
        assert res.std_err > 0

    def test_phi_rejects_small_d(self):
        with pytest.raises(ValueError):
            phi_sym(1.0, 1)

    def test_shifted_and_bounded_forms_agree(self):
        a = kappa_sym(3, n_samples=40_000, form="bounded").kappa_star
        b = kappa_sym(3, n_samples=40_000, form="shifted").kappa_star
        assert a == pytest.approx(b, abs=0.01)

    def test_scalar_map_prior(self):
        smap = ScalarMap.symmetric(3, mc_engine(3, 1000))
        assert smap.trace == 2.0
        assert smap.prior == pytest.approx(1 / 3)


class TestGeneralLowerBound:
    def test_binary_prior_gives_the_binary_threshold(self):
        res = kappa_general_lower_bound((0.3, 0.7), n_random=1)
        assert res.kappa_star == pytest.approx(kappa_binary(0.3).kappa_star, abs=1e-6)

    def test_uniform_prior_dominates_the_symmetric_threshold(self):
        res = kappa_general_lower_bound((1 / 3,) * 3, n_random=5, engine=mc_engine(3, 20_000, seed=0),
                                        sup_cfg=SupSearchConfig(grid_points=20), coarse_points=6)
        assert res.kappa_star >= kappa_sym(3, n_samples=40_000).kappa_star - 0.01
        assert res.witness is not None and not math.isnan(res.x_star)

    @pytest.mark.slow
    def test_reference_run(self):
        res = kappa_general_lower_bound((0.2, 0.3, 0.5), n_random=500, seed=1)
        assert res.kappa_star == pytest.approx(0.42550284102164004, abs=1e-9)
        # every pair threshold of this prior lies below the bound
        for r, s in ((0, 1), (0, 2), (1, 2)):
            assert kappa_matching((0.2, 0.3, 0.5), r, s).kappa_star <= res.kappa_star


def test_phi_limits_at_the_ends():
    assert phi_binary(1e-8, 0.5) == pytest.approx(0.0, abs=1e-6)
    assert phi_binary(1e6, 0.5) == pytest.approx(0.25, abs=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(1e-3, 50.0))
def test_phi_is_bounded_by_the_prior_variance(p, a):
    assert 0.0 <= phi_binary(a, p) <= p * (1 - p)


def test_zero_start_stays_at_zero():
    res = scalar_se(0.5, 0.3, a0=0.0)
    assert np.all(res.trajectory == 0.0)


def test_above_threshold_from_the_prior():
    res = scalar_se(0.5, 0.6)
    assert res.a_star < 1e-10


def test_equal_masses_give_the_balanced_binary_threshold():
    res = kappa_matching((0.5, 0.5), 0, 1)
    assert res.kappa_star == pytest.approx(0.47, abs=0.01)


def test_phi_sym_is_nondecreasing_on_a_grid():
    eng = mc_engine(4, 20_000, seed=3)
    vals = [phi_sym(a, 4, eng) for a in (0.1, 0.3, 1.0, 3.0, 10.0)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
