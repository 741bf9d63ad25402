import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from hqpamp.amp import (
    RBP_SIZE_LIMIT,
    AmpConfig,
    AmpError,
    amp_decode,
    amp_init,
    amp_step,
    eta,
    eta_batch,
    posterior_cov,
    rbp_decode,
)
from hqpamp.model import center_data, generate_instance


def _binary_sigma(s):
    u = np.array([1.0, -1.0])
    return s * np.outer(u, u)


class TestEta:
    @settings(max_examples=60, deadline=None)
    @given(st.floats(-2.0, 3.0), st.floats(0.01, 5.0), st.floats(0.05, 0.95))
    def test_binary_is_logistic(self, z1, s, p):
        # log-odds of category 1 vs 2: logit p + (2 z1 - 1) / (2 s)
        out = eta(np.array([z1, 1.0 - z1]), _binary_sigma(s), [p, 1.0 - p])
        expected = expit(logit(p) + (2 * z1 - 1) / (2 * s))
        np.testing.assert_allclose(out, [expected, 1.0 - expected], atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 2**32 - 1))
    def test_output_is_on_the_simplex(self, d, seed):
        rng = np.random.default_rng(seed)
        b = rng.standard_normal((d, d))
        sigma = b @ b.T
        out = eta(rng.standard_normal(d), sigma, np.full(d, 1.0 / d))
        assert np.all(out >= 0)
        assert out.sum() == pytest.approx(1.0)

    def test_huge_noise_returns_the_prior(self):
        pi = np.array([0.2, 0.3, 0.5])
        out = eta(np.array([0.4, 0.3, 0.3]), 1e9 * (np.eye(3) - 1 / 3), pi)
        np.testing.assert_allclose(out, pi, atol=1e-8)

    def test_small_noise_picks_the_nearest_vertex(self):
        out = eta(np.array([0.9, 0.05, 0.05]), 1e-3 * (np.eye(3) - 1 / 3), [0.2, 0.3, 0.5])
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-12)

    def test_degenerate_sigma_excludes_categories_off_its_range(self):
        # Sigma only sees the 1-2 direction, so category 3 is impossible
        sigma = _binary_sigma(1.0)
        sigma = np.pad(sigma, ((0, 1), (0, 1)))
        out = eta(np.array([0.5, 0.5, 0.0]), sigma, [0.3, 0.3, 0.4])
        assert out[2] == 0.0
        np.testing.assert_allclose(out[:2], [0.5, 0.5])

    def test_strict_mode_raises_when_everything_is_excluded(self):
        with pytest.raises(AmpError):
            eta_batch(np.array([[0.3, 0.3, 0.4]]), np.zeros((1, 3, 3)), [0.3, 0.3, 0.4])
        out, dead = eta_batch(np.array([[0.3, 0.3, 0.4]]), np.zeros((1, 3, 3)), [0.3, 0.3, 0.4], strict=False)
        assert dead.tolist() == [True]
        np.testing.assert_array_equal(out, 0.0)


def test_posterior_cov():
    x = np.array([[0.2, 0.8], [1.0, 0.0]])
    cov = posterior_cov(x)
    np.testing.assert_allclose(cov[0], [[0.16, -0.16], [-0.16, 0.16]])
    np.testing.assert_array_equal(cov[1], 0.0)
    np.testing.assert_allclose(cov.sum(axis=2), 0.0, atol=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        AmpConfig(damping=1.0)
    with pytest.raises(ValueError):
        AmpConfig(max_iter=0)


def test_state_invariants_hold_along_the_iteration():
    inst = generate_instance(200, 3, 0.5, [0.2, 0.3, 0.5], 120, seed=5, composition="exact")
    data = center_data(inst)
    state = amp_init(data, inst.pi)
    state.check_invariants()
    for _ in range(6):
        state = amp_step(state, data, inst.pi)
        state.check_invariants()
    assert state.t == 6


@pytest.mark.parametrize("p, kappa", [(0.5, 0.6), (0.3, 0.5)])
def test_exact_recovery_above_threshold(p, kappa):
    inst = generate_instance(1000, 2, 0.5, [p, 1 - p], int(kappa * 1000), seed=11, composition="exact")
    res = amp_decode(inst)
    assert res.converged
    assert res.report.zero_one == 0.0
    assert res.report.mse < 1e-8


def test_no_recovery_far_below_threshold():
    inst = generate_instance(1000, 2, 0.5, [0.5, 0.5], 100, seed=2, composition="exact")
    res = amp_decode(inst)
    assert res.report.mse > 0.2


def test_track_mse_has_one_entry_per_iteration():
    inst = generate_instance(300, 2, 0.5, [0.5, 0.5], 180, seed=1, composition="exact")
    res = amp_decode(inst, AmpConfig(track_mse=True, max_iter=5))
    assert len(res.report.per_iteration_mse) == res.iterations + 1
    # t = 0 is the prior guess 1/2 for every coordinate
    assert res.report.per_iteration_mse[0] == pytest.approx(0.5)


def test_running_out_of_iterations_is_not_an_error():
    inst = generate_instance(300, 2, 0.5, [0.5, 0.5], 180, seed=1, composition="exact")
    res = amp_decode(inst, AmpConfig(max_iter=1))
    assert res.iterations == 1
    assert not res.converged


def test_relabelling_commutes_with_decoding():
    inst = generate_instance(400, 3, 0.5, [0.2, 0.3, 0.5], 300, seed=4, composition="exact")
    perm = np.array([1, 2, 0])
    moved = inst.relabel(perm)
    a = amp_decode(inst, AmpConfig(max_iter=8))
    b = amp_decode(moved, AmpConfig(max_iter=8))
    np.testing.assert_allclose(b.marginals[:, perm], a.marginals, atol=1e-9)


def test_rbp_and_amp_agree_on_a_small_easy_instance():
    inst = generate_instance(60, 2, 0.5, [0.5, 0.5], 50, seed=3, composition="exact")
    amp = amp_decode(inst)
    rbp = rbp_decode(inst)
    np.testing.assert_array_equal(rbp.argmax(axis=1), amp.hard_decisions)
    np.testing.assert_array_equal(amp.hard_decisions, inst.planted)


def test_rbp_state_is_consistent():
    inst = generate_instance(30, 3, 0.5, [0.2, 0.3, 0.5], 20, seed=0, composition="exact")
    node, state = rbp_decode(inst, AmpConfig(max_iter=3), return_state=True)
    assert state.messages.shape == (20, 30, 3)
    np.testing.assert_allclose(state.messages.sum(axis=2), 1.0)
    np.testing.assert_allclose(node.sum(axis=1), 1.0)


def test_rbp_without_pools_returns_the_prior():
    inst = generate_instance(7, 3, 0.5, [0.2, 0.3, 0.5], 0)
    np.testing.assert_allclose(rbp_decode(inst), np.tile(inst.pi, (7, 1)))


def test_rbp_size_guard():
    n = 10_000
    m = RBP_SIZE_LIMIT // n + 1
    inst = generate_instance(n, 2, 0.01, [0.5, 0.5], m, seed=0)
    with pytest.raises(ValueError, match="size guard"):
        rbp_decode(inst)


def test_eta_reference_value():
    # extended-precision evaluation of the two Gaussian weights
    out = eta(np.array([0.7, 0.3]), 0.5 * (np.eye(2) - 0.5), [0.3, 0.7])
    np.testing.assert_allclose(out, [0.48817773877385954296, 0.51182226122614045704], atol=1e-15)


def test_first_check_variance_uses_the_prior_covariance():
    inst = generate_instance(50, 3, 0.5, [0.2, 0.3, 0.5], 20, seed=0)
    data = center_data(inst)
    state = amp_step(amp_init(data, inst.pi), data, inst.pi)
    cov = np.diag(inst.pi) - np.outer(inst.pi, inst.pi)
    expected = (data.a_bar**2).sum(axis=1)[:, None, None] * cov
    np.testing.assert_allclose(state.v, expected, atol=1e-12)
    np.testing.assert_allclose(state.z.sum(axis=1), 1.0, atol=1e-10)


def test_amp_without_pools_returns_the_prior():
    inst = generate_instance(6, 2, 0.5, [0.3, 0.7], 0)
    res = amp_decode(inst)
    np.testing.assert_allclose(res.marginals, np.tile(inst.pi, (6, 1)))


def test_rbp_tracks_amp_at_moderate_size():
    inst = generate_instance(500, 2, 0.5, [0.5, 0.5], 300, seed=6, composition="exact")
    amp = amp_decode(inst)
    rbp = rbp_decode(inst)
    assert np.abs(amp.marginals - rbp).max() <= 0.1


def test_overdetermined_tiny_instance_matches_enumeration():
    from hqpamp.model import exhaustive_posterior, hard_decisions

    inst = generate_instance(10, 2, 0.5, [0.5, 0.5], 30, seed=2, composition="exact")
    truth = hard_decisions(exhaustive_posterior(inst))
    np.testing.assert_array_equal(hard_decisions(rbp_decode(inst)), truth)
    np.testing.assert_array_equal(amp_decode(inst).hard_decisions, truth)
