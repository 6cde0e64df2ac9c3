import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

import toydiffusion as td
from toydiffusion.schedule import alpha_sigma, perturb, sigma_to_t

VP = td.NoiseSchedule.vp()
VE = td.NoiseSchedule.ve()


def test_vp_terminal_values():
    # closed form at t=1 with the default betas: exp(-19.9/4 - 0.05)
    a1, s1 = alpha_sigma(VP, 1.0)
    assert a1 == pytest.approx(np.exp(-0.25 * 19.9 - 0.05), rel=1e-14)
    assert a1 == pytest.approx(0.006571586494929619, abs=1e-15)
    assert s1 == pytest.approx(0.9999784068923386, abs=1e-12)


def test_vp_variance_preserving_identity():
    t = np.linspace(0.0, 1.0, 97)
    a, s = alpha_sigma(VP, t)
    np.testing.assert_allclose(a * a + s * s, 1.0, atol=1e-12)


def test_vp_alpha_matches_beta_integral():
    # independent oracle: alpha_t = exp(-1/2 int_0^t beta(s) ds) for the
    # linear rate beta(s) = beta_min + s (beta_max - beta_min), via quadrature
    def beta(s):
        return VP.beta_min + s * (VP.beta_max - VP.beta_min)

    for t in (0.1, 0.37, 0.5, 0.83, 1.0):
        integral, _ = quad(beta, 0.0, t)
        a, _ = alpha_sigma(VP, t)
        assert a == pytest.approx(np.exp(-0.5 * integral), rel=1e-12)


def test_ve_alpha_is_one_and_sigma_endpoints():
    t = np.linspace(0, 1, 11)
    a, s = alpha_sigma(VE, t)
    np.testing.assert_array_equal(a, np.ones_like(t))
    assert s[0] == pytest.approx(VE.sigma_min, rel=1e-14)
    assert s[-1] == pytest.approx(VE.sigma_max, rel=1e-12)


def test_ve_sigma_is_geometric_in_t():
    _, s1 = alpha_sigma(VE, 0.25)
    _, s2 = alpha_sigma(VE, 0.50)
    _, s3 = alpha_sigma(VE, 0.75)
    assert s2 / s1 == pytest.approx(s3 / s2, rel=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_sigma_monotone_in_t(t1, t2):
    lo, hi = sorted((t1, t2))
    for sch in (VP, VE):
        _, s_lo = alpha_sigma(sch, lo)
        _, s_hi = alpha_sigma(sch, hi)
        assert s_lo <= s_hi


def test_sigma_to_t_round_trip():
    t = np.linspace(0.02, 0.98, 25)
    for sch in (VP, VE):
        _, s = alpha_sigma(sch, t)
        np.testing.assert_allclose(sigma_to_t(sch, s), t, atol=1e-9)


def test_sigma_to_t_clamps_out_of_range():
    # vp sigma saturates below 1, so any sigma >= 1 means "the end"
    assert sigma_to_t(VP, 1.0) == 1.0
    assert sigma_to_t(VP, 5.0) == 1.0
    assert sigma_to_t(VE, 1e-6) == 0.0
    assert sigma_to_t(VE, 1e5) == 1.0


def test_sigma_to_t_vectorized():
    s = np.array([0.001, 0.3, 2.0])
    out = sigma_to_t(VP, s)
    assert out.shape == (3,)
    assert out[0] < out[1] < out[2] == 1.0


def test_perturb_reconstruction_and_shapes():
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((5, 8, 4))
    xt, eps = perturb(VP, x0, 0.4, rng)
    a, s = alpha_sigma(VP, 0.4)
    np.testing.assert_allclose(xt, a * x0 + s * eps, atol=1e-12)
    assert xt.shape == x0.shape and eps.shape == x0.shape


def test_perturb_per_item_times():
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((6, 3, 2))
    t = np.linspace(0.1, 0.9, 6)
    xt, eps = perturb(VP, x0, t, rng)
    for i in range(6):
        a, s = alpha_sigma(VP, t[i])
        np.testing.assert_allclose(xt[i], a * x0[i] + s * eps[i], atol=1e-12)


def test_perturb_preserves_unit_variance_vp():
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((200_000, 1, 1))
    xt, _ = perturb(VP, x0, 0.6, rng)
    assert np.var(xt) == pytest.approx(1.0, rel=0.02)


def test_perturb_rejects_mismatched_t_vector():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        perturb(VP, np.zeros((4, 2, 2)), np.array([0.1, 0.2]), rng)


def test_time_domain_checked():
    with pytest.raises(ValueError):
        alpha_sigma(VP, -0.01)
    with pytest.raises(ValueError):
        alpha_sigma(VE, 1.01)


def test_bad_schedule_params_rejected():
    with pytest.raises(ValueError):
        td.NoiseSchedule(kind="cosine")
    with pytest.raises(ValueError):
        td.NoiseSchedule.vp(beta_min=2.0, beta_max=1.0)
    with pytest.raises(ValueError):
        td.NoiseSchedule.ve(sigma_min=0.0)
