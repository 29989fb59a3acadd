import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bayesfc.errors import (CalibrationRequired, DegenerateSpectrum, DomainError, InvalidInput,
                            MomentUndefined)
from bayesfc.linalg import compound_symmetry, induce_correlation
from bayesfc.priors import (CalibrationTable, IwParams, MixtureParams, Siw1Params,
                            default_calibration, iw_corr_moments, iw_log_density,
                            iw_log_density_scale, iw_scale,
                            mixture_corr_moments, siw1_corr_moments, siw1_log_kernel)
from bayesfc.samplers import sample_iw, sample_siw1_identity
from conftest import random_spd

CALIB = default_calibration(20)


class TestParams:
    def test_scale_unit_sigma(self):
        P = compound_symmetry(3, 0.2)
        np.testing.assert_array_equal(iw_scale(IwParams(P, np.ones(3), 10)), P)

    def test_scale_entrywise(self):
        np.testing.assert_array_equal(iw_scale(IwParams(np.eye(2), [2.0, 3.0], 5)), np.diag([4.0, 9.0]))

    def test_scale_round_trip(self, rng):
        P = induce_correlation(random_spd(rng, 4))
        psi = iw_scale(IwParams(P, rng.uniform(0.5, 3, 4), 9))
        np.testing.assert_allclose(induce_correlation(psi), P, atol=1e-12)
        q = IwParams.from_scale(psi, 9)
        np.testing.assert_allclose(q.P, P, atol=1e-12)

    def test_validation(self):
        with pytest.raises(InvalidInput):
            IwParams(np.array([[2.0, 0.0], [0.0, 1.0]]), None, 5)
        with pytest.raises(DomainError):
            IwParams(np.eye(3), None, 2.0)
        with pytest.raises(InvalidInput):
            Siw1Params(np.eye(3), [1.0, -1.0, 1.0], 5)
        with pytest.raises(DomainError):
            MixtureParams(1.5, IwParams(np.eye(2), None, 5), Siw1Params(np.eye(2), None, 5))

    def test_unset_sigma(self):
        with pytest.raises(DomainError):
            IwParams(np.eye(2), None, 5).scale

    def test_dict_round_trip(self):
        p = Siw1Params(compound_symmetry(3, 0.1), [1.0, 2.0, 3.0], 7.5)
        q = Siw1Params.from_dict(json.loads(json.dumps(p.to_dict())))
        np.testing.assert_array_equal(q.P, p.P)
        np.testing.assert_array_equal(q.sigma, p.sigma)
        assert q.nu == p.nu


class TestIwDensity:
    def test_matches_scipy(self, rng):
        psi = random_spd(rng, 3)
        params = IwParams.from_scale(psi, 7.3)
        for _ in range(5):
            S = random_spd(rng, 3)
            assert iw_log_density(S, params) == pytest.approx(
                stats.invwishart(df=7.3, scale=psi).logpdf(S), rel=1e-10)

    @pytest.mark.parametrize("psi,nu,x", [(1.0, 3.0, 0.7), (2.5, 8.2, 0.3), (0.4, 1.5, 4.0)])
    def test_univariate_reduction(self, psi, nu, x):
        ref = stats.invgamma(nu / 2, scale=psi / 2).logpdf(x)
        assert iw_log_density_scale([[x]], [[psi]], nu) == pytest.approx(ref, rel=1e-12)

    def test_normalization_by_importance_sampling(self):
        # the density integrates to one: average of density/proposal over a wider IW
        target = IwParams(np.array([[1.0, 0.4], [0.4, 1.0]]), [1.0, 2.0], 8.0)
        proposal = IwParams(np.eye(2), [1.5, 2.5], 4.5)
        S = sample_iw(proposal, 200_000, 1)
        r = np.exp(iw_log_density(S, target) - iw_log_density(S, proposal))
        assert r.mean() == pytest.approx(1.0, abs=3 * r.std() / math.sqrt(r.size))

    def test_kernel_ratio(self, rng):
        params = IwParams(compound_symmetry(3, 0.3), [1.0, 2.0, 0.5], 9.0)
        A, B = random_spd(rng, 3), random_spd(rng, 3)
        K = 3

        def kern(S):
            return -(params.nu + K + 1) / 2 * np.linalg.slogdet(S)[1] - 0.5 * np.trace(
                params.scale @ np.linalg.inv(S))
        assert iw_log_density(A, params) - iw_log_density(B, params) == pytest.approx(
            kern(A) - kern(B), rel=1e-10)


class TestSiw1Kernel:
    def test_explicit_two_by_two(self):
        S = np.array([[2.0, 0.5], [0.5, 1.0]])
        params = Siw1Params(np.array([[1.0, 0.2], [0.2, 1.0]]), [1.5, 0.8], 4.0)
        disc = math.sqrt(0.25 + 0.25)
        l1, l2 = 1.5 + disc, 1.5 - disc
        psi = params.scale
        tr = np.trace(psi @ np.linalg.inv(S))
        expected = -0.5 * tr - 4.0 * math.log(l1 * l2) - math.log(l1 - l2)
        assert siw1_log_kernel(S, params) == pytest.approx(expected, rel=1e-12)

    def test_nu_shift(self, rng):
        S = random_spd(rng, 4)
        a = Siw1Params(np.eye(4), 1.0, 5.0)
        b = Siw1Params(np.eye(4), 1.0, 7.5)
        assert siw1_log_kernel(S, b) - siw1_log_kernel(S, a) == pytest.approx(
            -2.5 * np.linalg.slogdet(S)[1], rel=1e-10)

    def test_tied_eigenvalues(self):
        with pytest.raises(DegenerateSpectrum):
            siw1_log_kernel(np.eye(3), Siw1Params(np.eye(3), 1.0, 5.0))

    def test_normalizer_ratio_against_exact_sampler(self):
        # Z(cI, nu) / Z(I, nu) = c^(K(1-nu)), estimated with draws from SIW_1(I, nu)
        K, nu, c = 2, 5.0, 1.2
        S = sample_siw1_identity(1.0, nu, K, 100_000, 3)
        p1, pc = Siw1Params(np.eye(K), 1.0, nu), Siw1Params(np.eye(K), math.sqrt(c), nu)
        r = np.exp([siw1_log_kernel(s, pc) - siw1_log_kernel(s, p1) for s in S])
        assert r.mean() == pytest.approx(c ** (K * (1 - nu)), abs=3 * r.std() / math.sqrt(r.size))

    def test_permutation_invariance(self, rng):
        params = Siw1Params(compound_symmetry(4, 0.3), 2.0, 6.0)
        S = random_spd(rng, 4)
        perm = rng.permutation(4)
        assert siw1_log_kernel(S[np.ix_(perm, perm)], params) == pytest.approx(
            siw1_log_kernel(S, params), rel=1e-10)


class TestIwMoments:
    def test_values(self):
        mean, var = iw_corr_moments(IwParams(compound_symmetry(5, 0.3), None, 30))
        assert mean[0, 1] == pytest.approx(0.3 * (1 - 0.91 / 54))
        assert mean[0, 1] == pytest.approx(0.29494, abs=5e-6)
        assert var[0, 1] == pytest.approx(0.91 ** 2 / 26)
        assert var[0, 1] == pytest.approx(0.031850, abs=5e-7)
        assert mean[0, 0] == 1.0 and var[0, 0] == 0.0

    def test_identity_zero_mean(self):
        mean, _ = iw_corr_moments(IwParams(np.eye(4), None, 20))
        np.testing.assert_array_equal(mean, np.eye(4))

    def test_large_nu_limit(self):
        P = compound_symmetry(5, 0.3)
        gaps = [abs(iw_corr_moments(IwParams(P, None, nu))[0][0, 1] - 0.3) for nu in (30, 300, 3000)]
        vars_ = [iw_corr_moments(IwParams(P, None, nu))[1][0, 1] for nu in (30, 300, 3000)]
        assert gaps[0] > gaps[1] > gaps[2] and vars_[0] > vars_[1] > vars_[2]

    def test_undefined(self):
        with pytest.raises(MomentUndefined):
            iw_corr_moments(IwParams(np.eye(5), None, 8))

    @pytest.mark.parametrize("rho", [0.0, 0.3, 0.6])
    def test_monte_carlo(self, rho):
        R = induce_correlation(sample_iw(IwParams(compound_symmetry(5, rho), np.ones(5), 30),
                                         100_000, 21))
        x = R[:, 0, 1]
        mean, var = iw_corr_moments(IwParams(compound_symmetry(5, rho), None, 30))
        assert x.mean() == pytest.approx(mean[0, 1], abs=0.01)
        assert x.var() == pytest.approx(var[0, 1], rel=0.2)


class TestSiwMoments:
    def test_mean(self):
        mean, _ = siw1_corr_moments(Siw1Params(compound_symmetry(20, 0.3), None, 10), CALIB)
        assert mean[0, 1] == pytest.approx(0.0198)

    def test_variance(self):
        _, v = siw1_corr_moments(Siw1Params(np.eye(20), None, 40), CALIB)
        assert v == pytest.approx(0.09 + math.exp(-10.75))
        assert v == pytest.approx(0.0900215, abs=1e-7)

    def test_first_order_slope_same_order(self):
        assert abs(2 / 22 - CALIB.slope) < 0.03

    def test_missing_calibration(self):
        with pytest.raises(CalibrationRequired):
            siw1_corr_moments(Siw1Params(np.eye(5), None, 10))
        with pytest.raises(CalibrationRequired):
            siw1_corr_moments(Siw1Params(np.eye(5), None, 10), CALIB)

    def test_small_nu(self):
        with pytest.raises(MomentUndefined):
            siw1_corr_moments(Siw1Params(np.eye(20), None, 3), CALIB)


def _mixture(eta, rho0, rho1, nu0=54, nu1=40):
    return MixtureParams(eta, IwParams(compound_symmetry(20, rho0), None, nu0),
                         Siw1Params(compound_symmetry(20, rho1), None, nu1))


class TestMixtureMoments:
    def test_mean_example(self):
        mean, _ = mixture_corr_moments(_mixture(0.5, 0.5, 0.3), CALIB)
        assert mean[0, 1] == pytest.approx(0.5 * 0.5 + 0.5 * 0.066 * 0.3)
        assert mean[0, 1] == pytest.approx(0.2599, abs=5e-5)

    def test_eta_one_is_iw(self):
        m = _mixture(1.0, 0.5, 0.3)
        mean, var = mixture_corr_moments(m, CALIB)
        m0, v0 = iw_corr_moments(m.iw, leading=True)
        np.testing.assert_array_equal(mean, m0)
        np.testing.assert_allclose(var, v0)

    def test_eta_zero_is_siw(self):
        m = _mixture(0.0, 0.5, 0.3)
        mean, var = mixture_corr_moments(m, CALIB)
        m1, v1 = siw1_corr_moments(m.siw, CALIB)
        np.testing.assert_array_equal(mean, m1)
        assert var[0, 1] == pytest.approx(v1)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 1), st.floats(-0.05, 0.95), st.floats(-0.05, 0.95), st.floats(24, 200),
           st.floats(4, 60))
    def test_total_variance_identity(self, eta, rho0, rho1, nu0, nu1):
        m = _mixture(eta, rho0, rho1, nu0, nu1)
        mean, var = mixture_corr_moments(m, CALIB)
        m0, v0 = rho0, (1 - rho0 ** 2) ** 2 / (nu0 - 19)
        m1, v1 = 0.066 * rho1, 0.09 + math.exp(-0.23 * nu1 - 1.55)
        second = eta * (v0 + m0 ** 2) + (1 - eta) * (v1 + m1 ** 2)
        assert mean[0, 1] == pytest.approx(eta * m0 + (1 - eta) * m1, abs=1e-12)
        assert var[0, 1] == pytest.approx(second - mean[0, 1] ** 2, rel=1e-9, abs=1e-12)

    def test_literal_form(self):
        m = _mixture(0.3, 0.5, 0.3, 60, 20)
        _, var = mixture_corr_moments(m, CALIB, literal=True)
        expected = 0.3 / 41 + 0.7 * (0.09 + math.exp(-0.23 * 20 - 1.55)) + 0.21 * 0.25
        assert var[0, 1] == pytest.approx(expected)

    def test_precondition(self):
        with pytest.raises(MomentUndefined):
            mixture_corr_moments(_mixture(0.5, 0.1, 0.1, nu0=23), CALIB)


class TestCalibrationTable:
    def test_bundled_constants(self):
        assert (CALIB.K, CALIB.slope, CALIB.var_a, CALIB.var_b, CALIB.var_c) == (20, 0.066, 0.09, -0.23, -1.55)
        assert len(CALIB.sigma_surface) >= 6

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "t.json"
        CALIB.save(path)
        doc = json.loads(path.read_text())
        assert {"K", "slope", "var_a", "var_b", "var_c", "sigma_surface"} <= set(doc)
        assert set(doc["sigma_surface"][0]) == {"nu", "intercept", "slope"}
        assert CalibrationTable.load(path) == CALIB

    def test_sigma_map_interpolates(self):
        a, b = CALIB.sigma_surface[3], CALIB.sigma_surface[4]
        mid = (a.nu + b.nu) / 2
        icp, slp = CALIB.sigma_map(mid)
        assert icp == pytest.approx((a.intercept + b.intercept) / 2)
        assert slp == pytest.approx((a.slope + b.slope) / 2)

    def test_sigma_map_out_of_range(self):
        with pytest.raises(CalibrationRequired):
            CALIB.sigma_map(100.0)

    def test_invalid(self):
        with pytest.raises(DomainError):
            CalibrationTable(5, 1.5, 0.1, -0.2, -1.0)
        with pytest.raises(InvalidInput):
            CalibrationTable.from_dict({"K": 5})

    def test_unbundled_dimension(self):
        with pytest.raises(CalibrationRequired):
            default_calibration(7)
