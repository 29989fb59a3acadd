import numpy as np
import pytest
from scipy import stats

from bayesfc.errors import DomainError, NotPositiveDefinite
from bayesfc.linalg import compound_symmetry, correlation_bound, induce_correlation
from bayesfc.priors import IwParams, Siw1Params
from bayesfc.samplers import (RngSeed, chunks, clip_and_normalize, clip_log_weights,
                              importance_resample, iter_iw, sample_haar_orthogonal,
                              sample_inverse_gamma, sample_iw, sample_iw_scale, sample_lkj,
                              sample_mvn, sample_siw1_identity, siw1_is_average,
                              siw1_proposal_ensemble, ImportanceEnsemble, normalize_log_weights)
from conftest import mc_z, random_spd


def pairs(R):
    iu = np.triu_indices(R.shape[-1], 1)
    return R[:, iu[0], iu[1]]


class TestSeeds:
    def test_substreams_differ(self):
        a = RngSeed(1, 0).generator().random(3)
        b = RngSeed(1, 1).generator().random(3)
        assert not np.allclose(a, b)

    def test_chunking_is_fixed(self):
        # a larger request starts with exactly the smaller one
        a = sample_mvn(np.eye(3), 5000, 7)
        b = sample_mvn(np.eye(3), 9000, 7)
        np.testing.assert_array_equal(a, b[:5000])

    def test_chunk_counts(self):
        counts = [m for m, _ in chunks(10_000, 0, 4096)]
        assert counts == [4096, 4096, 1808]


class TestMvn:
    def test_identity_covariance(self):
        x = sample_mvn(np.eye(3), 100_000, 1)
        np.testing.assert_allclose(np.cov(x.T), np.eye(3), atol=0.02)

    def test_correlation(self):
        x = sample_mvn([[1, 0.9], [0.9, 1]], 100_000, 2)
        assert np.corrcoef(x.T)[0, 1] == pytest.approx(0.9, abs=0.01)

    def test_deterministic(self):
        np.testing.assert_array_equal(sample_mvn(np.eye(2), 10, 3), sample_mvn(np.eye(2), 10, 3))

    def test_not_pd(self):
        with pytest.raises(NotPositiveDefinite):
            sample_mvn([[1, 2], [2, 1]], 5, 0)


class TestInverseWishart:
    def test_mean(self):
        S = sample_iw(IwParams(np.eye(3), np.ones(3), 10), 100_000, 1)
        np.testing.assert_allclose(S.mean(axis=0), np.eye(3) / 6, atol=0.05 / 6)

    def test_induced_correlation_mean(self):
        R = induce_correlation(sample_iw(IwParams(compound_symmetry(5, 0.3), np.ones(5), 30),
                                         100_000, 2))
        assert pairs(R).mean() == pytest.approx(0.3 * (1 - 0.91 / 54), abs=0.005)

    def test_diagonal_marginal_against_inverse_gamma(self, rng):
        # Sigma_11 ~ InvGamma((nu-K+1)/2, psi_11/2) for any PD scale
        psi = random_spd(rng, 4, 5.0)
        nu = 9.5
        S = sample_iw_scale(psi, nu, 20_000, 3)
        ref = stats.invgamma((nu - 3) / 2, scale=psi[0, 0] / 2)
        assert stats.kstest(S[:, 0, 0], ref.cdf).pvalue > 1e-3

    def test_against_scipy_invwishart(self, rng):
        psi = random_spd(rng, 3, 5.0)
        nu = 8.0
        ours = sample_iw_scale(psi, nu, 20_000, 4)
        ref = stats.invwishart(df=nu, scale=psi).rvs(20_000, random_state=5)
        for i, j in [(0, 1), (1, 2), (2, 2)]:
            assert stats.ks_2samp(ours[:, i, j], ref[:, i, j]).pvalue > 1e-3

    def test_outer_product_representation(self, rng):
        # integer nu: inverse of a sum of nu outer products of N(0, psi^-1) vectors
        psi = random_spd(rng, 3, 4.0)
        nu, n = 7, 20_000
        z = rng.multivariate_normal(np.zeros(3), np.linalg.inv(psi), size=(n, nu))
        ref = np.linalg.inv(np.einsum("nvi,nvj->nij", z, z))
        ours = sample_iw_scale(psi, nu, n, 6)
        assert stats.ks_2samp(ours[:, 0, 1], ref[:, 0, 1]).pvalue > 1e-3
        assert stats.ks_2samp(np.linalg.det(ours), np.linalg.det(ref)).pvalue > 1e-3

    def test_exchangeability(self):
        R = induce_correlation(sample_iw(IwParams(compound_symmetry(5, 0.3), np.ones(5), 30),
                                         100_000, 8))
        p = pairs(R)
        se = p.std(axis=0, ddof=1) / np.sqrt(p.shape[0])
        assert np.ptp(p.mean(axis=0)) < 4 * se.max() * np.sqrt(2)

    def test_nu_domain(self):
        with pytest.raises(DomainError):
            list(iter_iw(np.eye(3), 2.0, 5, 0))


class TestHaar:
    def test_orthonormal(self):
        U = sample_haar_orthogonal(6, 1, size=100)
        np.testing.assert_allclose(np.swapaxes(U, 1, 2) @ U, np.broadcast_to(np.eye(6), U.shape),
                                   atol=1e-10)

    def test_fourth_moment(self):
        K = 5
        U = sample_haar_orthogonal(K, 2, size=1_000_000)
        assert abs(mc_z(U[:, 0, 0] ** 2 * U[:, 1, 0] ** 2, 1 / (K * (K + 2)))) < 3

    def test_cross_moment(self):
        K = 5
        U = sample_haar_orthogonal(K, 3, size=1_000_000)
        v = U[:, 0, 0] * U[:, 1, 0] * U[:, 0, 1] * U[:, 1, 1]
        assert abs(mc_z(v, -1 / (K * (K - 1) * (K + 2)))) < 3

    def test_entry_mean_zero(self):
        U = sample_haar_orthogonal(4, 4, size=100_000)
        assert np.abs(U.mean(axis=0)).max() < 0.01


class TestInverseGamma:
    draws = None

    @classmethod
    def setup_class(cls):
        cls.draws = sample_inverse_gamma(9.0, 0.5, 1, size=400_000)

    def test_mean(self):
        assert abs(mc_z(self.draws, 1 / 16)) < 3

    def test_reciprocal_mean(self):
        assert abs(mc_z(1 / self.draws, 18.0)) < 3

    def test_second_moment(self):
        assert abs(mc_z(self.draws ** 2, 1 / (4 * 8 * 7))) < 3

    def test_distribution(self):
        ref = stats.invgamma(9.0, scale=0.5)
        assert stats.kstest(self.draws[:20_000], ref.cdf).pvalue > 1e-3

    def test_domain(self):
        with pytest.raises(DomainError):
            sample_inverse_gamma(0.0, 1.0, 0)


class TestLkj:
    @pytest.mark.parametrize("K,eta", [(2, 1.0), (5, 1.0), (4, 3.0)])
    def test_marginal_is_scaled_beta(self, K, eta):
        # each off-diagonal entry is 2*Beta(b, b) - 1 with b = eta - 1 + K/2
        R = sample_lkj(K, eta, 11, size=4000)
        b = eta - 1 + K / 2
        u = (R[:, 0, K - 1] + 1) / 2
        assert stats.kstest(u, stats.beta(b, b).cdf).pvalue > 1e-3

    def test_valid_and_reproducible(self):
        R = sample_lkj(6, 1.0, 12, size=200)
        assert np.all(np.linalg.eigvalsh(R)[:, 0] > 0)
        np.testing.assert_allclose(np.diagonal(R, axis1=1, axis2=2), 1.0)
        np.testing.assert_array_equal(R, sample_lkj(6, 1.0, 12, size=200))


class TestSiw1Identity:
    def test_mean_and_symmetry(self):
        S = sample_siw1_identity(1.0, 10, 20, 20_000, 1)
        assert abs(mc_z(S[:, 0, 0], 0.0625)) < 3
        assert abs(pairs(induce_correlation(S)).mean()) < 0.005

    def test_domain(self):
        with pytest.raises(DomainError):
            sample_siw1_identity(1.0, 1.0, 3, 5, 0)


class TestProposalEnsemble:
    def test_constant_weights_at_identity(self):
        ens = siw1_proposal_ensemble(Siw1Params(np.eye(4), 2.0, 6), 2000, 1)
        np.testing.assert_allclose(ens.raw_log_w, ens.raw_log_w[0])
        np.testing.assert_allclose(ens.norm_w, 1 / 2000)

    def test_structure(self, rng):
        P = induce_correlation(random_spd(rng, 5))
        ens = siw1_proposal_ensemble(Siw1Params(P, np.arange(1.0, 6.0), 7), 3000, 2)
        F = ens.frames
        np.testing.assert_allclose(np.swapaxes(F, 1, 2) @ F, np.broadcast_to(np.eye(5), F.shape),
                                   atol=1e-8)
        assert np.all(ens.eigvals > 0)
        assert np.all(np.diff(ens.eigvals, axis=1) <= 0)
        S = ens.covariances()
        np.testing.assert_allclose(S, np.swapaxes(S, 1, 2), atol=1e-12)
        kappa_bound = np.array([correlation_bound(s) for s in S[:500]])
        off = np.abs(pairs(induce_correlation(S[:500]))).max(axis=1)
        assert np.all(off <= kappa_bound + 1e-12)
        assert ens.norm_w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_exact_sampler(self):
        ens = siw1_proposal_ensemble(Siw1Params(np.eye(4), 1.5, 6), 20_000, 3)
        exact = sample_siw1_identity(1.5 ** 2, 6, 4, 20_000, 4)
        a, b = ens.covariances(), exact
        assert stats.ks_2samp(a[:, 0, 0], b[:, 0, 0]).pvalue > 1e-3
        assert stats.ks_2samp(a[:, 1, 2], b[:, 1, 2]).pvalue > 1e-3

    def test_weighted_mean_matches_quadrature(self):
        # K=2: the frame is a rotation by theta; given theta the eigenvalues are
        # inverse-gamma, so E[Sigma_11] is a one-dimensional integral over theta
        from scipy.integrate import quad
        psi = np.array([[2.0, 0.7], [0.7, 0.5]])
        nu = 6.0

        def parts(theta):
            g = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
            beta = 0.5 * np.einsum("ik,ij,jk->k", g, psi, g)
            w = np.prod(beta ** -(nu - 1))
            return w, w * np.sum(g[0] ** 2 * beta / (nu - 2))

        Z = quad(lambda t: parts(t)[0], 0, np.pi, limit=200)[0]
        m = quad(lambda t: parts(t)[1], 0, np.pi, limit=200)[0] / Z
        avg, _ = siw1_is_average(psi, nu, 200_000, 1, 5, lambda S: S[:, 0, 0])
        assert avg == pytest.approx(m, rel=0.01)


class TestClipping:
    def test_order_statistic(self):
        np.testing.assert_array_equal(clip_log_weights([0, 100, 100], 2), [0, 100, 100])
        np.testing.assert_array_equal(clip_log_weights([0, 50, 100], 2), [0, 50, 50])

    def test_single_is_noop_and_full_is_flat(self):
        raw = np.array([3.0, -1.0, 7.0, 2.0])
        np.testing.assert_array_equal(clip_log_weights(raw, 1), raw)
        np.testing.assert_array_equal(clip_log_weights(raw, 4), np.full(4, -1.0))

    def test_domain(self):
        with pytest.raises(DomainError):
            clip_log_weights([1.0, 2.0], 3)

    def test_normalization_no_overflow(self):
        w = normalize_log_weights([1e4, 1e4 - 1, -1e4])
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.isfinite(w))

    def test_ensemble_clip(self):
        ens = siw1_proposal_ensemble(Siw1Params(compound_symmetry(3, 0.5), 1.0, 6), 500, 6)
        c = clip_and_normalize(ens, 10)
        top = np.sort(ens.raw_log_w)[::-1]
        assert np.sum(c.clipped_log_w == top[9]) >= 10
        assert c.clipped_log_w.max() == top[9]
        assert c.norm_w.sum() == pytest.approx(1.0, abs=1e-12)


class TestResample:
    def _ens(self, w):
        M = len(w)
        F = np.broadcast_to(np.eye(2), (M, 2, 2)).copy()
        lam = np.column_stack([np.arange(1.0, M + 1) + 1, np.ones(M)])
        with np.errstate(divide="ignore"):
            lw = np.log(np.asarray(w, dtype=float))
        return ImportanceEnsemble(F, lam, lw, lw, np.asarray(w) / np.sum(w), 1)

    def test_point_mass(self):
        S = importance_resample(self._ens([0.0, 1.0, 0.0]), 50, 1)
        assert np.all(S[:, 0, 0] == 3.0)

    def test_uniform_frequencies(self):
        S = importance_resample(self._ens(np.ones(4)), 40_000, 2)
        freq = np.bincount(S[:, 0, 0].astype(int) - 2, minlength=4) / 40_000
        np.testing.assert_allclose(freq, 0.25, atol=0.01)

    def test_matches_weighted_mean(self):
        ens = clip_and_normalize(
            siw1_proposal_ensemble(Siw1Params(compound_symmetry(3, 0.6), 1.0, 6), 5000, 3), 50)
        direct = np.sum(ens.norm_w * ens.covariances()[:, 0, 1])
        S = importance_resample(ens, 100_000, 4)
        assert S[:, 0, 1].mean() == pytest.approx(direct, abs=4 * S[:, 0, 1].std() / np.sqrt(1e5))
