"""Posterior updates, marginal likelihoods, posterior sampling and scoring."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit, gammaln

from .errors import DomainError, InvalidInput
from .linalg import SufficientStats, induce_correlation, log_sum_exp, sufficient_stats
from .priors import (CalibrationTable, IwParams, MixtureParams, Siw1Params, iw_corr_moments,
                     log_iw_normalizer, mixture_corr_moments, siw1_corr_moments)
from .samplers import (as_seed, chunks, clip_log_weights, clip_size_for, haar_from_gaussian,
                       iter_iw, iter_siw1_identity, normalize_log_weights, sample_iw_scale,
                       siw1_is_average, siw1_proposal_ensemble, clip_and_normalize,
                       resample_indices)

LOG_2PI = math.log(2.0 * math.pi)
KINDS = ("iw", "siw", "mixture", "fixed-mixture")
IW, SIW = 0, 1


def _as_stats(data) -> SufficientStats:
    return data if isinstance(data, SufficientStats) else sufficient_stats(data)


def _update_scale(prior, stats: SufficientStats, nu_step: float):
    if stats.n == 0:
        return prior
    if stats.dim != prior.dim:
        raise InvalidInput(f"data have K={stats.dim}, prior has K={prior.dim}")
    psi_n = prior.scale + stats.scatter
    sigma_n = np.sqrt(np.diag(psi_n))
    P_n = psi_n / np.outer(sigma_n, sigma_n)
    np.fill_diagonal(P_n, 1.0)
    return type(prior)(P_n, sigma_n, prior.nu + nu_step * stats.n)


def iw_posterior(prior: IwParams, data) -> IwParams:
    """Conjugate update: scale gains the scatter matrix, nu gains n."""
    return _update_scale(prior, _as_stats(data), 1.0)


def siw1_posterior(prior: Siw1Params, data) -> Siw1Params:
    """Conjugate update; the SIW_1 exponent on |Sigma| grows by n/2."""
    return _update_scale(prior, _as_stats(data), 0.5)


def gaussian_loglik(cov, stats: SufficientStats):
    """Zero-mean Gaussian log-likelihood of the data summarized by ``stats``."""
    cov = np.asarray(cov, dtype=float)
    K = stats.dim
    sign, logdet = np.linalg.slogdet(cov)
    if np.any(sign <= 0):
        raise DomainError("covariance must be positive definite")
    quad = np.trace(np.linalg.solve(cov, np.broadcast_to(stats.scatter, cov.shape)),
                    axis1=-2, axis2=-1)
    return -0.5 * (stats.n * (K * LOG_2PI + logdet) + quad)


def log_ml_iw_scale(psi, nu: float, data) -> float:
    """Exact inverse-Wishart log marginal likelihood for a raw scale matrix."""
    stats = _as_stats(data)
    if stats.n == 0:
        return 0.0
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    K = psi.shape[0]
    return float(-0.5 * stats.n * K * LOG_2PI + log_iw_normalizer(psi, nu)
                 - log_iw_normalizer(psi + stats.scatter, nu + stats.n))


def log_ml_iw(prior: IwParams, data) -> float:
    """Exact log marginal likelihood under the inverse-Wishart prior."""
    return log_ml_iw_scale(prior.scale, prior.nu, data)


class MarginalLikelihood(NamedTuple):
    value: float
    stderr: float
    ess: float


@dataclass(frozen=True)
class ISConfig:
    """Settings for the clipped importance sampler."""

    M: int = 500_000
    clip_exp: float = 0.9
    rao_blackwell: bool = False

    def __post_init__(self):
        if self.M < 1:
            raise DomainError("importance sample size must be positive")
        if not 0.0 <= self.clip_exp <= 1.0:
            raise DomainError("clip exponent must lie in [0, 1]")

    @property
    def clip_size(self) -> int:
        return clip_size_for(self.M, self.clip_exp)


def _snis_log_estimate(log_f, log_w) -> MarginalLikelihood:
    """log of sum_m p_m f_m with delta-method standard error."""
    p = normalize_log_weights(log_w)
    log_p = np.log(p, where=p > 0, out=np.full_like(p, -np.inf))
    value = log_sum_exp(log_f + log_p)
    f_rel = np.exp(log_f - value)  # f_m divided by the estimate
    var_rel = float(np.sum(p ** 2 * (f_rel - 1.0) ** 2))
    combined = p * f_rel
    ess = float(np.sum(combined) ** 2 / np.sum(combined ** 2))
    return MarginalLikelihood(value, math.sqrt(var_rel), ess)


def _siw1_terms(psi, nu, stats, M, seed, rao_blackwell):
    """Per-draw raw log-weights and log-likelihood terms from the SIW_1 proposal."""
    K = psi.shape[0]
    n, T = stats.n, stats.scatter
    a = nu - 1.0
    const = -0.5 * n * K * LOG_2PI
    raw, logf = [], []
    for m, rng in chunks(M, seed):
        G = haar_from_gaussian(rng.standard_normal((m, K, K)))
        half_quad = 0.5 * np.einsum("mik,ij,mjk->mk", G, psi, G)
        t = np.einsum("mik,ij,mjk->mk", G, T, G)
        lam = half_quad / rng.gamma(a, size=(m, K))
        raw.append(-a * np.sum(np.log(half_quad), axis=1))
        if rao_blackwell:
            # eigenvalues integrated out against their inverse-gamma proposal
            f = (a * np.log(half_quad) + gammaln(a + 0.5 * n) - gammaln(a)
                 - (a + 0.5 * n) * np.log(half_quad + 0.5 * t))
        else:
            f = -0.5 * (n * np.log(lam) + t / lam)
        logf.append(const + np.sum(f, axis=1))
    return np.concatenate(raw), np.concatenate(logf)


def log_ml_siw1(prior: Siw1Params, data, M: int = 500_000, clip_size: int | None = None,
                seed=0, *, rao_blackwell: bool = False) -> MarginalLikelihood:
    """Clipped self-normalized importance-sampling log marginal likelihood.

    Proposal frames are Haar and eigenvalues inverse-gamma given the frame;
    the weights above the ``clip_size``-th largest are flattened to it. Only
    the scatter matrix of the data is needed. With ``rao_blackwell=True`` the
    eigenvalues are integrated analytically per frame, which lowers variance.
    """
    stats = _as_stats(data)
    if prior.nu <= 1:
        raise DomainError("SIW_1 marginal likelihood needs nu > 1")
    if stats.n == 0:
        return MarginalLikelihood(0.0, 0.0, float(M))
    clip_size = clip_size_for(M, 0.9) if clip_size is None else int(clip_size)
    raw, logf = _siw1_terms(prior.scale, prior.nu, stats, M, as_seed(seed), rao_blackwell)
    est = _snis_log_estimate(logf, clip_log_weights(raw, clip_size))
    if est.ess < 100:
        warnings.warn(f"SIW_1 marginal likelihood ESS is only {est.ess:.1f}", stacklevel=2)
    return est


def log_ml_siw1_exact(scale: float, nu: float, data, M: int, seed=0) -> MarginalLikelihood:
    """Plain Monte Carlo average of the likelihood over exact draws with scale*I."""
    stats = _as_stats(data)
    logf = np.concatenate([gaussian_loglik(c, stats)
                           for c in iter_siw1_identity(scale, nu, stats.dim, M, seed)])
    return _snis_log_estimate(logf, np.zeros_like(logf))


def log_ml_from_is_config(prior: Siw1Params, stats, cfg: ISConfig, seed) -> MarginalLikelihood:
    return log_ml_siw1(prior, stats, cfg.M, cfg.clip_size, seed, rao_blackwell=cfg.rao_blackwell)


@dataclass
class PosteriorState:
    """Fitted posterior of one of the four model kinds.

    ``eta_post`` is the weight of the inverse-Wishart component (1 for the
    pure IW model, 0 for pure SIW_1).
    """

    kind: str
    n: int
    iw_post: IwParams | None = None
    siw_post: Siw1Params | None = None
    eta_prior: float = 1.0
    eta_post: float = 1.0
    log_l0: float | None = None
    log_l1: float | None = None
    log_l1_se: float | None = None
    log_l1_ess: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown model kind {self.kind!r}")
        if not 0.0 <= self.eta_post <= 1.0:
            raise DomainError("posterior weight must lie in [0, 1]")

    @property
    def dim(self) -> int:
        return (self.iw_post or self.siw_post).dim

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n,
                "iw_post": self.iw_post.to_dict() if self.iw_post else None,
                "siw_post": self.siw_post.to_dict() if self.siw_post else None,
                "eta_prior": self.eta_prior, "eta_post": self.eta_post,
                "log_l0": self.log_l0, "log_l1": self.log_l1, "log_l1_se": self.log_l1_se,
                "log_l1_ess": self.log_l1_ess, "info": self.info}

    @classmethod
    def from_dict(cls, d) -> "PosteriorState":
        return cls(d["kind"], int(d["n"]),
                   IwParams.from_dict(d["iw_post"]) if d.get("iw_post") else None,
                   Siw1Params.from_dict(d["siw_post"]) if d.get("siw_post") else None,
                   float(d.get("eta_prior", 1.0)), float(d.get("eta_post", 1.0)),
                   d.get("log_l0"), d.get("log_l1"), d.get("log_l1_se"), d.get("log_l1_ess"),
                   dict(d.get("info", {})))


def posterior_weight(eta: float, log_l0: float, log_l1: float) -> float:
    """Updated IW weight, computed as a logistic function of the log odds."""
    if eta in (0.0, 1.0):
        return float(eta)
    return float(expit(math.log(eta) - math.log1p(-eta) + log_l0 - log_l1))


def iw_state(prior: IwParams, data) -> PosteriorState:
    stats = _as_stats(data)
    return PosteriorState("iw", stats.n, iw_posterior(prior, stats), None, 1.0, 1.0,
                          log_ml_iw(prior, stats))


def siw_state(prior: Siw1Params, data, is_config: ISConfig | None = None, seed=0,
              *, marginal: bool = False) -> PosteriorState:
    stats = _as_stats(data)
    state = PosteriorState("siw", stats.n, None, siw1_posterior(prior, stats), 0.0, 0.0)
    if marginal:
        ml = log_ml_from_is_config(prior, stats, is_config or ISConfig(), seed)
        state.log_l1, state.log_l1_se, state.log_l1_ess = ml
    return state


def mixture_posterior(prior: MixtureParams, data, is_config: ISConfig | None = None,
                      seed=0) -> PosteriorState:
    stats = _as_stats(data)
    is_config = is_config or ISConfig()
    state = PosteriorState("mixture", stats.n, iw_posterior(prior.iw, stats),
                           siw1_posterior(prior.siw, stats), prior.eta, prior.eta)
    if prior.eta in (0.0, 1.0):
        return state
    state.log_l0 = log_ml_iw(prior.iw, stats)
    state.log_l1, state.log_l1_se, state.log_l1_ess = log_ml_from_is_config(
        prior.siw, stats, is_config, seed)
    state.eta_post = posterior_weight(prior.eta, state.log_l0, state.log_l1)
    return state


def fixed_weight_posterior(prior: MixtureParams, data) -> PosteriorState:
    """Component-wise conjugate updates with the mixture weight held fixed."""
    stats = _as_stats(data)
    return PosteriorState("fixed-mixture", stats.n, iw_posterior(prior.iw, stats),
                          siw1_posterior(prior.siw, stats), prior.eta, prior.eta)


@dataclass(frozen=True)
class PosteriorSamples:
    """Posterior draws with their component labels (0 = IW, 1 = SIW_1)."""

    corr: np.ndarray
    labels: np.ndarray
    cov: np.ndarray | None = None
    siw_ess: float | None = None

    @property
    def size(self) -> int:
        return self.corr.shape[0]

    @property
    def dim(self) -> int:
        return self.corr.shape[1]


def _siw_source(params: Siw1Params, is_config: ISConfig, seed, count: int):
    """Resampled ensemble indices for ``count`` SIW_1 draws, plus the ensemble."""
    ens = clip_and_normalize(siw1_proposal_ensemble(params, is_config.M, seed), is_config.clip_size)
    if ens.ess < 100:
        warnings.warn(f"SIW_1 posterior ensemble ESS is only {ens.ess:.1f}", stacklevel=3)
    return ens, resample_indices(ens.norm_w, count, seed.child(1))


def _draw_plan(state: PosteriorState, N: int, seed):
    # 0 = IW, 1 = SIW_1
    return (seed.generator(0).random(N) >= state.eta_post).astype(np.uint8)


def sample_posterior_covariances(state: PosteriorState, N: int,
                                 is_config: ISConfig | None = None, seed=0) -> PosteriorSamples:
    """Draw ``N`` covariances: pick a component by weight, then sample it.

    IW draws are exact; SIW_1 draws come from one importance ensemble built at
    the posterior parameters and resampled.
    """
    seed = as_seed(seed)
    is_config = is_config or ISConfig(M=50_000, clip_exp=0.8)
    labels = _draw_plan(state, N, seed)
    K = state.dim
    cov = np.empty((N, K, K))
    n_iw = int(np.sum(labels == IW))
    ess = None
    if n_iw:
        cov[labels == IW] = sample_iw_scale(state.iw_post.scale, state.iw_post.nu, n_iw, seed.child(2))
    if N - n_iw:
        ens, idx = _siw_source(state.siw_post, is_config, seed.child(3), N - n_iw)
        cov[labels == SIW] = ens.covariances(idx)
        ess = ens.ess
    return PosteriorSamples(induce_correlation(cov), labels, cov, ess)


def stream_batch_means(state: PosteriorState, L: int, S: int, is_config: ISConfig, seed,
                       block_draws: int = 8192) -> np.ndarray:
    """Means over ``L`` consecutive batches of ``S`` posterior correlation draws.

    Uses the same draws as ``sample_posterior_correlations(state, L*S, ...)``
    but never holds more than one block of them.
    """
    seed = as_seed(seed)
    N = L * S
    labels = _draw_plan(state, N, seed)
    n_iw = int(np.sum(labels == IW))
    iw_iter = None
    if n_iw:
        iw_iter = iter_iw(state.iw_post.scale, state.iw_post.nu, n_iw, seed.child(2))
    siw_corr = siw_idx = None
    if N - n_iw:
        ens, siw_idx = _siw_source(state.siw_post, is_config, seed.child(3), N - n_iw)
        siw_corr = induce_correlation(ens.covariances())
    K = state.dim
    out = np.empty((L, K, K))
    iw_buf = np.empty((0, K, K))
    siw_pos = 0
    per_block = max(1, block_draws // S)
    for b0 in range(0, L, per_block):
        b1 = min(L, b0 + per_block)
        labs = labels[b0 * S:b1 * S]
        block = np.empty((labs.size, K, K))
        need = int(np.sum(labs == IW))
        while iw_buf.shape[0] < need:
            iw_buf = np.concatenate([iw_buf, induce_correlation(next(iw_iter))])
        block[labs == IW] = iw_buf[:need]
        iw_buf = iw_buf[need:]
        k = labs.size - need
        block[labs == SIW] = siw_corr[siw_idx[siw_pos:siw_pos + k]] if k else 0.0
        siw_pos += k
        out[b0:b1] = block.reshape(b1 - b0, S, K, K).mean(axis=1)
    return out


def sample_posterior_correlations(state, N, is_config=None, seed=0) -> PosteriorSamples:
    return sample_posterior_covariances(state, N, is_config, seed)


def posterior_corr_moments(state: PosteriorState, calib: CalibrationTable | None = None):
    """Moment formulas evaluated at the posterior hyperparameters."""
    if state.kind == "iw":
        return iw_corr_moments(state.iw_post)
    if state.kind == "siw":
        mean, v = siw1_corr_moments(state.siw_post, calib)
        var = np.full_like(mean, v)
        np.fill_diagonal(var, 0.0)
        return mean, var
    mix = MixtureParams(state.eta_post, state.iw_post, state.siw_post)
    return mixture_corr_moments(mix, calib)


def posterior_mean_correlation(state: PosteriorState, seed=0, *, iw_draws: int = 1000,
                               siw_M: int = 50_000, siw_clip_exp: float = 0.8) -> np.ndarray:
    """Monte Carlo posterior mean of the correlation matrix, component by component."""
    seed = as_seed(seed)
    mean = 0.0
    if state.eta_post > 0:
        covs = sample_iw_scale(state.iw_post.scale, state.iw_post.nu, iw_draws, seed.child(4))
        mean = mean + state.eta_post * induce_correlation(covs).mean(axis=0)
    if state.eta_post < 1:
        siw_mean, _ = siw1_is_average(state.siw_post.scale, state.siw_post.nu, siw_M,
                                      clip_size_for(siw_M, siw_clip_exp), seed.child(5),
                                      induce_correlation)
        mean = mean + (1 - state.eta_post) * siw_mean
    return mean


def pointwise_loglik(covs, data) -> np.ndarray:
    """Matrix of log N(x_i; 0, Sigma_s) with draws along rows."""
    x = np.asarray(data, dtype=float)
    K = x.shape[1]
    L = np.linalg.cholesky(covs)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=1)
    z = np.linalg.solve(L, np.broadcast_to(x.T, (covs.shape[0],) + x.T.shape))
    return -0.5 * (K * LOG_2PI + logdet[:, None] + np.sum(z ** 2, axis=1))


class PredictiveScore(NamedTuple):
    elpd_loo: float
    waic: float
    p_waic: float
    unstable_points: int


def elpd_from_loglik(loglik: np.ndarray, truncate_q: float = 99.9) -> PredictiveScore:
    """Importance-sampling LOO and WAIC from an (S draws, n points) log-likelihood matrix.

    LOO weights ``1/p(x_i | Sigma_s)`` are capped at their ``truncate_q``
    percentile per point; a point counts as unstable when the cap removes
    more than 1% of its weight mass.
    """
    S = loglik.shape[0]
    log_r = -loglik
    cap = np.percentile(log_r, truncate_q, axis=0)
    log_rt = np.minimum(log_r, cap)
    lse = lambda a: np.max(a, axis=0) + np.log(np.sum(np.exp(a - np.max(a, axis=0)), axis=0))
    elpd_i = lse(log_rt + loglik) - lse(log_rt)
    lost = 1.0 - np.exp(lse(log_rt) - lse(log_r))
    lppd_i = lse(loglik) - math.log(S)
    p_i = np.var(loglik, axis=0, ddof=1)
    return PredictiveScore(float(np.sum(elpd_i)), float(np.sum(lppd_i - p_i)), float(np.sum(p_i)),
                           int(np.sum(lost > 0.01)))


def model_score_elpd(state: PosteriorState, data, N: int = 1000, seed=0,
                     is_config: ISConfig | None = None) -> PredictiveScore:
    x = np.asarray(data, dtype=float)
    draws = sample_posterior_covariances(state, N, is_config, seed)
    return elpd_from_loglik(pointwise_loglik(draws.cov, x))
