"""Turning beliefs about correlation moments into prior hyperparameters.

Also hosts the Monte Carlo calibration that produces a ``CalibrationTable``
for dimensions without a bundled one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (CalibrationError, DataError, DomainError, RescaleRequired, UnreachableMean,
                     UnreachableVariance)
from .linalg import SufficientStats, compound_symmetry, induce_correlation
from .priors import (CalibrationTable, IwParams, MixtureParams, SigmaSurfacePoint, Siw1Params,
                     _require_calibration)
from .samplers import RngSeed, as_seed, clip_size_for, sample_lkj, siw1_is_average

DEFAULT_NU_GRID = (4, 5, 8, 10, 13, 15, 18, 22, 25, 29, 32, 36, 40)


@dataclass(frozen=True)
class ElicitationTarget:
    """Desired prior mean (scalar or K x K) and variance of each correlation."""

    mean: float | np.ndarray
    var: float
    K: int

    def __post_init__(self):
        if self.K < 2:
            raise DomainError("K must be at least 2")
        if not 0.0 < self.var < 1.0:
            raise DomainError("target variance must lie in (0, 1)")
        m = np.asarray(self.mean, dtype=float)
        if m.ndim not in (0, 2) or (m.ndim == 2 and m.shape != (self.K, self.K)):
            raise DomainError("target mean must be a scalar or a K x K matrix")
        off = m if m.ndim == 0 else m[~np.eye(self.K, dtype=bool)]
        if np.any(np.abs(off) >= 1.0):
            raise DomainError("target correlations must lie in (-1, 1)")

    @property
    def is_scalar(self) -> bool:
        return np.ndim(self.mean) == 0


def _target_matrix(mean, K, error=DomainError):
    if np.ndim(mean) == 0:
        try:
            return compound_symmetry(K, float(mean))
        except DomainError as exc:
            raise error(str(exc)) from exc
    P = np.array(mean, dtype=float)
    P = 0.5 * (P + P.T)
    np.fill_diagonal(P, 1.0)
    if np.any(np.abs(P) > 1.0) or np.linalg.eigvalsh(P)[0] <= 1e-10:
        raise error("target mean matrix is not a positive-definite correlation matrix")
    return P


def _max_abs_offdiag(P):
    return float(np.max(np.abs(P[~np.eye(P.shape[0], dtype=bool)])))


def iw_nu_for_variance(p_star: float, var: float, K: int) -> float:
    nu = K - 1 + (1.0 - p_star ** 2) ** 2 / var
    if nu < K + 4:
        warnings.warn(f"requested variance needs nu={nu:.3f}; raised to the floor K+4={K + 4}",
                      stacklevel=3)
        nu = float(K + 4)
    return nu


def elicit_iw(target: ElicitationTarget) -> IwParams:
    P = _target_matrix(target.mean, target.K)
    return IwParams(P, None, iw_nu_for_variance(_max_abs_offdiag(P), target.var, target.K))


def siw1_nu_for_variance(var: float, calib: CalibrationTable) -> float:
    if var <= calib.var_a:
        raise UnreachableVariance(
            f"SIW_1 correlation variance cannot go below {calib.var_a:g}; requested {var:g}")
    nu = (math.log(var - calib.var_a) - calib.var_c) / calib.var_b
    if nu <= 3:
        warnings.warn(f"requested variance needs nu={nu:.3f}; raised to 4", stacklevel=3)
        nu = 4.0
    return nu


def elicit_siw1(target: ElicitationTarget, calib: CalibrationTable | None = None) -> Siw1Params:
    calib = _require_calibration(target.K, calib)
    if target.is_scalar:
        rho = float(target.mean) / calib.slope
        P = _target_matrix(rho, target.K, UnreachableMean)
    else:
        P = _target_matrix(np.asarray(target.mean) / calib.slope, target.K, UnreachableMean)
    return Siw1Params(P, None, siw1_nu_for_variance(target.var, calib))


def _compound_interval(K):
    return -1.0 / (K - 1), 1.0


def elicit_mixture(target: ElicitationTarget, eta: float, calib: CalibrationTable | None = None,
                   *, rho1: float | None = None, nu1: float | None = None) -> MixtureParams:
    """Mixture hyperparameters for scalar targets.

    The mean equation ``eta*rho0 + (1-eta)*slope*rho1 = mean`` is solved for
    ``rho0`` (with ``rho1 = rho0`` unless given). ``nu1`` defaults to the value
    putting the SIW_1 variance at 1.1 times its floor; ``nu0`` then absorbs
    the rest of the target variance by the law of total variance.
    """
    if not target.is_scalar:
        raise DomainError("mixture elicitation takes a scalar mean target")
    if not 0.0 <= eta <= 1.0:
        raise DomainError("mixture weight must lie in [0, 1]")
    K = target.K
    calib = _require_calibration(K, calib)
    c = calib.slope
    m = float(target.mean)
    lo, hi = _compound_interval(K)

    if eta == 0.0:
        siw = elicit_siw1(target, calib)
        rho = siw.P[0, 1]
        iw = IwParams(compound_symmetry(K, rho), None, float(K + 4))
        return MixtureParams(0.0, iw, siw)

    fixed_rho1 = rho1 is not None
    if fixed_rho1:
        rho0 = (m - (1 - eta) * c * rho1) / eta
    else:
        rho0 = m / (eta + (1 - eta) * c)
        rho1 = rho0
    if not lo < rho0 < hi:
        # feasible mean range for the chosen split, to report back
        if fixed_rho1 and eta < 1:
            span = sorted((eta * lo + (1 - eta) * c * rho1, eta * hi + (1 - eta) * c * rho1))
            raise DomainError(f"rho0={rho0:.4g} is infeasible; with rho1={rho1:g} the "
                              f"target mean must lie in ({span[0]:.4g}, {span[1]:.4g})")
        raise DomainError(f"rho0={rho0:.4g} outside ({lo:.4g}, 1)")
    if not lo < rho1 < hi:
        raise UnreachableMean(f"rho1={rho1:.4g} outside ({lo:.4g}, 1)")

    if eta == 1.0:
        iw = elicit_iw(target)
        siw_nu = nu1 if nu1 is not None else siw1_nu_for_variance(1.1 * calib.var_a, calib)
        return MixtureParams(1.0, iw, Siw1Params(compound_symmetry(K, rho1), None, siw_nu))

    if nu1 is None:
        nu1 = siw1_nu_for_variance(1.1 * calib.var_a, calib)
    var1 = calib.variance(nu1)
    between = eta * (1 - eta) * (rho0 - c * rho1) ** 2
    rest = target.var - (1 - eta) * var1 - between
    if rest <= 0:
        floor = (1 - eta) * var1 + between
        raise DomainError(f"target variance {target.var:g} is infeasible; with nu1={nu1:g} it "
                          f"must exceed {floor:.4g}")
    nu0 = iw_nu_for_variance(rho0, rest / eta, K)
    return MixtureParams(float(eta), IwParams(compound_symmetry(K, rho0), None, nu0),
                         Siw1Params(compound_symmetry(K, rho1), None, float(nu1)))


def _stats_diag(stats: SufficientStats) -> np.ndarray:
    d = np.diag(stats.mean_cross)
    if np.any(d <= 0):
        raise DataError("every component needs a positive sample second moment")
    return d


def sigma_empirical_iw(nu: float, K: int, stats: SufficientStats) -> np.ndarray:
    """Scales making the prior mean of each variance equal its sample value."""
    if nu <= K + 1:
        raise DomainError(f"empirical scales need nu > K+1 = {K + 1}, got {nu}")
    return np.sqrt((nu - K - 1) * _stats_diag(stats))


def sigma_match_siw1(nu: float, K: int, stats: SufficientStats,
                     calib: CalibrationTable | None = None) -> np.ndarray:
    """Invert the calibrated straight line from sigma to the expected variance."""
    calib = _require_calibration(K, calib)
    intercept, slope = calib.sigma_map(nu)
    d = _stats_diag(stats)
    floor = calib.reachable_floor(nu)
    if np.any(d < floor):
        raise RescaleRequired(
            f"sample variances down to {d.min():.4g} fall below the reachable floor "
            f"{floor:.4g} at nu={nu:g}; rescale the data")
    return (d - intercept) / slope


@dataclass(frozen=True)
class CalibrationGrid:
    nus: tuple = DEFAULT_NU_GRID
    configs_per_nu: int = 3
    draws: int = 20000
    sigma_range: tuple = (0.5, 10.0)
    clip_exp: float = 0.8
    lkj_eta: float = 1.0

    def __post_init__(self):
        if not self.nus:
            raise DomainError("calibration grid needs at least one nu")
        if any(nu <= 2 for nu in self.nus):
            raise DomainError("calibration grid nu values must exceed 2")

    @classmethod
    def from_dict(cls, d):
        kw = {k: d[k] for k in ("configs_per_nu", "draws", "clip_exp", "lkj_eta") if k in d}
        if "nus" in d:
            kw["nus"] = tuple(float(x) for x in d["nus"])
        if "sigma_range" in d:
            kw["sigma_range"] = tuple(float(x) for x in d["sigma_range"])
        return cls(**kw)


@dataclass(frozen=True)
class ConfigSummary:
    """Monte Carlo moments for one (nu, P, sigma) calibration configuration."""

    nu: float
    P: np.ndarray
    sigma: np.ndarray
    corr_mean: np.ndarray
    corr_var: np.ndarray
    diag_mean: np.ndarray
    ess: float


def _draw_stats(covs):
    R = induce_correlation(covs)
    m = covs.shape[0]
    diag = np.diagonal(covs, axis1=-2, axis2=-1)
    return np.concatenate([R.reshape(m, -1), (R ** 2).reshape(m, -1), diag], axis=1)


def run_calibration_configs(K: int, grid: CalibrationGrid = CalibrationGrid(), seed=0):
    seed = as_seed(seed)
    out = []
    idx = 0
    for nu in grid.nus:
        for _ in range(grid.configs_per_nu):
            cfg_seed = seed.child(idx)
            rng = cfg_seed.generator(10**6)
            P = sample_lkj(K, grid.lkj_eta, RngSeed(cfg_seed.seed, cfg_seed.stream + 7))
            sigma = rng.uniform(*grid.sigma_range, size=K)
            psi = sigma[:, None] * P * sigma[None, :]
            avg, ess = siw1_is_average(psi, nu, grid.draws, clip_size_for(grid.draws, grid.clip_exp),
                                       cfg_seed, _draw_stats)
            KK = K * K
            mean = avg[:KK].reshape(K, K)
            var = np.maximum(avg[KK:2 * KK].reshape(K, K) - mean ** 2, 0.0)
            out.append(ConfigSummary(float(nu), P, sigma, mean, var, avg[2 * KK:], ess))
            idx += 1
    return out


def _offdiag(mat):
    return mat[np.triu_indices(mat.shape[0], 1)]


def calibrate_siw_mean(K: int, grid: CalibrationGrid = CalibrationGrid(), seed=0, *,
                       summaries=None) -> float:
    """Least-squares slope through the origin of mean correlation on P."""
    summaries = summaries or run_calibration_configs(K, grid, seed)
    x = np.concatenate([_offdiag(s.P) for s in summaries])
    y = np.concatenate([_offdiag(s.corr_mean) for s in summaries])
    return float(np.dot(x, y) / np.dot(x, x))


def fit_variance_curve(nus, variances, n_grid: int = 400):
    """Fit ``a + exp(b*nu + c)`` by profiling the floor ``a`` over a grid."""
    nus = np.asarray(nus, dtype=float)
    v = np.asarray(variances, dtype=float)
    if np.unique(nus).size < 6:
        raise CalibrationError("variance fit needs at least 6 distinct nu values")
    if np.any(v <= 0):
        raise CalibrationError("variance estimates must be positive")
    best = None
    for a in np.linspace(0.0, v.min(), n_grid, endpoint=False):
        b, c = np.polyfit(nus, np.log(v - a), 1)
        sse = float(np.sum((a + np.exp(b * nus + c) - v) ** 2))
        if best is None or sse < best[0]:
            best = (sse, float(a), float(b), float(c))
    _, a, b, c = best
    if b >= 0:
        raise CalibrationError(f"fitted variance curve is not decreasing (b={b:.4g})")
    return a, b, c


def variance_by_nu(summaries):
    nus = sorted({s.nu for s in summaries})
    v = [np.mean([_offdiag(s.corr_var).mean() for s in summaries if s.nu == nu]) for nu in nus]
    return np.array(nus), np.array(v)


def calibrate_siw_var(K: int, grid: CalibrationGrid = CalibrationGrid(), seed=0, *,
                      summaries=None):
    summaries = summaries or run_calibration_configs(K, grid, seed)
    return fit_variance_curve(*variance_by_nu(summaries))


def fit_sigma_surface(summaries):
    points = []
    for nu in sorted({s.nu for s in summaries}):
        group = [s for s in summaries if s.nu == nu]
        x = np.concatenate([s.sigma for s in group])
        y = np.concatenate([s.diag_mean for s in group])
        slope, intercept = np.polyfit(x, y, 1)
        if slope <= 0:
            raise CalibrationError(f"sigma line at nu={nu} is not increasing")
        points.append(SigmaSurfacePoint(float(nu), float(intercept), float(slope)))
    return tuple(points)


def calibrate_sigma_surface(K: int, nus=DEFAULT_NU_GRID, seed=0, *,
                            grid: CalibrationGrid | None = None, summaries=None):
    if summaries is None:
        grid = grid or CalibrationGrid(nus=tuple(nus))
        summaries = run_calibration_configs(K, grid, seed)
    return fit_sigma_surface(summaries)


def calibrate(K: int, grid: CalibrationGrid = CalibrationGrid(), seed=0) -> CalibrationTable:
    """Run the full Monte Carlo calibration for dimension ``K``."""
    summaries = run_calibration_configs(K, grid, seed)
    a, b, c = calibrate_siw_var(K, grid, summaries=summaries)
    return CalibrationTable(
        K, calibrate_siw_mean(K, grid, summaries=summaries), a, b, c,
        fit_sigma_surface(summaries), tuple(grid.sigma_range),
        {"seed": as_seed(seed).seed, "draws": grid.draws, "configs_per_nu": grid.configs_per_nu,
         "clip_exp": grid.clip_exp, "nus": list(grid.nus)})
