"""Prior families over covariance matrices and their induced-correlation moments.

Scales use the correlation-variance form ``Psi = diag(sigma) @ P @ diag(sigma)``
so that ``Psi[k, k] == sigma[k] ** 2``. ``sigma`` may be left as ``None`` after
elicitation and filled in later from data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import multigammaln

from .errors import (CalibrationRequired, DegenerateSpectrum, DomainError, InvalidInput,
                     MomentUndefined)
from .linalg import check_covariance, check_symmetric


def _check_correlation(P) -> np.ndarray:
    P = check_symmetric(P, "correlation matrix", rtol=1e-10)
    if P.shape[0] < 2:
        raise InvalidInput("dimension must be at least 2")
    if np.max(np.abs(np.diag(P) - 1.0)) > 1e-10:
        raise InvalidInput("correlation matrix must have unit diagonal")
    if np.max(np.abs(P)) > 1.0 + 1e-12:
        raise InvalidInput("correlations must lie in [-1, 1]")
    P = P.copy()
    np.fill_diagonal(P, 1.0)
    return P


def _check_sigma(sigma, K):
    if sigma is None:
        return None
    s = np.asarray(sigma, dtype=float).reshape(-1)
    if s.size == 1:
        s = np.full(K, float(s[0]))
    if s.size != K:
        raise InvalidInput(f"sigma must have {K} entries, got {s.size}")
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise InvalidInput("sigma entries must be positive and finite")
    return s


@dataclass(frozen=True, eq=False)
class _ScaleParams:
    P: np.ndarray
    sigma: np.ndarray | None
    nu: float

    def __post_init__(self):
        P = _check_correlation(self.P)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "sigma", _check_sigma(self.sigma, P.shape[0]))
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    @property
    def scale(self) -> np.ndarray:
        if self.sigma is None:
            raise DomainError("sigma has not been set for these parameters")
        return self.sigma[:, None] * self.P * self.sigma[None, :]

    def with_sigma(self, sigma):
        return replace(self, sigma=sigma)

    @classmethod
    def from_scale(cls, psi, nu):
        psi = check_covariance(psi, "scale matrix")
        s = np.sqrt(np.diag(psi))
        P = psi / np.outer(s, s)
        np.fill_diagonal(P, 1.0)
        return cls(P, s, nu)

    def to_dict(self) -> dict:
        return {"P": self.P.tolist(),
                "sigma": None if self.sigma is None else self.sigma.tolist(),
                "nu": self.nu}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["P"], dtype=float), d.get("sigma"), d["nu"])


@dataclass(frozen=True, eq=False)
class IwParams(_ScaleParams):
    """Inverse-Wishart hyperparameters; the law needs ``nu > K - 1``."""

    def __post_init__(self):
        super().__post_init__()
        if self.nu <= self.dim - 1:
            raise DomainError(f"inverse-Wishart needs nu > K-1 = {self.dim - 1}, got {self.nu}")


@dataclass(frozen=True, eq=False)
class Siw1Params(_ScaleParams):
    """Shrinkage inverse-Wishart (b = 1) hyperparameters."""


@dataclass(frozen=True, eq=False)
class MixtureParams:
    eta: float
    iw: IwParams
    siw: Siw1Params

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise DomainError(f"mixture weight must lie in [0, 1], got {self.eta}")
        if self.iw.dim != self.siw.dim:
            raise InvalidInput("mixture components differ in dimension")

    @property
    def dim(self) -> int:
        return self.iw.dim


def iw_scale(params) -> np.ndarray:
    return params.scale


def log_iw_normalizer(psi, nu: float) -> float:
    """Log of the constant c with density c |S|^{-(nu+K+1)/2} exp(-tr(psi S^-1)/2)."""
    K = psi.shape[0]
    _, logdet = np.linalg.slogdet(psi)
    return 0.5 * nu * logdet - 0.5 * nu * K * math.log(2.0) - multigammaln(0.5 * nu, K)


def _logdet_and_trace(cov, psi):
    cov = np.asarray(cov, dtype=float)
    sign, logdet = np.linalg.slogdet(cov)
    if np.any(sign <= 0):
        raise DomainError("covariance must be positive definite")
    trace = np.trace(np.linalg.solve(cov, np.broadcast_to(psi, cov.shape)), axis1=-2, axis2=-1)
    return logdet, trace


def iw_log_density_scale(cov, psi, nu: float):
    """Normalized inverse-Wishart log-density for a raw scale matrix (any K >= 1)."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    K = psi.shape[0]
    if nu <= K - 1:
        raise DomainError(f"inverse-Wishart needs nu > K-1 = {K - 1}")
    logdet, trace = _logdet_and_trace(cov, psi)
    return log_iw_normalizer(psi, nu) - 0.5 * (nu + K + 1) * logdet - 0.5 * trace


def iw_log_density(cov, params: IwParams):
    """Normalized inverse-Wishart log-density; accepts a stack of matrices."""
    return iw_log_density_scale(cov, params.scale, params.nu)


def siw1_log_kernel(cov, params: Siw1Params) -> float:
    """Unnormalized SIW_1 log-density of one covariance matrix."""
    cov = check_symmetric(cov, "covariance", rtol=1e-10)
    lam = np.linalg.eigvalsh(cov)[::-1]
    if lam[-1] <= 0:
        raise DomainError("covariance must be positive definite")
    gaps = lam[:, None] - lam[None, :]
    iu = np.triu_indices(lam.size, 1)
    gaps = gaps[iu]
    if np.any(gaps <= 1e-12 * lam[0]):
        raise DegenerateSpectrum("eigenvalues are tied; kernel undefined")
    trace = float(np.trace(np.linalg.solve(cov, params.scale)))
    return -0.5 * trace - params.nu * float(np.sum(np.log(lam))) - float(np.sum(np.log(gaps)))


def _off_diag_mask(K):
    return ~np.eye(K, dtype=bool)


def iw_corr_moments(params, *, leading: bool = False):
    """Approximate mean and variance matrices of the induced correlations.

    With ``leading=True`` the mean is taken as ``P`` itself, the form that the
    elicitation rule inverts.
    """
    K, nu, P = params.dim, params.nu, params.P
    if nu <= K + 3:
        raise MomentUndefined(f"correlation moments need nu > K+3 = {K + 3}, got {nu}")
    one_minus = 1.0 - P ** 2
    mean = P.copy() if leading else P * (1.0 - one_minus / (2.0 * (nu - K + 2)))
    var = one_minus ** 2 / (nu - K + 1)
    np.fill_diagonal(mean, 1.0)
    np.fill_diagonal(var, 0.0)
    return mean, var


@dataclass(frozen=True)
class SigmaSurfacePoint:
    nu: float
    intercept: float
    slope: float


@dataclass(frozen=True)
class CalibrationTable:
    """Fitted SIW_1 moment constants for one dimension.

    Mean correlation is ``slope * P``; pairwise variance is
    ``var_a + exp(var_b * nu + var_c)``; ``sigma_surface`` maps sigma to the
    expected diagonal of Sigma at each listed ``nu`` by a straight line.
    """

    K: int
    slope: float
    var_a: float
    var_b: float
    var_c: float
    sigma_surface: tuple[SigmaSurfacePoint, ...] = ()
    sigma_range: tuple[float, float] = (0.5, 10.0)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0.0 < self.slope < 1.0:
            raise DomainError("calibrated mean slope must lie in (0, 1)")
        if self.var_a < 0:
            raise DomainError("variance floor must be non-negative")
        pts = tuple(sorted(self.sigma_surface, key=lambda p: p.nu))
        object.__setattr__(self, "sigma_surface", pts)

    def variance(self, nu: float) -> float:
        return self.var_a + math.exp(self.var_b * nu + self.var_c)

    def sigma_map(self, nu: float) -> tuple[float, float]:
        """Intercept and slope of the sigma line at ``nu``, linear in nu between grid points."""
        pts = self.sigma_surface
        if not pts:
            raise CalibrationRequired(f"no sigma surface calibrated for K={self.K}")
        nus = np.array([p.nu for p in pts])
        if nu < nus[0] - 1e-9 or nu > nus[-1] + 1e-9:
            raise CalibrationRequired(
                f"nu={nu} outside calibrated sigma surface range [{nus[0]}, {nus[-1]}]")
        icp = float(np.interp(nu, nus, [p.intercept for p in pts]))
        slp = float(np.interp(nu, nus, [p.slope for p in pts]))
        return icp, slp

    def reachable_floor(self, nu: float) -> float:
        """Smallest expected variance reachable with sigma inside ``sigma_range``."""
        intercept, slope = self.sigma_map(nu)
        return intercept + slope * self.sigma_range[0]

    def to_dict(self) -> dict:
        d = {"K": self.K, "slope": self.slope, "var_a": self.var_a, "var_b": self.var_b,
             "var_c": self.var_c,
             "sigma_surface": [{"nu": p.nu, "intercept": p.intercept, "slope": p.slope}
                               for p in self.sigma_surface],
             "sigma_range": list(self.sigma_range)}
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d) -> "CalibrationTable":
        try:
            surface = tuple(SigmaSurfacePoint(float(p["nu"]), float(p["intercept"]), float(p["slope"]))
                            for p in d.get("sigma_surface", []))
            return cls(int(d["K"]), float(d["slope"]), float(d["var_a"]), float(d["var_b"]),
                       float(d["var_c"]), surface, tuple(d.get("sigma_range", (0.5, 10.0))),
                       dict(d.get("meta", {})))
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed calibration table: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def default_calibration(K: int) -> CalibrationTable:
    """Shipped calibration for ``K`` (only K=20 is bundled)."""
    name = f"calibration_K{K}.json"
    ref = resources.files("bayesfc").joinpath("data", name)
    if not ref.is_file():
        raise CalibrationRequired(f"no bundled calibration for K={K}; run `bayesfc calibrate --dim {K}`")
    return CalibrationTable.from_dict(json.loads(ref.read_text(encoding="utf-8")))


def _require_calibration(K, calib):
    if calib is None:
        calib = default_calibration(K)
    if calib.K != K:
        raise CalibrationRequired(f"calibration is for K={calib.K}, parameters have K={K}")
    return calib


def siw1_corr_moments(params, calib: CalibrationTable | None = None):
    """Calibrated mean matrix and pair-independent variance of SIW_1 correlations."""
    calib = _require_calibration(params.dim, calib)
    if params.nu <= 3:
        raise MomentUndefined(f"SIW_1 variance curve needs nu > 3, got {params.nu}")
    mean = calib.slope * params.P
    np.fill_diagonal(mean, 1.0)
    return mean, calib.variance(params.nu)


def mixture_corr_moments(params: MixtureParams, calib: CalibrationTable | None = None, *,
                         eta: float | None = None, literal: bool = False):
    """Mean and variance matrices of correlations under the two-component mixture.

    The default combines the component moments by the law of total variance,
    using the leading-order IW mean. ``literal=True`` instead uses the shorter
    K=20 form ``eta/(nu0-19) + (1-eta) V1 + eta(1-eta) P0^2``.
    """
    eta = params.eta if eta is None else eta
    K = params.dim
    calib = _require_calibration(K, calib)
    if params.iw.nu <= K + 3:
        raise MomentUndefined(f"IW component needs nu > K+3 = {K + 3}")
    mean0, var0 = iw_corr_moments(params.iw, leading=True)
    mean1, var1 = siw1_corr_moments(params.siw, calib)
    mean = eta * mean0 + (1 - eta) * mean1
    if literal:
        if K != 20:
            raise DomainError("the literal mixture variance form is specific to K=20")
        var = eta / (params.iw.nu - 19) + (1 - eta) * var1 + eta * (1 - eta) * params.iw.P ** 2
    else:
        var = eta * var0 + (1 - eta) * var1 + eta * (1 - eta) * (mean0 - mean1) ** 2
    np.fill_diagonal(mean, 1.0)
    np.fill_diagonal(var, 0.0)
    return mean, var
