"""Seeded random generation.

Every sampler draws in fixed-size chunks and each chunk gets its own
substream derived from ``(seed, stream, chunk index)``. The output therefore
depends only on the seed and the requested count, never on how the work is
split between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .errors import DomainError, NotPositiveDefinite
from .linalg import check_covariance

CHUNK = 4096


@dataclass(frozen=True)
class RngSeed:
    seed: int = 0
    stream: int = 0

    def generator(self, chunk: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), int(chunk)))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RngSeed":
        """Independent substream; used to give each pipeline stage its own draws."""
        return RngSeed(self.seed, self.stream * 1_000_003 + int(stream) + 1)


def as_seed(seed) -> RngSeed:
    if isinstance(seed, RngSeed):
        return seed
    if seed is None:
        return RngSeed(int(np.random.SeedSequence().entropy % (2**63)))
    return RngSeed(int(seed))


def chunks(n: int, seed, chunk_size: int = CHUNK) -> Iterator[tuple[int, np.random.Generator]]:
    """Yield ``(count, rng)`` pairs covering ``n`` draws."""
    seed = as_seed(seed)
    if n < 0:
        raise DomainError("sample count must be non-negative")
    for i, start in enumerate(range(0, n, chunk_size)):
        yield min(chunk_size, n - start), seed.generator(i)


def _collect(parts, shape_tail) -> np.ndarray:
    parts = list(parts)
    if not parts:
        return np.empty((0,) + tuple(shape_tail))
    return np.concatenate(parts, axis=0)


def sample_mvn(cov, n: int, seed) -> np.ndarray:
    """``n`` rows of zero-mean Gaussian vectors with covariance ``cov``."""
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not positive definite") from exc
    K = cov.shape[0]
    parts = (rng.standard_normal((m, K)) @ chol.T for m, rng in chunks(n, seed))
    return _collect(parts, (K,))


def _bartlett_inverse(m: int, K: int, nu: float, rng) -> np.ndarray:
    """Inverses of lower Bartlett factors for ``m`` identity-scale Wishart draws."""
    A = np.zeros((m, K, K))
    rows, cols = np.tril_indices(K, -1)
    A[:, rows, cols] = rng.standard_normal((m, rows.size))
    idx = np.arange(K)
    A[:, idx, idx] = np.sqrt(rng.chisquare(nu - idx, size=(m, K)))
    return np.linalg.inv(A)


def iter_iw(psi, nu: float, n: int, seed, chunk_size: int = CHUNK) -> Iterator[np.ndarray]:
    psi = check_covariance(psi, "scale matrix")
    K = psi.shape[0]
    if nu <= K - 1:
        raise DomainError(f"inverse-Wishart needs nu > K-1 = {K - 1}, got {nu}")
    chol = np.linalg.cholesky(psi)
    for m, rng in chunks(n, seed, chunk_size):
        # Sigma^-1 = L^-T A A^T L^-1 is Wishart(psi^-1, nu); invert via the triangular factor
        C = chol @ np.swapaxes(_bartlett_inverse(m, K, nu, rng), -1, -2)
        yield C @ np.swapaxes(C, -1, -2)


def sample_iw_scale(psi, nu: float, n: int, seed) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    return _collect(iter_iw(psi, nu, n, seed), psi.shape)


def sample_iw(params, n: int, seed) -> np.ndarray:
    """Draws from the inverse-Wishart prior described by ``params`` (an ``IwParams``)."""
    return sample_iw_scale(params.scale, params.nu, n, seed)


def haar_from_gaussian(G: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    return Q * signs[..., None, :]


def sample_haar_orthogonal(K: int, seed, size: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal matrices (QR of a Gaussian matrix, signs fixed)."""
    if K < 1:
        raise DomainError("K must be positive")
    n = 1 if size is None else size
    parts = (haar_from_gaussian(rng.standard_normal((m, K, K))) for m, rng in chunks(n, seed))
    out = _collect(parts, (K, K))
    return out[0] if size is None else out


def sample_inverse_gamma(shape: float, rate: float, seed, size: int | None = None):
    """Inverse-gamma draws with density proportional to x^(-shape-1) exp(-rate/x)."""
    if shape <= 0 or rate <= 0:
        raise DomainError("inverse-gamma shape and rate must be positive")
    n = 1 if size is None else size
    out = _collect((rate / rng.gamma(shape, size=m) for m, rng in chunks(n, seed)), ())
    return float(out[0]) if size is None else out


def _onion(K: int, eta: float, rng) -> np.ndarray:
    beta = eta + (K - 2) / 2.0
    R = np.eye(K)
    r = 2.0 * rng.beta(beta, beta) - 1.0
    R[0, 1] = R[1, 0] = r
    for k in range(2, K):
        beta -= 0.5
        y = rng.beta(k / 2.0, beta)
        u = rng.standard_normal(k)
        u /= np.linalg.norm(u)
        z = np.linalg.cholesky(R[:k, :k]) @ (np.sqrt(y) * u)
        R[:k, k] = z
        R[k, :k] = z
    return R


def sample_lkj(K: int, eta: float, seed, size: int | None = None) -> np.ndarray:
    """LKJ(eta) correlation matrices by the onion construction."""
    if eta <= 0:
        raise DomainError("LKJ eta must be positive")
    if K < 2:
        raise DomainError("K must be at least 2")
    n = 1 if size is None else size
    parts = (np.stack([_onion(K, eta, rng) for _ in range(m)]) for m, rng in chunks(n, seed, 256))
    out = _collect(parts, (K, K))
    return out[0] if size is None else out


def iter_siw1_identity(scale: float, nu: float, K: int, n: int, seed,
                       chunk_size: int = CHUNK) -> Iterator[np.ndarray]:
    if nu <= 1:
        raise DomainError("SIW_1 identity sampler needs nu > 1")
    if scale <= 0:
        raise DomainError("scale must be positive")
    for m, rng in chunks(n, seed, chunk_size):
        U = haar_from_gaussian(rng.standard_normal((m, K, K)))
        lam = (scale / 2.0) / rng.gamma(nu - 1.0, size=(m, K))
        yield (U * lam[:, None, :]) @ np.swapaxes(U, -1, -2)


def sample_siw1_identity(scale: float, nu: float, K: int, n: int, seed) -> np.ndarray:
    """Exact SIW_1 draws when the scale matrix is ``scale * I``."""
    return _collect(iter_siw1_identity(scale, nu, K, n, seed), (K, K))


@dataclass(frozen=True)
class ImportanceEnsemble:
    """Proposal draws for SIW_1 with their importance log-weights.

    ``frames[m]`` holds eigenvectors as columns ordered so that ``eigvals[m]``
    is non-increasing. ``raw_log_w`` omits the draw-independent constant
    ``K * log Gamma(nu - 1)``.
    """

    frames: np.ndarray
    eigvals: np.ndarray
    raw_log_w: np.ndarray
    clipped_log_w: np.ndarray
    norm_w: np.ndarray
    clip_size: int

    @property
    def size(self) -> int:
        return self.raw_log_w.shape[0]

    @property
    def dim(self) -> int:
        return self.eigvals.shape[1]

    def covariances(self, index=None) -> np.ndarray:
        F = self.frames if index is None else self.frames[index]
        L = self.eigvals if index is None else self.eigvals[index]
        return (F * L[..., None, :]) @ np.swapaxes(F, -1, -2)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.norm_w ** 2))


def siw1_proposal_chunk(psi: np.ndarray, nu: float, m: int, rng):
    """One chunk of proposal draws: ``(frames, eigvals, raw_log_w)``."""
    K = psi.shape[0]
    G = haar_from_gaussian(rng.standard_normal((m, K, K)))
    # half the quadratic form of each frame column with psi
    half_quad = 0.5 * np.einsum("mik,ij,mjk->mk", G, psi, G)
    lam = half_quad / rng.gamma(nu - 1.0, size=(m, K))
    raw = -(nu - 1.0) * np.sum(np.log(half_quad), axis=1)
    order = np.argsort(-lam, axis=1)
    lam = np.take_along_axis(lam, order, axis=1)
    G = np.take_along_axis(G, order[:, None, :], axis=2)
    return G, lam, raw


def iter_siw1_proposals(psi, nu: float, M: int, seed, chunk_size: int = CHUNK):
    psi = check_covariance(psi, "scale matrix")
    if nu <= 1:
        raise DomainError("SIW_1 proposal needs nu > 1")
    for m, rng in chunks(M, seed, chunk_size):
        yield siw1_proposal_chunk(psi, nu, m, rng)


def siw1_proposal_ensemble(params, M: int, seed) -> ImportanceEnsemble:
    """Build ``M`` unclipped proposal draws for ``params`` (a ``Siw1Params``)."""
    if M < 1:
        raise DomainError("ensemble size must be at least 1")
    parts = list(iter_siw1_proposals(params.scale, params.nu, M, seed))
    frames = np.concatenate([p[0] for p in parts])
    eigvals = np.concatenate([p[1] for p in parts])
    raw = np.concatenate([p[2] for p in parts])
    return ImportanceEnsemble(frames, eigvals, raw, raw.copy(), normalize_log_weights(raw), 1)


def clip_log_weights(raw_log_w, clip_size: int) -> np.ndarray:
    """Flatten every log-weight above the ``clip_size``-th largest down to it."""
    raw = np.asarray(raw_log_w, dtype=float)
    M = raw.size
    if not 1 <= clip_size <= M:
        raise DomainError(f"clip size must lie in [1, {M}], got {clip_size}")
    threshold = np.partition(raw, M - clip_size)[M - clip_size]
    return np.minimum(raw, threshold)


def normalize_log_weights(log_w) -> np.ndarray:
    log_w = np.asarray(log_w, dtype=float)
    w = np.exp(log_w - np.max(log_w))
    return w / np.sum(w)


def clip_size_for(M: int, exponent: float) -> int:
    return int(min(M, max(1, round(M ** exponent))))


def clip_and_normalize(ensemble: ImportanceEnsemble, clip_size: int) -> ImportanceEnsemble:
    clipped = clip_log_weights(ensemble.raw_log_w, clip_size)
    return replace(ensemble, clipped_log_w=clipped, norm_w=normalize_log_weights(clipped),
                   clip_size=int(clip_size))


def resample_indices(weights, count: int, seed) -> np.ndarray:
    p = np.asarray(weights, dtype=float)
    p = p / p.sum()
    rng = as_seed(seed).generator()
    return rng.choice(p.size, size=count, replace=True, p=p)


def importance_resample(ensemble: ImportanceEnsemble, count: int, seed) -> np.ndarray:
    """Multinomial resampling of ensemble covariances by normalized weight."""
    return ensemble.covariances(resample_indices(ensemble.norm_w, count, seed))


def siw1_is_average(psi, nu: float, M: int, clip_size: int, seed, fn, chunk_size: int = CHUNK):
    """Clipped self-normalized IS average of ``fn(covariances)`` under SIW_1.

    Runs two passes over the same seeded chunks: the first collects the raw
    log-weights to fix the clipping threshold, the second accumulates
    weighted sums, so memory stays at one chunk. Returns the average and the
    effective sample size of the clipped weights.
    """
    raw = np.concatenate([c[2] for c in iter_siw1_proposals(psi, nu, M, seed, chunk_size)])
    clipped = clip_log_weights(raw, clip_size)
    w = normalize_log_weights(clipped)
    total = None
    start = 0
    for frames, lam, _ in iter_siw1_proposals(psi, nu, M, seed, chunk_size):
        m = lam.shape[0]
        covs = (frames * lam[:, None, :]) @ np.swapaxes(frames, -1, -2)
        vals = np.asarray(fn(covs))
        part = np.tensordot(w[start:start + m], vals, axes=(0, 0))
        total = part if total is None else total + part
        start += m
    return total, float(1.0 / np.sum(w ** 2))
