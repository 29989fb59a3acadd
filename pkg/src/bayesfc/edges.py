"""Credible-interval edge detection on posterior correlation draws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError
from .inference import (ISConfig, PosteriorState, posterior_mean_correlation,
                        stream_batch_means)
from .linalg import hpd_bounds
from .samplers import as_seed


@dataclass(frozen=True)
class EdgeGraph:
    K: int
    prob: float
    method: str
    lo: np.ndarray
    hi: np.ndarray

    @property
    def adjacency(self) -> np.ndarray:
        adj = ((self.lo > 0) | (self.hi < 0)).astype(np.uint8)
        np.fill_diagonal(adj, 0)
        return adj

    def edges(self):
        adj = self.adjacency
        return [(k, j, float(self.lo[k, j]), float(self.hi[k, j]), bool(adj[k, j]))
                for k, j in zip(*np.triu_indices(self.K, 1))]

    def to_dict(self) -> dict:
        return {"K": self.K, "prob": self.prob, "method": self.method,
                "edges": [[int(k), int(j), lo, hi, sig] for k, j, lo, hi, sig in self.edges()],
                "adjacency": self.adjacency.tolist()}

    @classmethod
    def from_dict(cls, d) -> "EdgeGraph":
        K = int(d["K"])
        lo = np.zeros((K, K))
        hi = np.zeros((K, K))
        for k, j, a, b, _ in d["edges"]:
            lo[k, j] = lo[j, k] = a
            hi[k, j] = hi[j, k] = b
        return cls(K, float(d["prob"]), d["method"], lo, hi)


def _pair_intervals(values: np.ndarray, K: int, prob: float):
    """HPD bounds for a (draws, pairs) array, scattered into symmetric matrices."""
    lo_p, hi_p = hpd_bounds(np.sort(values.T, axis=1), prob)
    lo = np.ones((K, K))
    hi = np.ones((K, K))
    iu = np.triu_indices(K, 1)
    lo[iu] = lo_p
    hi[iu] = hi_p
    lo.T[iu] = lo_p
    hi.T[iu] = hi_p
    return lo, hi


def _upper_pairs(corr: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(corr.shape[-1], 1)
    return corr[:, iu[0], iu[1]]


def _corr_array(samples) -> np.ndarray:
    return samples.corr if hasattr(samples, "corr") else np.asarray(samples, dtype=float)


def detect_edges_direct(samples, prob: float = 0.9, *, min_samples: int = 500) -> EdgeGraph:
    """Edge wherever the shortest ``prob`` interval of a pair excludes zero."""
    corr = _corr_array(samples)
    if not 0 < prob < 1:
        raise DomainError("prob must lie in (0, 1)")
    if corr.shape[0] < min_samples:
        raise DataError(f"need at least {min_samples} draws, got {corr.shape[0]}")
    K = corr.shape[-1]
    lo, hi = _pair_intervals(_upper_pairs(corr), K, prob)
    return EdgeGraph(K, prob, "direct", lo, hi)


@dataclass(frozen=True)
class BatchEstimates:
    values: np.ndarray  # (L, K, K) transformed batch means
    batch_size: int
    overall_mean: np.ndarray


def transform_batch_means(batch_means, S: int, overall_mean) -> np.ndarray:
    # same as sqrt(S)(b - m) + m, written so that S=1 returns b bit-for-bit
    return batch_means + (math.sqrt(S) - 1.0) * (batch_means - overall_mean)


def batch_clt_transform(samples, L: int, S: int, overall_mean, *,
                        min_batch_size: int = 30) -> BatchEstimates:
    """Recentered, sqrt(S)-scaled batch means: sqrt(S)(batch mean - mean) + mean.

    The result keeps the overall mean and the per-draw variance but has a
    near-Gaussian shape even when the draws are multimodal.
    """
    corr = _corr_array(samples)
    if S < min_batch_size:
        raise DataError(f"batch size must be at least {min_batch_size}, got {S}")
    if L < 1:
        raise DataError("need at least one batch")
    if L * S > corr.shape[0]:
        raise DataError(f"need {L * S} draws for {L} batches of {S}, got {corr.shape[0]}")
    overall_mean = np.asarray(overall_mean, dtype=float)
    batch = corr[: L * S].reshape((L, S) + corr.shape[1:]).mean(axis=1)
    return BatchEstimates(transform_batch_means(batch, S, overall_mean), S, overall_mean)


@dataclass(frozen=True)
class DetectConfig:
    M: int = 10_000
    clip_exp: float = 0.6
    L: int = 1000
    S: int = 500
    prob: float = 0.9
    mean_source: str = "reuse"  # or "separate": independent posterior-mean run

    def __post_init__(self):
        if self.mean_source not in ("reuse", "separate"):
            raise DomainError(f"mean_source must be 'reuse' or 'separate', got {self.mean_source!r}")


def detect_edges_mixture(state: PosteriorState, config: DetectConfig = DetectConfig(), seed=0, *,
                         overall_mean=None) -> EdgeGraph:
    """Batch-mean edge detection for mixture posteriors.

    Streams ``L*S`` posterior draws (the same draws ``sample_posterior_correlations``
    would return for this seed), reduces them to ``L`` transformed batch
    means and applies the shortest-interval rule to those.

    The centring mean is, in order of preference: ``overall_mean`` if given,
    the mean of the streamed draws (``mean_source="reuse"``), or an
    independent ``posterior_mean_correlation`` run (``"separate"``). Any
    offset between the centring mean and the draws is multiplied by
    ``sqrt(S) - 1``, so a separate run only helps when its Monte Carlo
    error and clipping bias are far below the batch-mean spread.
    """
    seed = as_seed(seed)
    if config.S < 30:
        raise DataError(f"batch size must be at least 30, got {config.S}")
    means = stream_batch_means(state, config.L, config.S, ISConfig(config.M, config.clip_exp),
                               seed.child(10))
    if overall_mean is None:
        if config.mean_source == "separate":
            overall_mean = posterior_mean_correlation(state, seed.child(11))
        else:
            overall_mean = means.mean(axis=0)
    values = transform_batch_means(means, config.S, np.asarray(overall_mean, dtype=float))
    lo, hi = _pair_intervals(_upper_pairs(values), state.dim, config.prob)
    return EdgeGraph(state.dim, config.prob, "batch-clt", lo, hi)


def half_sample_mode(x) -> float:
    """Robust mode estimate by repeatedly keeping the densest half of the sample."""
    y = np.sort(np.asarray(x, dtype=float).ravel())
    if y.size == 0:
        raise DataError("empty sample")
    while y.size > 3:
        h = math.ceil(y.size / 2)
        widths = y[h - 1:] - y[: y.size - h + 1]
        i = int(np.argmin(widths))
        y = y[i:i + h]
    if y.size == 3:
        left, right = y[1] - y[0], y[2] - y[1]
        if left < right:
            return float((y[0] + y[1]) / 2)
        if right < left:
            return float((y[1] + y[2]) / 2)
        return float(y[1])
    return float(np.mean(y))


def posterior_mode_matrix(samples) -> np.ndarray:
    corr = _corr_array(samples)
    K = corr.shape[-1]
    out = np.eye(K)
    for k, j in zip(*np.triu_indices(K, 1)):
        out[k, j] = out[j, k] = half_sample_mode(corr[:, k, j])
    return out
