"""Reading and writing datasets, posterior draws and run configuration."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DomainError, ParseError
from .linalg import compound_symmetry
from .samplers import as_seed, sample_mvn

SAMPLES_MAGIC = b"FCSAMP01"
_HEADER = struct.Struct("<8sQQ")


@dataclass
class Dataset:
    """Time series with one column per region.

    ``scale`` records the per-column factor applied on load (data were
    divided by it), so the original values are ``data * scale``.
    """

    data: np.ndarray
    labels: list[str]
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] < 2:
            raise DataError("dataset needs at least two columns")
        if not np.all(np.isfinite(self.data)):
            raise DataError("dataset contains non-finite values")
        if len(set(self.labels)) != len(self.labels) or len(self.labels) != self.data.shape[1]:
            raise DataError("column labels must be unique, one per column")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def K(self) -> int:
        return self.data.shape[1]

    def rescaled(self, target: float = 1.0) -> "Dataset":
        """Scale every column so its mean square equals ``target``."""
        if target <= 0:
            raise DomainError("target variance must be positive")
        ms = np.mean(self.data ** 2, axis=0)
        if np.any(ms <= 0):
            raise DataError("cannot rescale an all-zero column")
        factor = np.sqrt(ms / target)
        prior = np.ones(self.K) if self.scale is None else self.scale
        return Dataset(self.data / factor, list(self.labels), self.center, prior * factor)


def load_timeseries_csv(path, *, center: bool = False, rescale: float | None = None) -> Dataset:
    """Parse a CSV with a header of region labels and one time step per row."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path} is empty", row=1) from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise ParseError("duplicate column labels in header", row=1)
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=i)
            vals = []
            for j, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", row=i, column=j) from None
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path} has no data rows", row=2)
    data = np.array(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        raise DataError("dataset contains non-finite values")
    mu = None
    if center:
        mu = data.mean(axis=0)
        data = data - mu
    ds = Dataset(data, header, mu)
    return ds.rescaled(rescale) if rescale else ds


def write_timeseries_csv(path, data, labels=None) -> None:
    data = np.asarray(data, dtype=float)
    labels = labels or [f"r{k + 1}" for k in range(data.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(labels)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


def block_correlation(sizes, rho_in: float) -> np.ndarray:
    K = int(sum(sizes))
    R = np.eye(K)
    start = 0
    for s in sizes:
        R[start:start + s, start:start + s] = rho_in
        start += s
    np.fill_diagonal(R, 1.0)
    return R


def generator_correlation(K: int, kind: str, *, rho: float = 0.0, blocks=None) -> np.ndarray:
    """Correlation matrix for a named synthetic design."""
    if kind == "identity":
        return np.eye(K)
    if kind == "compound":
        return compound_symmetry(K, rho)
    if kind == "block":
        sizes = list(blocks) if blocks else [K // 2, K - K // 2]
        if sum(sizes) != K or min(sizes) < 1:
            raise DomainError(f"block sizes {sizes} do not sum to K={K}")
        R = block_correlation(sizes, rho)
        if np.linalg.eigvalsh(R)[0] <= 1e-10:
            raise DomainError("block correlation is not positive definite")
        return R
    raise DomainError(f"unknown generator {kind!r}")


def true_adjacency(R) -> np.ndarray:
    adj = (np.abs(R) > 0).astype(np.uint8)
    np.fill_diagonal(adj, 0)
    return adj


def simulate(K: int, n: int, kind: str = "identity", seed=0, out_path=None, *, rho: float = 0.0,
             blocks=None):
    """Gaussian series with unit variances; optionally written with an adjacency sidecar."""
    R = generator_correlation(K, kind, rho=rho, blocks=blocks)
    data = sample_mvn(R, n, as_seed(seed))
    if out_path is not None:
        out_path = Path(out_path)
        write_timeseries_csv(out_path, data)
        sidecar = {"K": K, "n": n, "generator": kind, "rho": rho,
                   "blocks": list(blocks) if blocks else None,
                   "seed": as_seed(seed).seed, "adjacency": true_adjacency(R).tolist()}
        truth_path(out_path).write_text(json.dumps(sidecar) + "\n", encoding="utf-8")
    return data, R


def truth_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".truth.json")


def write_samples(path, corr, labels=None) -> None:
    """Binary draw store: header (magic, K, N), N*K*K float64 LE, then N uint8 labels."""
    corr = np.ascontiguousarray(corr, dtype="<f8")
    N, K, _ = corr.shape
    labels = np.zeros(N, np.uint8) if labels is None else np.asarray(labels, np.uint8)
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(SAMPLES_MAGIC, K, N))
        fh.write(corr.tobytes())
        fh.write(labels.tobytes())


def read_samples(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path} is too short to be a sample file")
    magic, K, N = _HEADER.unpack_from(raw)
    if magic != SAMPLES_MAGIC:
        raise DataError(f"{path} is not a sample file")
    body = N * K * K * 8
    if len(raw) != _HEADER.size + body + N:
        raise DataError(f"{path} has the wrong length for N={N}, K={K}")
    corr = np.frombuffer(raw, "<f8", N * K * K, _HEADER.size).reshape(N, K, K).copy()
    labels = np.frombuffer(raw, np.uint8, N, _HEADER.size + body).copy()
    return corr, labels


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_moments_csv(path, mean, var, labels=None) -> None:
    K = mean.shape[0]
    labels = labels or [f"r{k + 1}" for k in range(K)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "k2", "label_k", "label_k2", "mean", "var"])
        for k in range(K):
            for j in range(k, K):
                w.writerow([k, j, labels[k], labels[j], repr(float(mean[k, j])), repr(float(var[k, j]))])


def read_moments_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    K = max(int(r["k2"]) for r in rows) + 1
    mean = np.zeros((K, K))
    var = np.zeros((K, K))
    for r in rows:
        k, j = int(r["k"]), int(r["k2"])
        mean[k, j] = mean[j, k] = float(r["mean"])
        var[k, j] = var[j, k] = float(r["var"])
    return mean, var
