"""Configuration handling and the end-to-end run: elicit, fit, summarize, detect, score."""

from __future__ import annotations

import hashlib
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .edges import (DetectConfig, EdgeGraph, detect_edges_direct, detect_edges_mixture,
                    posterior_mode_matrix)
from .elicitation import (ElicitationTarget, elicit_iw, elicit_mixture, elicit_siw1,
                          sigma_empirical_iw, sigma_match_siw1)
from .errors import BayesFCError, ConfigError
from .inference import (ISConfig, PosteriorState, fixed_weight_posterior, iw_state,
                        mixture_posterior, model_score_elpd, posterior_corr_moments,
                        posterior_mean_correlation, sample_posterior_correlations, siw_state)
from .io import Dataset, load_timeseries_csv, read_json, write_json, write_moments_csv, write_samples
from .linalg import SufficientStats, compound_symmetry, sufficient_stats
from .priors import CalibrationTable, IwParams, MixtureParams, Siw1Params, _require_calibration
from .samplers import RngSeed

MODELS = ("iw", "siw", "mixture", "fixed-mixture")
_TARGET_KEYS = {"mean", "var"}
_EXPLICIT_KEYS = {"rho", "P", "nu"}


def _section(cfg, name, allowed):
    d = cfg.get(name) or {}
    if not isinstance(d, dict):
        raise ConfigError(f"'{name}' must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return d


@dataclass
class RunConfig:
    """Parsed run configuration (see README for the JSON layout)."""

    model: str = "iw"
    seed: int = 0
    iw: dict = field(default_factory=dict)
    siw: dict = field(default_factory=dict)
    mixture: dict = field(default_factory=dict)
    eta: float = 0.5
    sigma: dict = field(default_factory=lambda: {"iw": "empirical", "siw": "siw-match"})
    calibration: str | None = None
    data: dict = field(default_factory=dict)
    is_config: ISConfig = field(default_factory=ISConfig)
    posterior: dict = field(default_factory=lambda: {"iw_draws": 1000, "siw_M": 50_000,
                                                     "siw_clip_exp": 0.8, "store_draws": 10_000})
    detect: DetectConfig = field(default_factory=DetectConfig)
    score_draws: int = 1000

    @classmethod
    def from_dict(cls, cfg: dict) -> "RunConfig":
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {"model", "seed", "iw", "siw", "mixture", "eta", "sigma", "calibration", "data",
                   "is", "posterior", "detect", "score"}
        unknown = set(cfg) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        out = cls()
        out.model = cfg.get("model", "iw")
        if out.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {out.model!r}")
        out.seed = int(cfg.get("seed", 0))
        comp_keys = _TARGET_KEYS | _EXPLICIT_KEYS
        out.iw = _section(cfg, "iw", comp_keys)
        out.siw = _section(cfg, "siw", comp_keys)
        out.mixture = _section(cfg, "mixture", {"mean", "var", "rho1", "nu1"})
        out.eta = float(cfg.get("eta", 0.5))
        sigma = _section(cfg, "sigma", {"iw", "siw"})
        out.sigma = {"iw": sigma.get("iw", "empirical"), "siw": sigma.get("siw", "siw-match")}
        out.calibration = cfg.get("calibration")
        out.data = _section(cfg, "data", {"center", "rescale", "sigma_target"})
        isd = _section(cfg, "is", {"M", "clip_exp", "rao_blackwell"})
        try:
            out.is_config = ISConfig(int(isd.get("M", 500_000)), float(isd.get("clip_exp", 0.9)),
                                     bool(isd.get("rao_blackwell", False)))
            post = _section(cfg, "posterior", {"iw_draws", "siw_M", "siw_clip_exp", "store_draws"})
            out.posterior.update(post)
            det = _section(cfg, "detect", {"prob", "M", "clip_exp", "L", "S", "mean_source"})
            out.detect = DetectConfig(int(det.get("M", 10_000)), float(det.get("clip_exp", 0.6)),
                                      int(det.get("L", 1000)), int(det.get("S", 500)),
                                      float(det.get("prob", 0.9)), det.get("mean_source", "reuse"))
            out.score_draws = int(_section(cfg, "score", {"draws"}).get("draws", 1000))
        except (TypeError, ValueError, BayesFCError) as exc:
            raise ConfigError(str(exc)) from exc
        out._validate()
        return out

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(read_json(path))

    def _validate(self):
        needs = {"iw": ["iw"], "siw": ["siw"], "mixture": ["iw", "siw"],
                 "fixed-mixture": ["iw", "siw"]}[self.model]
        if self.model in ("mixture", "fixed-mixture") and self.mixture:
            if self.iw.keys() & _TARGET_KEYS or self.siw.keys() & _TARGET_KEYS:
                raise ConfigError("use either a 'mixture' target or per-component targets, not both")
            needs = []
        for name in needs:
            comp = getattr(self, name)
            has_target = bool(comp.keys() & _TARGET_KEYS)
            has_explicit = bool(comp.keys() & {"rho", "P"})
            if has_target == has_explicit:
                raise ConfigError(f"'{name}' needs exactly one of targets (mean, var) "
                                  f"or explicit hyperparameters (rho or P, nu)")
            if has_target and not _TARGET_KEYS <= comp.keys():
                raise ConfigError(f"'{name}' target needs both mean and var")
            if has_explicit and "nu" not in comp:
                raise ConfigError(f"'{name}' explicit hyperparameters need nu")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"model": self.model, "seed": self.seed, "iw": self.iw, "siw": self.siw,
                "mixture": self.mixture, "eta": self.eta, "sigma": self.sigma,
                "calibration": self.calibration, "data": self.data,
                "is": {"M": self.is_config.M, "clip_exp": self.is_config.clip_exp,
                       "rao_blackwell": self.is_config.rao_blackwell},
                "posterior": self.posterior,
                "detect": {"prob": self.detect.prob, "M": self.detect.M,
                           "clip_exp": self.detect.clip_exp, "L": self.detect.L, "S": self.detect.S,
                           "mean_source": self.detect.mean_source},
                "score": {"draws": self.score_draws}}

    def load_calibration(self, K: int) -> CalibrationTable | None:
        if self.model == "iw":
            return None
        table = CalibrationTable.load(self.calibration) if self.calibration else None
        return _require_calibration(K, table)


def _component(section: dict, K: int, family, calib):
    if "mean" in section:
        mean = section["mean"]
        mean = np.asarray(mean, dtype=float) if isinstance(mean, list) else float(mean)
        target = ElicitationTarget(mean, float(section["var"]), K)
        return elicit_iw(target) if family is IwParams else elicit_siw1(target, calib)
    P = np.asarray(section["P"], dtype=float) if "P" in section else compound_symmetry(K, float(section["rho"]))
    return family(P, None, float(section["nu"]))


def _apply_sigma(params, strategy, stats: SufficientStats, calib):
    K = params.dim
    if isinstance(strategy, (list, float, int)):
        return params.with_sigma(strategy)
    if strategy == "empirical":
        return params.with_sigma(sigma_empirical_iw(params.nu, K, stats))
    if strategy == "siw-match":
        return params.with_sigma(sigma_match_siw1(params.nu, K, stats, calib))
    raise ConfigError(f"unknown sigma strategy {strategy!r}")


def prepare_data(cfg: RunConfig, data_path, calib=None, siw_nu=None) -> Dataset:
    """Load the CSV and apply centering and the configured rescaling."""
    ds = load_timeseries_csv(data_path, center=bool(cfg.data.get("center", False)))
    rescale = cfg.data.get("rescale")
    if rescale is None or rescale is False:
        return ds
    if rescale == "siw-sigma":
        # common variance equal to the calibrated E[Sigma_kk] at a fixed sigma
        if calib is None or siw_nu is None:
            raise ConfigError("rescale 'siw-sigma' needs an SIW_1 component and a calibration")
        intercept, slope = calib.sigma_map(siw_nu)
        return ds.rescaled(intercept + slope * float(cfg.data.get("sigma_target", 5.0)))
    try:
        return ds.rescaled(float(rescale))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid rescale value {rescale!r}") from exc


def build_prior(cfg: RunConfig, K: int, calib):
    """Unscaled prior hyperparameters (sigma still unset)."""
    if cfg.model == "iw":
        return _component(cfg.iw, K, IwParams, calib)
    if cfg.model == "siw":
        return _component(cfg.siw, K, Siw1Params, calib)
    if cfg.mixture:
        m = cfg.mixture
        return elicit_mixture(ElicitationTarget(float(m["mean"]), float(m["var"]), K), cfg.eta, calib,
                              rho1=m.get("rho1"), nu1=m.get("nu1"))
    return MixtureParams(cfg.eta, _component(cfg.iw, K, IwParams, calib),
                         _component(cfg.siw, K, Siw1Params, calib))


def scale_prior(cfg: RunConfig, prior, stats, calib):
    if isinstance(prior, IwParams):
        return _apply_sigma(prior, cfg.sigma["iw"], stats, calib)
    if isinstance(prior, Siw1Params):
        return _apply_sigma(prior, cfg.sigma["siw"], stats, calib)
    return MixtureParams(prior.eta, _apply_sigma(prior.iw, cfg.sigma["iw"], stats, calib),
                         _apply_sigma(prior.siw, cfg.sigma["siw"], stats, calib))


def fit(cfg: RunConfig, prior, stats, seed: RngSeed) -> PosteriorState:
    if cfg.model == "iw":
        state = iw_state(prior, stats)
    elif cfg.model == "siw":
        state = siw_state(prior, stats, cfg.is_config, seed, marginal=True)
    elif cfg.model == "mixture":
        state = mixture_posterior(prior, stats, cfg.is_config, seed)
    else:
        state = fixed_weight_posterior(prior, stats)
    state.info["config"] = cfg.to_dict()
    return state


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _stage(name, fn, timings):
    t0 = time.perf_counter()
    try:
        return fn()
    except BayesFCError as exc:
        exc.stage = name
        if exc.args:
            exc.args = (f"stage '{name}': {exc.args[0]}",) + exc.args[1:]
        raise
    finally:
        timings[name] = round(time.perf_counter() - t0, 3)


def fit_from_files(cfg: RunConfig, data_path, timings=None):
    """Shared front half of ``fit`` and ``run``: data, prior, posterior."""
    timings = {} if timings is None else timings
    seed = RngSeed(cfg.seed)
    K = _stage("load", lambda: load_timeseries_csv(data_path).K, timings)
    calib = _stage("calibration", lambda: cfg.load_calibration(K), timings)
    prior = _stage("elicit", lambda: build_prior(cfg, K, calib), timings)
    siw_nu = prior.nu if isinstance(prior, Siw1Params) else getattr(getattr(prior, "siw", None), "nu", None)
    ds = _stage("load", lambda: prepare_data(cfg, data_path, calib, siw_nu), timings)
    stats = sufficient_stats(ds.data)
    prior = _stage("elicit", lambda: scale_prior(cfg, prior, stats, calib), timings)
    state = _stage("fit", lambda: fit(cfg, prior, stats, seed.child(1)), timings)
    state.info["data_scale"] = None if ds.scale is None else ds.scale.tolist()
    state.info["labels"] = ds.labels
    return ds, calib, prior, state


def run_pipeline(cfg: RunConfig, data_path, outdir) -> dict:
    """Run every stage and write the artifacts; returns the manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    seed = RngSeed(cfg.seed)
    artifacts = {}
    manifest = {"version": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                "python": platform.python_version(), "seed": cfg.seed, "config": cfg.to_dict(),
                "data": {"path": str(data_path), "sha256": _sha256(data_path)},
                "artifacts": artifacts, "timings": timings}

    def _finish():
        write_json(outdir / "manifest.json", manifest)

    try:
        ds, calib, prior, state = fit_from_files(cfg, data_path, timings)
        write_json(outdir / "state.json", state.to_dict())
        artifacts["state"] = "state.json"

        mean, var = _stage("moments", lambda: posterior_corr_moments(state, calib), timings)
        write_moments_csv(outdir / "moments.csv", mean, var, ds.labels)
        artifacts["moments"] = "moments.csv"

        post = cfg.posterior
        siw_cfg = ISConfig(int(post["siw_M"]), float(post["siw_clip_exp"]))
        n_draws = int(post["iw_draws"]) if state.eta_post == 1.0 else int(post["store_draws"])
        draws = _stage("sample", lambda: sample_posterior_correlations(state, n_draws, siw_cfg,
                                                                      seed.child(2)), timings)
        write_samples(outdir / "samples.bin", draws.corr, draws.labels)
        artifacts["samples"] = "samples.bin"

        def _detect():
            if state.kind == "iw":
                return detect_edges_direct(draws, cfg.detect.prob)
            mc_mean = None
            if cfg.detect.mean_source == "separate":
                mc_mean = posterior_mean_correlation(
                    state, seed.child(3), iw_draws=int(post["iw_draws"]),
                    siw_M=int(post["siw_M"]), siw_clip_exp=float(post["siw_clip_exp"]))
            return detect_edges_mixture(state, cfg.detect, seed.child(4), overall_mean=mc_mean)

        graph: EdgeGraph = _stage("detect", _detect, timings)
        gd = graph.to_dict()
        gd["labels"] = ds.labels
        gd["posterior_mean"] = draws.corr.mean(axis=0).tolist()
        gd["posterior_mode"] = posterior_mode_matrix(draws).tolist()
        write_json(outdir / "graph.json", gd)
        artifacts["graph"] = "graph.json"

        score = _stage("score", lambda: score_state(cfg, state, ds, seed.child(5), siw_cfg), timings)
        write_json(outdir / "score.json", score)
        artifacts["score"] = "score.json"
    finally:
        _finish()
    return manifest


def score_state(cfg: RunConfig, state: PosteriorState, ds: Dataset, seed, siw_cfg=None) -> dict:
    sc = model_score_elpd(state, ds.data, cfg.score_draws, seed, siw_cfg)
    out = {"model": state.kind, "elpd_loo": sc.elpd_loo, "waic": sc.waic, "p_waic": sc.p_waic,
           "unstable_points": sc.unstable_points, "eta_post": state.eta_post}
    if state.kind != "fixed-mixture":
        for key in ("log_l0", "log_l1", "log_l1_se"):
            if getattr(state, key) is not None:
                out[key] = getattr(state, key)
    return out
