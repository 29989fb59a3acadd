"""Command-line entry point: ``bayesfc <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from .edges import DetectConfig, batch_clt_transform, detect_edges_direct, EdgeGraph
from .edges import _pair_intervals, _upper_pairs
from .elicitation import CalibrationGrid, ElicitationTarget, calibrate, elicit_iw, elicit_mixture, elicit_siw1
from .errors import (BayesFCError, CalibrationRequired, ConfigError, DataError)
from .inference import ISConfig, PosteriorState, sample_posterior_correlations
from .io import load_timeseries_csv, read_json, read_samples, simulate, write_json, write_samples
from .pipeline import RunConfig, fit_from_files, run_pipeline, score_state
from .priors import CalibrationTable, _require_calibration
from .samplers import RngSeed

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, CalibrationRequired)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, FileNotFoundError)):
        return EXIT_DATA
    return EXIT_NUMERIC


def _calibration(path, K):
    return _require_calibration(K, CalibrationTable.load(path) if path else None)


def cmd_calibrate(args):
    grid = CalibrationGrid()
    if args.grid != "default":
        try:
            grid = CalibrationGrid.from_dict(read_json(args.grid))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid grid file: {exc}") from exc
    if args.draws:
        grid = CalibrationGrid(grid.nus, grid.configs_per_nu, args.draws, grid.sigma_range,
                               grid.clip_exp, grid.lkj_eta)
    table = calibrate(args.dim, grid, RngSeed(args.seed))
    table.save(args.out)
    print(json.dumps({k: v for k, v in table.to_dict().items() if k != "sigma_surface"}))


def cmd_elicit(args):
    target = ElicitationTarget(args.mean, args.var, args.dim)
    if args.model == "iw":
        out = elicit_iw(target).to_dict()
    elif args.model == "siw":
        out = elicit_siw1(target, _calibration(args.calibration, args.dim)).to_dict()
    else:
        mix = elicit_mixture(target, args.eta, _calibration(args.calibration, args.dim),
                             rho1=args.rho1, nu1=args.nu1)
        out = {"eta": mix.eta, "iw": mix.iw.to_dict(), "siw": mix.siw.to_dict()}
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_simulate(args):
    blocks = [int(b) for b in args.blocks.split(",")] if args.blocks else None
    simulate(args.dim, args.n, args.generator, RngSeed(args.seed), args.out, rho=args.rho,
             blocks=blocks)


def _config_with_overrides(args):
    raw = read_json(args.config) if args.config else {}
    if args.model:
        raw["model"] = args.model
    if args.seed is not None:
        raw["seed"] = args.seed
    is_section = dict(raw.get("is") or {})
    if getattr(args, "is_M", None):
        is_section["M"] = args.is_M
    if getattr(args, "is_clip_exp", None) is not None:
        is_section["clip_exp"] = args.is_clip_exp
    if is_section:
        raw["is"] = is_section
    if getattr(args, "eta", None) is not None:
        raw["eta"] = args.eta
    return RunConfig.from_dict(raw)


def cmd_fit(args):
    cfg = _config_with_overrides(args)
    _, _, _, state = fit_from_files(cfg, args.data)
    write_json(args.out, state.to_dict())
    if args.samples:
        draws = sample_posterior_correlations(
            state, args.draws, ISConfig(int(cfg.posterior["siw_M"]), float(cfg.posterior["siw_clip_exp"])),
            RngSeed(cfg.seed).child(2))
        write_samples(args.samples, draws.corr, draws.labels)
    print(json.dumps({"kind": state.kind, "n": state.n, "eta_post": state.eta_post,
                      "log_l0": state.log_l0, "log_l1": state.log_l1, "log_l1_se": state.log_l1_se}))


def cmd_detect(args):
    state = PosteriorState.from_dict(read_json(args.state))
    corr, labels = read_samples(args.samples)
    if corr.shape[1] != state.dim:
        raise DataError(f"samples have K={corr.shape[1]}, state has K={state.dim}")
    method = args.method
    if method == "auto":
        method = "batch-clt" if len(np.unique(labels)) > 1 else "direct"
    if method == "direct":
        graph = detect_edges_direct(corr, args.prob)
    else:
        S = args.S
        L = args.L or corr.shape[0] // S
        # overall mean from the stored draws themselves
        batches = batch_clt_transform(corr, L, S, corr.mean(axis=0))
        lo, hi = _pair_intervals(_upper_pairs(batches.values), state.dim, args.prob)
        graph = EdgeGraph(state.dim, args.prob, "batch-clt", lo, hi)
    write_json(args.out, graph.to_dict())
    print(json.dumps({"method": graph.method, "edges": int(graph.adjacency.sum() // 2)}))


def cmd_score(args):
    state = PosteriorState.from_dict(read_json(args.state))
    cfg = RunConfig.from_dict(state.info.get("config", {}))
    ds = load_timeseries_csv(args.data, center=bool(cfg.data.get("center", False)))
    scale = state.info.get("data_scale")
    if scale is not None:
        ds.data = ds.data / np.asarray(scale)
    if args.draws:
        cfg.score_draws = args.draws
    seed = RngSeed(cfg.seed if args.seed is None else args.seed).child(5)
    out = score_state(cfg, state, ds, seed,
                      ISConfig(int(cfg.posterior["siw_M"]), float(cfg.posterior["siw_clip_exp"])))
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_run(args):
    cfg = _config_with_overrides(args)
    manifest = run_pipeline(cfg, args.data, args.outdir)
    print(json.dumps({"outdir": args.outdir, "artifacts": manifest["artifacts"]}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bayesfc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="fit SIW_1 moment constants for a dimension")
    c.add_argument("--dim", type=int, required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--grid", default="default", help="'default' or a JSON grid file")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--draws", type=int, help="override draws per configuration")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("elicit", help="hyperparameters from target correlation moments")
    e.add_argument("--model", choices=["iw", "siw", "mixture"], default="iw")
    e.add_argument("--dim", type=int, required=True)
    e.add_argument("--mean", type=float, required=True)
    e.add_argument("--var", type=float, required=True)
    e.add_argument("--eta", type=float, default=0.5)
    e.add_argument("--rho1", type=float)
    e.add_argument("--nu1", type=float)
    e.add_argument("--calibration")
    e.add_argument("--out")
    e.set_defaults(func=cmd_elicit)

    s = sub.add_parser("simulate", help="write synthetic Gaussian time series")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--generator", choices=["identity", "compound", "block"], default="identity")
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--blocks", help="comma-separated block sizes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("fit", cmd_fit, "fit a posterior"),
                                 ("run", cmd_run, "run every stage and write all artifacts")):
        f = sub.add_parser(name, help=helptext)
        f.add_argument("--model", choices=["iw", "siw", "mixture", "fixed-mixture"])
        f.add_argument("--config")
        f.add_argument("--data", required=True)
        f.add_argument("--seed", type=int)
        f.add_argument("--eta", type=float)
        f.add_argument("--is-M", dest="is_M", type=int)
        f.add_argument("--is-clip-exp", dest="is_clip_exp", type=float)
        if name == "fit":
            f.add_argument("--out", required=True)
            f.add_argument("--samples", help="also write posterior draws here")
            f.add_argument("--draws", type=int, default=1000)
        else:
            f.add_argument("--outdir", required=True)
        f.set_defaults(func=func)

    d = sub.add_parser("detect", help="credible-interval edge detection from stored draws")
    d.add_argument("--state", required=True)
    d.add_argument("--samples", required=True)
    d.add_argument("--prob", type=float, default=0.9)
    d.add_argument("--method", choices=["auto", "direct", "batch-clt"], default="auto")
    d.add_argument("--L", type=int)
    d.add_argument("--S", type=int, default=DetectConfig().S)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_detect)

    sc = sub.add_parser("score", help="predictive score (IS-LOO elpd and WAIC)")
    sc.add_argument("--state", required=True)
    sc.add_argument("--data", required=True)
    sc.add_argument("--draws", type=int)
    sc.add_argument("--seed", type=int)
    sc.add_argument("--out")
    sc.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except (BayesFCError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
