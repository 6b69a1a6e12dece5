"""Command-line interface: estimate, simulate-data, asymptotic, experiment,
empirical.

Every run takes all randomness from --seed, validates its inputs up front
(violations exit 2 with a machine-readable JSON error on stderr) and leaves a
manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import monte_carlo
from .datagen import (
    HiddenFactorConfig,
    RadialLaw,
    sample_elliptical,
    sample_gaussian,
    sample_hidden_factor,
    sample_student_t,
)
from .empirical import (
    EstimatorConfig,
    ch_path,
    cluster_artifacts,
    edge_matrix,
    ingest_csv,
    kmeans_ch,
    yearly_estimates,
)
from .estimator import estimate
from .experiments import ExperimentSpec, load_spec, run_experiment, block_sigma, compound_sigma
from .losses import (
    LossModel,
    coeffs_elliptical_gaussian_loss,
    coeffs_gaussian,
    coeffs_t_data_gaussian_loss,
    coeffs_t_loss,
    check_theorem_conditions,
    radial_moments,
    RadialMoments,
)
from .runmeta import write_manifest
from .slope import (
    LambdaSequence,
    PatternProjector,
    bh_sequence_gaussian,
    bh_sequence_hf,
    bh_sequence_t,
    constant_sequence,
    pattern,
)
from .symcore import (
    load_matrix_csv,
    num_offdiag,
    sym_to_json_dict,
    vec_plus,
)


class CliError(ValueError):
    """Raised for validated user-input failures (exit code 2)."""


def _emit_error(exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("GSLOPE_THREADS")
    return int(env) if env else 1


def _parse_grid(text: str) -> np.ndarray:
    """'log:lo:hi:n', 'lin:lo:hi:n' or a comma-separated list."""
    if text.startswith("log:") or text.startswith("lin:"):
        kind, lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
        if n < 1:
            raise CliError("grid needs at least one point")
        if kind == "log":
            if lo <= 0:
                raise CliError("log grid requires a positive lower end")
            return np.geomspace(lo, hi, n)
        return np.linspace(lo, hi, n)
    vals = np.array([float(v) for v in text.split(",") if v.strip() != ""])
    if vals.size == 0:
        raise CliError("empty alpha grid")
    return vals


def _parse_sigma(text: str, p_hint: int | None = None) -> np.ndarray:
    if text == "identity":
        if p_hint is None:
            raise CliError("identity sigma needs --p")
        return np.eye(p_hint)
    if text.startswith("block:"):
        _, p, block, rho = text.split(":")
        return block_sigma(int(p), int(block), float(rho))
    if text.startswith("compound:"):
        _, p, rho = text.split(":")
        return compound_sigma(int(p), float(rho))
    return load_matrix_csv(text)


def _check_unit(name: str, value: float) -> float:
    if not 0 < value < 1:
        raise CliError(f"{name} must lie in the open interval (0, 1); got {value}")
    return value


def _build_sequence(args, p: int, n_rows: int) -> LambdaSequence:
    m = num_offdiag(p)
    if args.bh == "gaussian":
        return bh_sequence_gaussian(p, _check_unit("q", args.q))
    if args.bh == "t":
        return bh_sequence_t(n_rows, m, _check_unit("q", args.q))
    if args.bh == "hf":
        if args.nu is None or args.nu <= 2:
            raise CliError("--bh hf requires --nu > 2")
        return bh_sequence_hf(args.nu, m, _check_unit("fdr", args.fdr))
    return constant_sequence(m, 1.0)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_estimate(args) -> int:
    X = np.loadtxt(args.input, delimiter=",", ndmin=2)
    n, p = X.shape
    if args.loss == "t" and (args.nu is None or args.nu <= 2):
        raise CliError("--loss t requires --nu > 2")
    model = LossModel.student_t(p, args.nu) if args.loss == "t" else LossModel.gaussian(p)
    lam = _build_sequence(args, p, n)
    if args.alpha < 0:
        raise CliError(f"alpha must be nonnegative; got {args.alpha}")
    cfg = EstimatorConfig(
        alpha=args.alpha,
        scale_mode=args.scale_mode,
        tol_kkt=args.tol_kkt,
        center=args.center,
    )
    t0 = time.time()
    res = estimate(X, model, lam, cfg)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(res.to_json_dict(), fh, indent=2)
    write_manifest(
        out.parent,
        {"command": "estimate", "loss": args.loss, "nu": args.nu,
         "alpha": args.alpha, "bh": args.bh, "q": args.q,
         "scale_mode": args.scale_mode, "input": str(args.input)},
        args.seed,
        [out.name],
        wall_time_s=time.time() - t0,
        command="estimate",
    )
    return 0


def _cmd_simulate_data(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    sidecar: dict = {"model": args.model, "seed": args.seed}
    if args.model == "hidden-factor":
        cfg = HiddenFactorConfig(
            t_obs=args.n, k_assets=args.k, r_factors=2 * args.groups,
            nu=args.nu or 4.0, n_groups=args.groups, seed=args.seed,
            convention=args.hf_convention,
        )
        X, sigma, theta = sample_hidden_factor(cfg)
        sidecar["sigma_oracle"] = sym_to_json_dict(sigma)
        sidecar["theta_oracle"] = sym_to_json_dict(theta)
    else:
        sigma = _parse_sigma(args.sigma, args.p)
        if args.model == "gaussian":
            X = sample_gaussian(sigma, args.n, args.seed)
        elif args.model == "t":
            if args.nu is None or args.nu <= 2:
                raise CliError("t samples need --nu > 2")
            X = sample_student_t(sigma, args.nu, args.n, args.seed)
        else:
            law = RadialLaw("chi") if args.radial == "chi" else RadialLaw("t", nu=args.nu)
            X = sample_elliptical(
                sigma, law, args.n, args.seed, rescale_gamma=args.rescale_gamma
            )
        sidecar["sigma_oracle"] = sym_to_json_dict(sigma)
        sidecar["theta_oracle"] = sym_to_json_dict(np.linalg.inv(sigma))
    np.savetxt(out_dir / "data.csv", X, delimiter=",")
    with open(out_dir / "sidecar.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
    write_manifest(
        out_dir, {k: v for k, v in vars(args).items() if k != "func"},
        args.seed, ["data.csv", "sidecar.json"],
        wall_time_s=time.time() - t0, command="simulate-data",
    )
    return 0


def _cmd_asymptotic(args) -> int:
    theta0 = _parse_sigma(args.theta0, None)
    sigma = np.linalg.inv(theta0)
    p = theta0.shape[0]
    if args.provenance == "gaussian":
        coeffs = coeffs_gaussian(sigma)
    elif args.provenance == "t_data_gaussian_loss":
        if args.nu is None or args.nu <= 4:
            raise CliError("t_data_gaussian_loss requires --nu > 4")
        coeffs = coeffs_t_data_gaussian_loss(sigma, args.nu)
    elif args.provenance == "elliptical_gaussian_loss":
        if args.er4 is None:
            raise CliError("elliptical_gaussian_loss requires --er4 (E[R^4])")
        mom = RadialMoments(er2=float(p), er4=args.er4)
        coeffs = coeffs_elliptical_gaussian_loss(sigma, mom)
    elif args.provenance == "t_loss":
        if args.nu is None or args.nu <= 2:
            raise CliError("t_loss requires --nu > 2")
        mom = radial_moments(RadialLaw("t", nu=args.nu), p, nu_loss=args.nu)
        coeffs = coeffs_t_loss(sigma, args.nu, mom)
    else:
        raise CliError(f"unknown provenance {args.provenance!r}")
    cond = check_theorem_conditions(theta0, coeffs)
    if not cond["ok"]:
        raise CliError(f"limit-theorem conditions failed: {cond}")
    lam = _build_sequence(args, p, args.n_rows)
    alphas = _parse_grid(args.alphas)
    projector = PatternProjector(pattern(vec_plus(theta0), tol=1e-12))
    t0 = time.time()
    rows = []
    for alpha in alphas:
        s = monte_carlo(
            theta0, coeffs, lam.scaled(float(alpha)), args.M,
            seed=args.seed, projector=projector, n_jobs=_threads(args),
        )
        rows.append(
            {
                "alpha": float(alpha),
                "rmse_asym": s.rmse_asym,
                "rmse_cl": s.rmse_cl,
                "se_rmse": s.se_rmse_asym,
                "top_pattern_freq": s.top_pattern[1] if s.top_pattern else 0.0,
            }
        )
    import pandas as pd

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(out_dir / "curve.csv", index=False)
    write_manifest(
        out_dir, {k: v for k, v in vars(args).items() if k != "func"},
        args.seed, ["curve.csv"], wall_time_s=time.time() - t0,
        command="asymptotic",
    )
    return 0


def _cmd_experiment(args) -> int:
    overrides = {}
    if args.spec:
        spec = load_spec(args.spec, design=args.design)
    else:
        if args.design is None:
            raise CliError("either --spec or --design is required")
        spec = ExperimentSpec(design=args.design)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.paper_scale:
        overrides["paper_scale"] = True
    overrides["n_jobs"] = _threads(args)
    if overrides:
        from dataclasses import replace

        spec = replace(spec, **overrides)
    run_experiment(spec, out_dir=args.out)
    return 0


def _cmd_empirical(args) -> int:
    panel, report = ingest_csv(args.input)
    methods = [m.strip() for m in args.method.split(",")]
    alphas = _parse_grid(args.alpha_grid)
    _check_unit("q", args.q)
    if args.k < 2:
        raise CliError("k must be at least 2")
    cfg = EstimatorConfig(scale_mode="absolute", tol_kkt=args.tol_kkt, max_iter=3000)
    t0 = time.time()
    df = ch_path(
        panel, methods, alphas, args.k, cfg, q=args.q, nu=args.nu,
        restarts=args.restarts, seed=args.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    df.to_csv(out_dir / "ch_path.csv", index=False)
    outputs = ["ch_path.csv"]

    valid = df.dropna(subset=["ch_index"])
    if len(valid):
        best = valid.loc[valid.ch_index.idxmax()]
        method = best["method"]
        model = (
            LossModel.student_t(panel.p, args.nu)
            if method == "tslope"
            else LossModel.gaussian(panel.p)
        )
        results = yearly_estimates(panel, model, float(best["alpha"]), cfg, q=args.q)
        traj = edge_matrix(results)
        rep = kmeans_ch(traj, args.k, restarts=args.restarts, seed=args.seed)
        for name, table in cluster_artifacts(rep, traj).items():
            table.to_csv(out_dir / f"{name}.csv", index=False)
            outputs.append(f"{name}.csv")
        with open(out_dir / "best.json", "w") as fh:
            json.dump(
                {"method": method, "alpha": float(best["alpha"]),
                 "ch_index": float(best["ch_index"]),
                 "ingestion": vars(report) | {"assets": list(report.assets)}},
                fh, indent=2, default=str,
            )
        outputs.append("best.json")
    write_manifest(
        out_dir, {k: v for k, v in vars(args).items() if k != "func"},
        args.seed, outputs, wall_time_s=time.time() - t0, command="empirical",
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gslope",
        description="Graphical SLOPE precision-matrix estimation toolkit",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker count (env GSLOPE_THREADS as fallback)")

    sp = sub.add_parser("estimate", help="fit one penalized precision matrix")
    sp.add_argument("--input", required=True, help="numeric CSV, one row per observation")
    sp.add_argument("--loss", choices=("gaussian", "t"), default="gaussian")
    sp.add_argument("--nu", type=float, default=None)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--bh", choices=("gaussian", "t", "hf", "constant"), default="gaussian")
    sp.add_argument("--q", type=float, default=0.5)
    sp.add_argument("--fdr", type=float, default=0.1)
    sp.add_argument("--scale-mode", choices=("n_inv_sqrt", "absolute"),
                    default="n_inv_sqrt")
    sp.add_argument("--tol-kkt", type=float, default=1e-7)
    sp.add_argument("--center", action="store_true")
    sp.add_argument("--output", required=True)
    common(sp)
    sp.set_defaults(func=_cmd_estimate)

    sp = sub.add_parser("simulate-data", help="draw synthetic data with oracles")
    sp.add_argument("--model", choices=("gaussian", "elliptical", "t", "hidden-factor"),
                    required=True)
    sp.add_argument("--sigma", default="identity",
                    help="identity | block:p:b:rho | compound:p:rho | matrix.csv")
    sp.add_argument("--p", type=int, default=None)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--nu", type=float, default=None)
    sp.add_argument("--radial", choices=("chi", "t"), default="chi")
    sp.add_argument("--rescale-gamma", action="store_true")
    sp.add_argument("--k", type=int, default=30)
    sp.add_argument("--groups", type=int, default=3)
    sp.add_argument("--hf-convention", choices=("covariance", "scale"),
                    default="covariance")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=_cmd_simulate_data)

    sp = sub.add_parser("asymptotic", help="Monte Carlo curve of the limiting law")
    sp.add_argument("--theta0", required=True,
                    help="matrix.csv | block:p:b:rho | compound:p:rho")
    sp.add_argument("--provenance", required=True,
                    choices=("gaussian", "elliptical_gaussian_loss",
                             "t_data_gaussian_loss", "t_loss"))
    sp.add_argument("--nu", type=float, default=None)
    sp.add_argument("--er4", type=float, default=None)
    sp.add_argument("--bh", choices=("gaussian", "t", "hf", "constant"),
                    default="gaussian")
    sp.add_argument("--q", type=float, default=0.5)
    sp.add_argument("--fdr", type=float, default=0.1)
    sp.add_argument("--n-rows", type=int, default=252,
                    help="sample size entering the t-quantile sequence")
    sp.add_argument("--alphas", default="log:0.01:3:20")
    sp.add_argument("--M", type=int, default=100)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=_cmd_asymptotic)

    sp = sub.add_parser("experiment", help="run a shipped simulation design")
    sub2 = sp.add_subparsers(dest="subcommand", required=True)
    spr = sub2.add_parser("run")
    spr.add_argument("--design", choices=("fig1", "fig2", "fig3", "hidden_factor"),
                     default=None)
    spr.add_argument("--spec", default=None, help="JSON spec file")
    spr.add_argument("--out", required=True)
    spr.add_argument("--paper-scale", action="store_true")
    spr.add_argument("--seed", type=int, default=None)
    spr.add_argument("--threads", type=int, default=None)
    spr.set_defaults(func=_cmd_experiment)

    sp = sub.add_parser("empirical", help="yearly estimation + clustering pipeline")
    sub3 = sp.add_subparsers(dest="subcommand", required=True)
    spe = sub3.add_parser("run")
    spe.add_argument("--input", required=True)
    spe.add_argument("--method", default="tslope",
                     help="comma list from gslope,tslope,glasso")
    spe.add_argument("--q", type=float, default=0.05)
    spe.add_argument("--nu", type=float, default=5.0)
    spe.add_argument("--alpha-grid", default="log:1e-4:4:200")
    spe.add_argument("--k", type=int, default=3)
    spe.add_argument("--restarts", type=int, default=20)
    spe.add_argument("--tol-kkt", type=float, default=1e-5)
    spe.add_argument("--out", required=True)
    spe.add_argument("--seed", type=int, default=0)
    spe.add_argument("--threads", type=int, default=None)
    spe.set_defaults(func=_cmd_empirical)

    return ap


def dispatch(argv) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError) as exc:
        _emit_error(exc)
        return 2
    except Exception as exc:  # unexpected failure: still machine readable
        _emit_error(exc)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
