"""Command-line interface.

Subcommands wire the library into file-based workflows: ``fit`` a model
to a long-format CSV, ``simulate`` a dataset or run a Monte-Carlo
``study``, emit model/empirical ``dependence`` matrices and tail
coefficients, tabulate dependence-measure ``curves``, and run the
``gof`` t-plot diagnostic.

Exit codes: 0 success, 2 malformed data, 3 non-convergence, 4 config
error.  Outputs are pure functions of (inputs, flags, seed); CSV files
start with a ``# schema_version`` comment and JSON carries the field.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .copula import CorrelationStructure, MixtureCopulaSpec
from .data import LongitudinalDataset
from .dependence import (
    dependence_curves,
    empirical_concordance_matrix,
    model_concordance_matrix,
    tail_dependence,
)
from .estimation import CopulaConfig, FitResult, fit_two_stage
from .gof import tplot
from .marginals import MarginalFit
from .simulate import CovariateSpec, StudyConfig, run_study, simulate_dataset

SCHEMA_LINE = "# schema_version: 1"

EXIT_DATA = 2
EXIT_NONCONVERGENCE = 3
EXIT_CONFIG = 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"config not found: {path}", EXIT_CONFIG) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})", EXIT_CONFIG) from exc


def _load_data(path, config):
    include_time = bool(config.get("include_time_covariate", False))
    try:
        return LongitudinalDataset.from_csv(path, include_time_covariate=include_time)
    except FileNotFoundError as exc:
        raise CliError(f"data not found: {path}", EXIT_DATA) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def _copula_config(config):
    block = config.get("copula", {})
    try:
        return CopulaConfig(
            family=block.get("family", "gaussian"),
            structures=tuple(block.get("structures", ("ar1", "ex"))),
            nu_grid=None if block.get("nu_grid") is None else tuple(block["nu_grid"]),
            n_starts=int(block.get("n_starts", 5)),
            maxiter=int(block.get("maxiter", 2000)),
            compute_se=bool(block.get("compute_se", True)),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise CliError(f"bad copula config: {exc}", EXIT_CONFIG) from exc


def _margin_family(config):
    family = config.get("margin", {}).get("family", "poisson")
    if family not in ("poisson", "nb"):
        raise CliError(f"unknown marginal family {family!r}", EXIT_CONFIG)
    return family


def _mixture_spec(block):
    try:
        structures = tuple(
            CorrelationStructure(s["kind"], float(s["decay"])) for s in block["structures"]
        )
        return MixtureCopulaSpec(
            family=block.get("family", "gaussian"),
            weights=tuple(block["weights"]),
            structures=structures,
            df=block.get("df"),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise CliError(f"bad copula specification: {exc}", EXIT_CONFIG) from exc


def _study_config(config):
    try:
        spec = _mixture_spec(config["copula"])
        margin = config.get("margin", {})
        cov_blocks = config.get(
            "covariates",
            [
                {"kind": "bernoulli", "p": 0.5},
                {"kind": "duniform", "low": 1, "high": 4},
                {"kind": "time"},
            ],
        )
        covariates = tuple(
            CovariateSpec(
                kind=c["kind"],
                p=float(c.get("p", 0.5)),
                low=int(c.get("low", 1)),
                high=int(c.get("high", 4)),
            )
            for c in cov_blocks
        )
        fit_config = None
        if "copula_fit" in config:
            fit_config = _copula_config({"copula": config["copula_fit"]})
        return StudyConfig(
            spec=spec,
            beta=tuple(margin.get("beta", (1.0, 0.5, 0.5, -0.5))),
            family=margin.get("family", "poisson"),
            dispersion=margin.get("dispersion"),
            covariates=covariates,
            m=int(config.get("m", 200)),
            n_visits=int(config.get("n_visits", 4)),
            n_replicates=int(config.get("n_replicates", 50)),
            seed=int(config.get("seed", 20240901)),
            fit_config=fit_config,
        )
    except CliError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise CliError(f"bad study config: {exc}", EXIT_CONFIG) from exc


def _print_fit_summary(fit, stream=None):
    w = (sys.stdout if stream is None else stream).write
    w(f"marginal family: {fit.marginal.family}    copula: {fit.family} "
      f"K={fit.n_components} ({', '.join(fit.structures)})\n")
    if fit.df is not None:
        w(f"degrees of freedom: {fit.df:g}\n")
    se = fit.standard_errors
    w(f"{'Parameter':<16}{'Estimate':>12}{'SE':>12}\n")
    for j, (name, value) in enumerate(zip(fit.param_names, fit.params)):
        se_j = f"{se[j]:>12.4f}" if se is not None else f"{'--':>12}"
        w(f"{name:<16}{value:>12.4f}{se_j}\n")
    w(f"comp-loglik {fit.comp_loglik:.2f}\n")
    if fit.claic is not None:
        w(f"CLAIC {fit.claic:.2f}    CLBIC {fit.clbic:.2f}\n")
    if not fit.converged:
        w("WARNING: optimizer did not converge\n")
    if fit.boundary:
        w(f"WARNING: boundary solution ({', '.join(fit.boundary)})\n")
    if fit.se_warning:
        w(f"WARNING: {fit.se_warning}\n")


def cmd_fit(args):
    config = _load_json(args.config)
    copula_cfg = _copula_config(config)
    family = _margin_family(config)
    data = _load_data(args.data, config)
    try:
        fit = fit_two_stage(data, family, copula_cfg)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        raise CliError(f"estimation failed: {exc}", EXIT_NONCONVERGENCE) from exc
    _print_fit_summary(fit)
    if args.out:
        fit.to_json(args.out)
    if not fit.converged:
        raise CliError("fit did not converge (result written)", EXIT_NONCONVERGENCE)
    return 0


def cmd_simulate(args):
    config = _study_config(_load_json(args.config))
    data = simulate_dataset(config, replicate=args.replicate)
    data.to_csv(args.out)
    print(f"wrote {data.n_obs} rows ({data.n_subjects} subjects) to {args.out}")
    return 0


def cmd_study(args):
    config = _study_config(_load_json(args.config))
    report = run_study(config)
    print(report.table())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(SCHEMA_LINE + "\n")
            fh.write("parameter,true,mean,bias,sd,se,rmse\n")
            for row in report.rows():
                se = "" if row["se"] is None else repr(row["se"])
                fh.write(
                    f"{row['parameter']},{row['true']!r},{row['mean']!r},"
                    f"{row['bias']!r},{row['sd']!r},{se},{row['rmse']!r}\n"
                )
    return 0


def _fit_like(args, config):
    """A (marginal, spec) pair from either a fit JSON or a config truth block."""
    if args.fit:
        return FitResult.from_json(args.fit)
    if "margin" not in config or "beta" not in config.get("margin", {}):
        raise CliError("need either --fit or a margin block with beta in the config", EXIT_CONFIG)
    margin = config["margin"]
    marginal = MarginalFit(
        family=margin.get("family", "poisson"),
        beta=np.asarray(margin["beta"], dtype=float),
        dispersion=margin.get("dispersion"),
        loglik=0.0,
        converged=True,
        grad_norm=0.0,
        n_iter=0,
    )
    spec = _mixture_spec(config["copula"])

    class _Duck:
        pass

    duck = _Duck()
    duck.marginal = marginal
    duck.spec = lambda: spec
    return duck


def cmd_dependence(args):
    config = _load_json(args.config) if args.config else {}
    fit = _fit_like(args, config)
    data = _load_data(args.data, config)
    spec = fit.spec()
    times = np.unique(data.times)

    lines = [SCHEMA_LINE, "measure,kind,time_a,time_b,value"]
    for measure in ("tau", "rho"):
        model = model_concordance_matrix(fit, data, measure)
        emp = empirical_concordance_matrix(data, measure, marginal_fit=fit.marginal)
        for a in range(times.size):
            for b in range(times.size):
                lines.append(
                    f"{measure},model,{times[a]:g},{times[b]:g},"
                    f"{float(model.entries[a, b])!r}"
                )
                lines.append(
                    f"{measure},empirical,{times[a]:g},{times[b]:g},"
                    f"{float(emp.entries[a, b])!r}"
                )
    for a in range(times.size):
        for b in range(times.size):
            if a == b:
                lam = 1.0
            else:
                lam = tail_dependence(spec.pair_mixture(times[a], times[b]))[0]
            lines.append(f"tail,model,{times[a]:g},{times[b]:g},{float(lam)!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_curves(args):
    df = args.df
    rows = dependence_curves(
        family=args.family,
        margin=args.margin,
        margin_params=[float(v) for v in args.params],
        mix_weights=tuple(float(w) for w in args.weights),
        measures=tuple(args.measures),
        df=df,
        n_grid=args.grid,
    )
    lines = [SCHEMA_LINE, "measure,family,pi,marginal_param,rho2,value"]
    for r in rows:
        lines.append(
            f"{r['measure']},{r['family']},{r['pi']!r},{r['marginal_param']!r},"
            f"{r['rho2']!r},{r['value']!r}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _qq_svg(qq, size=480, pad=48):
    """Self-contained QQ scatter with the 45-degree reference line."""
    span = size - 2 * pad

    def sx(u):
        return pad + span * u

    def sy(u):
        return size - pad - span * u

    dots = "".join(
        f'<circle cx="{sx(t):.1f}" cy="{sy(s):.1f}" r="2.4" fill="#1f77b4"/>'
        for t, s in qq
    )
    ticks = ""
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        ticks += (
            f'<text x="{sx(v):.1f}" y="{size - pad + 18}" font-size="11" '
            f'text-anchor="middle">{v:g}</text>'
            f'<text x="{pad - 8}" y="{sy(v) + 4:.1f}" font-size="11" '
            f'text-anchor="end">{v:g}</text>'
        )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">'
        f'<rect width="{size}" height="{size}" fill="white"/>'
        f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(1)}" y2="{sy(1)}" '
        f'stroke="#888" stroke-dasharray="4 3"/>'
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" '
        f'fill="none" stroke="black"/>'
        f"{dots}{ticks}"
        f'<text x="{size / 2}" y="{size - 10}" font-size="12" text-anchor="middle">'
        f"theoretical uniform quantile</text>"
        f'<text x="14" y="{size / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2})">sample quantile of v</text>'
        f"</svg>"
    )


def cmd_gof(args):
    config = _load_json(args.config) if args.config else {}
    fit = _fit_like(args, config)
    data = _load_data(args.data, config)
    result = tplot(data, fit)
    print(
        f"t-plot: m={result.v.size} excluded={result.n_excluded} "
        f"KS={result.ks_statistic:.4f} p={result.ks_pvalue:.4f}"
    )
    counts = np.bincount(result.component_assignment, minlength=len(fit.spec().weights) + 1)[1:]
    print("component assignment counts:", " ".join(str(c) for c in counts))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(SCHEMA_LINE + "\n")
            fh.write("theoretical,sample\n")
            for t, s in result.qq_pairs:
                fh.write(f"{float(t)!r},{float(s)!r}\n")
    if args.svg:
        with open(args.svg, "w") as fh:
            fh.write(_qq_svg(result.qq_pairs))
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="mixcop",
        description="Mixture-copula regression models for longitudinal count data.",
    )
    p.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker cap (this build computes serially; values above 1 are accepted)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="two-stage fit of a mixture-copula count model")
    f.add_argument("data", help="long-format CSV: subject,time,y,<covariates...>")
    f.add_argument("config", help="JSON model config")
    f.add_argument("-o", "--out", default="fit.json", help="output FitResult JSON")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate one dataset from a study config")
    s.add_argument("config")
    s.add_argument("-o", "--out", default="simulated.csv")
    s.add_argument("--replicate", type=int, default=0, help="RNG substream index")
    s.set_defaults(func=cmd_simulate)

    st = sub.add_parser("study", help="Monte-Carlo simulate-and-fit study")
    st.add_argument("config")
    st.add_argument("-o", "--out", default=None, help="optional per-parameter summary CSV")
    st.set_defaults(func=cmd_study)

    d = sub.add_parser("dependence", help="model vs empirical concordance matrices")
    d.add_argument("data")
    d.add_argument("--fit", default=None, help="FitResult JSON")
    d.add_argument("--config", default=None, help="config with margin/copula truth blocks")
    d.add_argument("-o", "--out", default=None)
    d.set_defaults(func=cmd_dependence)

    c = sub.add_parser("curves", help="dependence measures over a correlation sweep")
    c.add_argument("--family", default="gaussian", choices=("gaussian", "t"))
    c.add_argument("--margin", default="poisson", choices=("poisson", "nb", "bernoulli"))
    c.add_argument("--params", nargs="+", default=["1.0"], help="margin parameters")
    c.add_argument("--weights", nargs="+", default=["0.25", "0.5", "0.75"],
                   help="weights of the fixed independence component")
    c.add_argument("--measures", nargs="+", default=["tau", "rho"])
    c.add_argument("--df", type=float, default=None)
    c.add_argument("--grid", type=int, default=41)
    c.add_argument("-o", "--out", default=None)
    c.set_defaults(func=cmd_curves)

    g = sub.add_parser("gof", help="modified t-plot goodness of fit")
    g.add_argument("data")
    g.add_argument("--fit", default=None)
    g.add_argument("--config", default=None)
    g.add_argument("-o", "--out", default=None, help="QQ pairs CSV")
    g.add_argument("--svg", default=None, help="QQ scatter SVG")
    g.set_defaults(func=cmd_gof)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
