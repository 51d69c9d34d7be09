"""Command-line interface.

Four subcommands: ``simulate`` writes a synthetic cohort as CSV files,
``fit`` runs the full pipeline on CSV inputs, ``diagnose`` reports
instrument diagnostics, and ``study`` drives a Monte-Carlo study from a
TOML description. Exit codes: 0 success, 1 usage problem, 2 data error,
3 numerical or study failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import pandas as pd

from .basis import make_basis, transform_scores
from .diagnostics import (
    cochran_q,
    compute_summary_stats,
    conditional_f,
    ivw_fit,
    q_strength,
    sargan,
)
from .errors import DataError, NumericalError, StudyError
from .longdata import load_individual_data
from .pipeline import fit_frame, fit_mpcmr
from .simgen import SimConfig, gen_dataset
from .study import load_study_spec, run_study

__all__ = ["main"]


def _cmd_simulate(args) -> int:
    scenario = args.scenario.strip()
    if len(scenario) != 2:
        raise DataError(f"scenario must look like A3, got {scenario!r}")
    cfg = SimConfig(
        n=args.n,
        J=args.variants,
        obs_per_subject=args.obs_per_subject,
        exposure_scenario=scenario[0],
        outcome_scenario=int(scenario[1]),
        seed=args.seed,
    )
    ds = gen_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)

    exp = ds.sparse_exposure
    counts = [t.size for t in exp.times]
    pd.DataFrame({
        "subject_id": np.repeat(exp.subject_ids, counts),
        "time": np.concatenate(exp.times),
        "value": np.concatenate(exp.values),
    }).to_csv(os.path.join(args.out, "exposure.csv"), index=False)

    geno = pd.DataFrame(ds.genotype.values.astype(int), columns=ds.genotype.variant_ids)
    geno.insert(0, "subject_id", ds.genotype.subject_ids)
    geno.to_csv(os.path.join(args.out, "genotype.csv"), index=False)

    pd.DataFrame({
        "subject_id": ds.outcome.subject_ids,
        "outcome": ds.outcome.values,
    }).to_csv(os.path.join(args.out, "outcome.csv"), index=False)

    truth = pd.DataFrame({"t": ds.dense_times, "beta_true": ds.true_beta})
    for j in range(cfg.J):
        truth[f"alpha_{j + 1}"] = ds.true_alpha[j]
    truth.to_csv(os.path.join(args.out, "truth.csv"), index=False)

    print(f"wrote exposure/genotype/outcome/truth CSVs for scenario {scenario} to {args.out}")
    return 0


def _load_inputs(args):
    return load_individual_data(args.exposure, args.genotype, args.outcome)


def _cmd_fit(args) -> int:
    exposure, genotype, outcome = _load_inputs(args)
    fit = fit_mpcmr(
        exposure, genotype, outcome,
        basis=args.basis, L=args.L, fve=args.fve,
        max_components=args.max_components,
        robust_band=not args.no_robust,
        lm_m=args.lm_m, lm_expand=args.expand,
    )
    frame = fit_frame(fit)
    frame.to_csv(args.out, index=False)
    if args.model_out:
        fit.model.save(args.model_out)
    k = fit.model.n_components
    print(f"retained {k} component(s), cumulative FVE {fit.model.fve[-1]:.4f}")
    print(f"gamma: {np.array2string(fit.gamma, precision=5)}")
    stat, df, p = sargan(fit.cue)
    if df > 0:
        print(f"overidentification: stat {stat:.3f} on {df} df (p = {p:.4f})")
    if fit.band is not None and fit.band.n_accepted == 0:
        print("warning: robust confidence set is empty at this grid", file=sys.stderr)
    print(f"wrote {args.out}")
    return 0


def _cmd_diagnose(args) -> int:
    exposure, genotype, outcome = _load_inputs(args)
    fit = fit_mpcmr(
        exposure, genotype, outcome,
        basis=args.basis, L=args.L, fve=args.fve,
        max_components=args.max_components,
        robust_band=False,
    )
    model = fit.model
    basis_set = fit.basis
    xi_star = transform_scores(model.scores, basis_set, model)
    stats = compute_summary_stats(genotype, model.scores, outcome.values)
    cf = conditional_f(genotype.values, xi_star)
    q = cochran_q(stats, basis_set, model)
    qs = q_strength(stats)
    s_stat, s_df, s_p = sargan(fit.cue)
    ivw = ivw_fit(stats, basis_set, model)
    payload = {
        "n": stats.n,
        "n_variants": stats.n_variants,
        "n_components": model.n_components,
        "basis": basis_set.kind,
        "L": basis_set.L,
        "fve": model.fve.tolist(),
        "conditional_f": cf.tolist(),
        "cochran_q": {"statistic": q.statistic, "df": q.df, "pvalue": q.pvalue,
                      "n_iter": q.n_iter},
        "q_strength": [
            {"component": k + 1, "statistic": r.statistic, "df": r.df, "pvalue": r.pvalue}
            for k, r in enumerate(qs)
        ],
        "sargan": {"statistic": s_stat, "df": s_df,
                   "pvalue": None if np.isnan(s_p) else s_p},
        "ivw": {"gamma": ivw.gamma.tolist(), "tau2": ivw.tau2},
        "gamma": fit.gamma.tolist(),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    print(f"conditional F: {np.array2string(cf, precision=3)}")
    print(f"Q: {q.statistic:.3f} on {q.df} df (p = {q.pvalue:.4f})")
    print(f"wrote {args.out}")
    return 0


def _cmd_study(args) -> int:
    spec = load_study_spec(args.spec)
    if args.jobs is not None:
        spec.jobs = args.jobs
    result = run_study(spec)
    os.makedirs(args.out, exist_ok=True)
    result.records.to_csv(os.path.join(args.out, "records.csv"), index=False)
    result.summary.to_csv(os.path.join(args.out, "summary.csv"), index=False)
    result.strength.to_csv(os.path.join(args.out, "strength.csv"), index=False)
    if result.n_errors:
        print(f"{result.n_errors} replicate(s) failed", file=sys.stderr)
    with pd.option_context("display.width", 120, "display.max_rows", None):
        print(result.summary.to_string(index=False))
        print("mean conditional F per scenario:")
        print(result.strength.to_string(index=False))
    print(f"wrote records.csv, summary.csv and strength.csv to {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpcmr",
        description="Time-varying effect estimation from sparse exposures and genetic instruments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a synthetic cohort as CSV files")
    p_sim.add_argument("--scenario", required=True,
                       help="exposure letter plus outcome digit, e.g. A3")
    p_sim.add_argument("--n", type=int, default=10000, help="number of subjects")
    p_sim.add_argument("--variants", type=int, default=30, help="number of variants")
    p_sim.add_argument("--obs-per-subject", type=int, default=10)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    def add_inputs(p):
        p.add_argument("--exposure", required=True, help="long-format exposure CSV")
        p.add_argument("--genotype", required=True, help="wide genotype CSV")
        p.add_argument("--outcome", required=True, help="outcome CSV")
        p.add_argument("--basis", choices=["eigen", "poly"], default="eigen")
        p.add_argument("--L", type=int, default=None,
                       help="basis size (default: retained components)")
        p.add_argument("--fve", type=float, default=0.95)
        p.add_argument("--max-components", type=int, default=None)

    p_fit = sub.add_parser("fit", help="fit the effect function from CSV inputs")
    add_inputs(p_fit)
    p_fit.add_argument("--lm-m", type=int, default=41,
                       help="robust grid points per parameter axis")
    p_fit.add_argument("--no-robust", action="store_true",
                       help="skip the robust confidence band")
    p_fit.add_argument("--expand", action="store_true",
                       help="double the robust grid window once if needed")
    p_fit.add_argument("--model-out", default=None, help="also save the component model as JSON")
    p_fit.add_argument("--out", required=True, help="output CSV path")
    p_fit.set_defaults(func=_cmd_fit)

    p_diag = sub.add_parser("diagnose", help="instrument diagnostics as JSON")
    add_inputs(p_diag)
    p_diag.add_argument("--out", required=True, help="output JSON path")
    p_diag.set_defaults(func=_cmd_diagnose)

    p_study = sub.add_parser("study", help="run a Monte-Carlo study from a TOML spec")
    p_study.add_argument("--spec", required=True, help="TOML study description")
    p_study.add_argument("--jobs", type=int, default=None, help="override spec parallelism")
    p_study.add_argument("--out", required=True, help="output directory")
    p_study.set_defaults(func=_cmd_study)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the documented code for usage is 1
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, StudyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
