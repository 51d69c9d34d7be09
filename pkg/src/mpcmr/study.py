"""Monte-Carlo study driver over simulation scenarios and strategies.

Each replicate simulates a fresh cohort, extracts components once, then
fits every requested strategy on the shared scores. Results come back as a
long-format record table plus per-(scenario, strategy, checkpoint)
aggregates of coverage and estimation error.
"""

from __future__ import annotations

import re
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .diagnostics import conditional_f
from .errors import DataError, StudyError
from .fpca import fit_fpca
from .pipeline import association_from_model, fit_mpcmr
from .simgen import SimConfig, gen_dataset, true_effect_at

__all__ = [
    "StudySpec",
    "StudyResult",
    "load_study_spec",
    "run_study",
    "aggregate_records",
    "aggregate_strength",
]

_STRATEGIES = ("association", "mpcmr-eigen", "mpcmr-poly")
_SCENARIO_RE = re.compile(r"^[ABC][1-6]$")
_HORIZON = SimConfig.__dataclass_fields__["T"].default


@dataclass
class StudySpec:
    """Configuration of one Monte-Carlo study."""

    scenarios: list
    reps: int
    n: int = 10000
    obs_per_subject: int = 10
    strategies: list = field(default_factory=lambda: list(_STRATEGIES))
    checkpoints: list = field(default_factory=lambda: [10.0, 20.0, 30.0, 40.0])
    lm_grid_points: int = 41
    fve: float = 0.95
    max_components: int = 2
    seed: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        if not self.scenarios:
            raise DataError("study needs at least one scenario")
        for s in self.scenarios:
            if not _SCENARIO_RE.match(s):
                raise DataError(f"bad scenario label: {s!r}")
        if self.reps < 1:
            raise DataError("reps must be positive")
        for st in self.strategies:
            if st not in _STRATEGIES:
                raise DataError(f"unknown strategy: {st!r}")
        if not self.strategies:
            raise DataError("study needs at least one strategy")
        self.checkpoints = [float(c) for c in self.checkpoints]
        for c in self.checkpoints:
            if not 0.0 < c < _HORIZON:
                raise DataError(f"checkpoint {c} lies outside the observation window")
        if self.jobs < 1:
            raise DataError("jobs must be positive")


def load_study_spec(path: str) -> StudySpec:
    """Read a study description from a TOML file; `R` is accepted for reps."""
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"study spec not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"bad TOML in {path}: {exc}") from exc
    if "R" in raw and "reps" not in raw:
        raw["reps"] = raw.pop("R")
    known = {f for f in StudySpec.__dataclass_fields__}
    extra = set(raw) - known
    if extra:
        raise DataError(f"unknown study spec keys: {sorted(extra)}")
    if "scenarios" not in raw or "reps" not in raw:
        raise DataError("study spec must set scenarios and reps")
    return StudySpec(**raw)


def _rep_seed(seed: int, scenario_index: int, rep: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(scenario_index, rep))
    return int(ss.generate_state(1)[0])


def _covered_by_band(band, t_idx, beta_true):
    """Score-test band coverage; a flagged boundary side counts as open."""
    if band.n_accepted == 0:
        return False
    lo = band.lo[t_idx]
    hi = band.hi[t_idx]
    if lo <= beta_true <= hi:
        return True
    if beta_true < lo and band.unbounded_lo[t_idx]:
        return True
    if beta_true > hi and band.unbounded_hi[t_idx]:
        return True
    return False


def run_rep(spec: StudySpec, scenario: str, rep: int) -> list:
    """One replicate: simulate, extract components, fit all strategies."""
    cfg = SimConfig(
        n=spec.n,
        obs_per_subject=spec.obs_per_subject,
        exposure_scenario=scenario[0],
        outcome_scenario=int(scenario[1]),
        seed=_rep_seed(spec.seed, spec.scenarios.index(scenario), rep),
    )
    ds = gen_dataset(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit_fpca(
            ds.sparse_exposure,
            fve_threshold=spec.fve,
            max_components=spec.max_components,
        )
    grid_t = model.grid.points
    idx = {c: int(np.argmin(np.abs(grid_t - c))) for c in spec.checkpoints}
    truth = {c: true_effect_at(cfg, c) for c in spec.checkpoints}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cf = conditional_f(ds.genotype.values, model.scores)
    strength = {
        f"cond_f{k + 1}": float(cf[k]) if k < cf.size else float("nan")
        for k in range(2)
    }

    rows = []
    for strategy in spec.strategies:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if strategy == "association":
                from .basis import make_basis

                basis_set = make_basis("poly", model.n_components, model.grid, model)
                af = association_from_model(basis_set=basis_set, model=model,
                                            outcome_values=ds.outcome.values)
                for c in spec.checkpoints:
                    i = idx[c]
                    lo = af.beta[i] - 1.96 * af.se[i]
                    hi = af.beta[i] + 1.96 * af.se[i]
                    rows.append({
                        "scenario": scenario, "rep": rep, "strategy": strategy,
                        "t": c, "beta_hat": float(af.beta[i]),
                        "beta_true": truth[c], "lo": float(lo), "hi": float(hi),
                        "covered": bool(lo <= truth[c] <= hi),
                        "gmm_covered": bool(lo <= truth[c] <= hi),
                        "band_points": -1,
                        **strength,
                    })
                continue
            kind = "eigen" if strategy == "mpcmr-eigen" else "poly"
            fitres = fit_mpcmr(
                ds.sparse_exposure, ds.genotype, ds.outcome,
                basis=kind, model=model, lm_m=spec.lm_grid_points,
            )
        for c in spec.checkpoints:
            i = idx[c]
            band = fitres.band
            rows.append({
                "scenario": scenario, "rep": rep, "strategy": strategy,
                "t": c, "beta_hat": float(fitres.beta[i]),
                "beta_true": truth[c],
                "lo": float(band.lo[i]), "hi": float(band.hi[i]),
                "covered": _covered_by_band(band, i, truth[c]),
                "gmm_covered": bool(
                    fitres.gmm_lo[i] <= truth[c] <= fitres.gmm_hi[i]
                ),
                "band_points": band.n_accepted,
                **strength,
            })
    return rows


@dataclass
class StudyResult:
    spec: StudySpec
    records: pd.DataFrame
    summary: pd.DataFrame
    strength: pd.DataFrame
    n_errors: int
    error_messages: list


def aggregate_records(records: pd.DataFrame) -> pd.DataFrame:
    """Coverage percentage, bias and MSE per (scenario, strategy, checkpoint)."""
    def _agg(g):
        err = g["beta_hat"] - g["beta_true"]
        return pd.Series({
            "n_reps": len(g),
            "coverage": 100.0 * g["covered"].mean(),
            "gmm_coverage": 100.0 * g["gmm_covered"].mean(),
            "bias": err.mean(),
            "mse": (err**2).mean(),
            "mean_width": (g["hi"] - g["lo"]).mean(),
        })

    out = (
        records.groupby(["scenario", "strategy", "t"], sort=True)
        .apply(_agg, include_groups=False)
        .reset_index()
    )
    out["n_reps"] = out["n_reps"].astype(int)
    return out


def aggregate_strength(records: pd.DataFrame) -> pd.DataFrame:
    """Mean conditional F per component, one row per scenario."""
    per_rep = records.drop_duplicates(subset=["scenario", "rep"])
    return (
        per_rep.groupby("scenario", sort=True)[["cond_f1", "cond_f2"]]
        .mean()
        .reset_index()
    )


def run_study(spec: StudySpec) -> StudyResult:
    """Run all replicates; fail when more than 5% of them error out."""
    tasks = [(spec, s, r) for s in spec.scenarios for r in range(spec.reps)]
    rows = []
    failures = []
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            futures = {pool.submit(run_rep, *task): task for task in tasks}
            for fut, task in futures.items():
                try:
                    rows.extend(fut.result())
                except Exception as exc:  # noqa: BLE001 - replicate isolation
                    failures.append(f"{task[1]} rep {task[2]}: {exc}")
    else:
        for task in tasks:
            try:
                rows.extend(run_rep(*task))
            except Exception as exc:  # noqa: BLE001 - replicate isolation
                failures.append(f"{task[1]} rep {task[2]}: {exc}")
    n_total = len(tasks)
    if len(failures) > 0.05 * n_total:
        raise StudyError(
            f"{len(failures)} of {n_total} replicates failed; first: {failures[0]}"
        )
    records = pd.DataFrame(rows)
    summary = aggregate_records(records) if len(rows) else pd.DataFrame()
    strength = aggregate_strength(records) if len(rows) else pd.DataFrame()
    return StudyResult(
        spec=spec, records=records, summary=summary, strength=strength,
        n_errors=len(failures), error_messages=failures,
    )
