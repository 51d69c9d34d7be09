"""Individual-level data containers and CSV ingestion.

Holds three aligned datasets: sparse longitudinal exposure measurements,
a genotype (instrument dosage) matrix, and an end-of-window outcome vector.
Alignment is always by explicit subject-id join, never by row position.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError

__all__ = [
    "LongitudinalExposure",
    "GenotypeMatrix",
    "OutcomeVector",
    "load_individual_data",
    "center_columns",
]


@dataclass
class LongitudinalExposure:
    """Sparse per-subject (time, value) exposure measurements.

    Parameters
    ----------
    subject_ids : list of str
        One opaque identifier per subject.
    times : list of np.ndarray
        Per-subject measurement times, each sorted nondecreasing and inside
        [t_min, t_max]. Duplicate times are kept as-is, never averaged.
    values : list of np.ndarray
        Per-subject exposure values, same lengths as ``times``.
    t_min, t_max : float
        Declared observation window.

    Treat instances as immutable after construction; they are safe to share
    across parallel workers.
    """

    subject_ids: list[str]
    times: list[np.ndarray]
    values: list[np.ndarray]
    t_min: float
    t_max: float
    _flat: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (len(self.subject_ids) == len(self.times) == len(self.values)):
            raise DataError("subject_ids, times and values must have equal length")
        if len(self.subject_ids) == 0:
            raise DataError("exposure data must contain at least one subject")
        if not self.t_min < self.t_max:
            raise DataError("observation window requires t_min < t_max")
        for sid, t, x in zip(self.subject_ids, self.times, self.values):
            if t.shape != x.shape or t.ndim != 1:
                raise DataError(f"subject {sid!r}: times/values shape mismatch")
            if t.size == 0:
                raise DataError(f"subject {sid!r}: no measurements")
            if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
                raise DataError(f"subject {sid!r}: non-finite measurement")
            if np.any(np.diff(t) < 0):
                raise DataError(f"subject {sid!r}: times not sorted")
            if t[0] < self.t_min or t[-1] > self.t_max:
                raise DataError(
                    f"subject {sid!r}: time outside [{self.t_min}, {self.t_max}]"
                )

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_obs(self) -> int:
        return sum(t.size for t in self.times)

    def flatten(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return pooled arrays (subject_index, time, value), cached."""
        if self._flat is None:
            idx = np.repeat(
                np.arange(self.n_subjects), [t.size for t in self.times]
            )
            t = np.concatenate(self.times)
            x = np.concatenate(self.values)
            self._flat = (idx, t, x)
        return self._flat


@dataclass
class GenotypeMatrix:
    """Instrument dosage matrix, one row per subject, one column per variant."""

    subject_ids: list[str]
    variant_ids: list[str]
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError("genotype values must be a 2-D matrix")
        n, j = self.values.shape
        if n != len(self.subject_ids) or j != len(self.variant_ids):
            raise DataError("genotype matrix shape does not match id lists")
        if not np.all(np.isfinite(self.values)):
            raise DataError("genotype matrix contains non-finite entries")
        sd = self.values.std(axis=0)
        if np.any(sd == 0):
            dead = [v for v, s in zip(self.variant_ids, sd) if s == 0]
            raise DataError(f"constant genotype columns rejected: {dead}")

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_variants(self) -> int:
        return self.values.shape[1]


@dataclass
class OutcomeVector:
    """End-of-window outcome, one value per subject, measured at a single time."""

    subject_ids: list[str]
    values: np.ndarray
    measurement_time: float

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != len(self.subject_ids):
            raise DataError("outcome length does not match subject ids")
        if not np.all(np.isfinite(self.values)):
            raise DataError("outcome contains non-finite values")

    @property
    def n_subjects(self) -> int:
        return self.values.size


def center_columns(matrix: np.ndarray) -> np.ndarray:
    """Subtract the sample mean from every column.

    Idempotent up to floating-point roundoff and variance-preserving.
    """
    m = np.asarray(matrix, dtype=float)
    if m.size == 0:
        raise DataError("cannot center an empty matrix")
    return m - m.mean(axis=0, keepdims=True) if m.ndim == 2 else m - m.mean()


def _read_csv(path: str, required: list[str] | None = None) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except (pd.errors.ParserError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if required is not None and list(df.columns) != required:
        raise DataError(
            f"{path}: expected header {','.join(required)}, got {','.join(df.columns)}"
        )
    return df


def _check_numeric(df: pd.DataFrame, cols: list[str], path: str) -> None:
    for c in cols:
        col = pd.to_numeric(df[c], errors="coerce")
        bad = ~np.isfinite(col.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            # +2: one for the header row, one for 1-based line numbering
            line = int(np.flatnonzero(bad)[0]) + 2
            raise DataError(f"{path} line {line}: non-numeric or missing value in column {c!r}")
        df[c] = col.astype(float)


def load_individual_data(
    exposure_path: str, genotype_path: str, outcome_path: str
) -> tuple[LongitudinalExposure, GenotypeMatrix, OutcomeVector]:
    """Load and align the three CSV inputs by subject id.

    Expected schemas: exposure ``subject_id,time,value`` (one row per
    measurement); genotype ``subject_id,<variant>,...`` (one row per
    subject); outcome ``subject_id,outcome``.

    Subjects missing from any of the three files are dropped with a warning
    reporting the count. Subject order follows first appearance in the
    exposure file, so repeated loads yield identical datasets.
    """
    exp = _read_csv(exposure_path, ["subject_id", "time", "value"])
    _check_numeric(exp, ["time", "value"], exposure_path)

    gen = _read_csv(genotype_path)
    if len(gen.columns) < 2 or gen.columns[0] != "subject_id":
        raise DataError(f"{genotype_path}: expected header subject_id,<variant>,...")
    variant_ids = list(gen.columns[1:])
    _check_numeric(gen, variant_ids, genotype_path)
    if gen["subject_id"].duplicated().any():
        raise DataError(f"{genotype_path}: duplicate subject ids")

    out = _read_csv(outcome_path, ["subject_id", "outcome"])
    _check_numeric(out, ["outcome"], outcome_path)
    if out["subject_id"].duplicated().any():
        raise DataError(f"{outcome_path}: duplicate subject ids")

    exp["subject_id"] = exp["subject_id"].astype(str)
    gen["subject_id"] = gen["subject_id"].astype(str)
    out["subject_id"] = out["subject_id"].astype(str)

    exp_ids = list(dict.fromkeys(exp["subject_id"]))
    gen_ids = set(gen["subject_id"])
    out_ids = set(out["subject_id"])
    keep = [s for s in exp_ids if s in gen_ids and s in out_ids]
    n_dropped = (
        len(set(exp_ids) | gen_ids | out_ids) - len(keep)
    )
    if not keep:
        raise DataError("no subjects present in all three files")
    if n_dropped:
        warnings.warn(
            f"dropped {n_dropped} subject(s) missing from at least one file",
            stacklevel=2,
        )

    order = {s: i for i, s in enumerate(keep)}
    times: list[np.ndarray] = [None] * len(keep)
    values: list[np.ndarray] = [None] * len(keep)
    for sid, grp in exp.groupby("subject_id", sort=False):
        i = order.get(sid)
        if i is None:
            continue
        srt = np.argsort(grp["time"].to_numpy(), kind="stable")
        times[i] = grp["time"].to_numpy()[srt]
        values[i] = grp["value"].to_numpy()[srt]

    t_all = exp["time"].to_numpy()
    exposure = LongitudinalExposure(
        subject_ids=keep,
        times=times,
        values=values,
        t_min=float(t_all.min()),
        t_max=float(t_all.max()),
    )

    gen_row = {s: i for i, s in enumerate(gen["subject_id"])}
    gmat = gen[variant_ids].to_numpy(dtype=float)[[gen_row[s] for s in keep]]
    genotype = GenotypeMatrix(subject_ids=keep, variant_ids=variant_ids, values=gmat)

    out_row = {s: i for i, s in enumerate(out["subject_id"])}
    yvec = out["outcome"].to_numpy(dtype=float)[[out_row[s] for s in keep]]
    outcome = OutcomeVector(
        subject_ids=keep, values=yvec, measurement_time=exposure.t_max
    )
    return exposure, genotype, outcome
