"""Cohort ingestion, validation, and covariate preprocessing.

A cohort is N individuals, each with an event time, an event label in
{0..R} (0 = end-of-trial censoring, 1..R = true risks), and P covariates
that may have missing entries.  Covariates are imputed by column average
and rescaled to zero mean and unit (population) variance before fitting.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .kvdoc import dump_kv, parse_kv, as_float_array


class CohortError(ValueError):
    """Domain-invalid cohort content."""


class CohortParseError(CohortError):
    """Malformed input file; carries a 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True)
class Cohort:
    """Immutable survival dataset; safe to share across workers."""

    ids: tuple[str, ...]
    time: np.ndarray          # (N,) nonnegative event/censoring times
    event: np.ndarray         # (N,) integer labels in {0..n_risks}
    covariates: np.ndarray    # (N, P) float64, NaN marks missing
    n_risks: int
    trial_end: float | None = None

    def __post_init__(self):
        time = np.ascontiguousarray(np.asarray(self.time, dtype=float))
        event = np.ascontiguousarray(np.asarray(self.event, dtype=int))
        cov = np.ascontiguousarray(np.asarray(self.covariates, dtype=float))
        if cov.ndim != 2:
            raise CohortError("covariates must be a 2-D array")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "covariates", cov)
        n = time.shape[0]
        if n < 1:
            raise CohortError("cohort must contain at least one individual")
        if len(self.ids) != n or event.shape[0] != n or cov.shape[0] != n:
            raise CohortError("ids, time, event, covariates must share length N")
        if self.n_risks < 1:
            raise CohortError("number of true risks must be >= 1")
        if not np.all(np.isfinite(time)):
            raise CohortError("event times must be finite")
        if np.any(time < 0):
            bad = int(np.argmax(time < 0))
            raise CohortError(f"negative event time for id {self.ids[bad]!r}")
        if np.any((event < 0) | (event > self.n_risks)):
            bad = int(np.argmax((event < 0) | (event > self.n_risks)))
            raise CohortError(
                f"event label {event[bad]} outside 0..{self.n_risks} "
                f"for id {self.ids[bad]!r}"
            )
        if self.trial_end is not None:
            if not (self.trial_end > 0):
                raise CohortError("trial_end must be positive")
            if np.any(time > self.trial_end):
                raise CohortError("trial_end is earlier than an observed event time")

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def horizon(self) -> float:
        """Fitting horizon: trial end when known, else the last observed time."""
        if self.trial_end is not None:
            return float(self.trial_end)
        return float(self.time.max())


@dataclass(frozen=True)
class PreprocessReport:
    """Per-covariate affine map z_std = (z_raw - mean) / scale, plus audit info."""

    mean: np.ndarray
    scale: np.ndarray
    imputed_count: np.ndarray
    constant: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        object.__setattr__(self, "imputed_count", np.asarray(self.imputed_count, dtype=int))
        constant = self.constant
        if constant is None:
            constant = np.zeros(self.mean.shape, dtype=bool)
        object.__setattr__(self, "constant", np.asarray(constant, dtype=bool))
        if np.any(self.scale <= 0):
            raise CohortError("covariate scale factors must be positive")

    def transform(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.mean) / self.scale

    def inverse(self, standardized: np.ndarray) -> np.ndarray:
        return np.asarray(standardized, dtype=float) * self.scale + self.mean

    def to_kv(self) -> dict[str, object]:
        return {
            "covariates": int(self.mean.size),
            "mean": self.mean,
            "scale": self.scale,
            "imputed": self.imputed_count,
            "constant": self.constant.astype(int),
        }

    @classmethod
    def from_kv(cls, records: dict[str, object]) -> "PreprocessReport":
        p = int(records["covariates"])
        return cls(
            mean=as_float_array(records["mean"], p),
            scale=as_float_array(records["scale"], p),
            imputed_count=as_float_array(records["imputed"], p).astype(int),
            constant=as_float_array(records["constant"], p).astype(bool),
        )

    def dumps(self) -> str:
        return dump_kv(self.to_kv(), header="covariate preprocessing report")

    @classmethod
    def loads(cls, text: str) -> "PreprocessReport":
        return cls.from_kv(parse_kv(text))


def impute_missing(column) -> np.ndarray:
    """Replace missing (NaN) entries by the average of the available ones."""
    col = np.asarray(column, dtype=float)
    missing = np.isnan(col)
    if missing.all():
        raise CohortError("cannot impute a column with no observed values")
    if not missing.any():
        return col.copy()
    out = col.copy()
    out[missing] = col[~missing].mean()
    return out


def standardize(cohort: Cohort) -> tuple[Cohort, PreprocessReport]:
    """Impute missing covariates, then rescale each column to z-scores.

    Uses the population variance (divide by N), so the transformed column has
    empirical mean 0 and variance exactly 1.  Constant columns are centered,
    kept at scale 1, and flagged in the report.
    """
    cov = cohort.covariates
    n, p = cov.shape
    means = np.empty(p)
    scales = np.empty(p)
    imputed = np.empty(p, dtype=int)
    constant = np.zeros(p, dtype=bool)
    out = np.empty_like(cov)
    for j in range(p):
        filled = impute_missing(cov[:, j])
        imputed[j] = int(np.isnan(cov[:, j]).sum())
        mu = filled.mean()
        sd = np.sqrt(np.mean((filled - mu) ** 2))
        if sd == 0.0:
            constant[j] = True
            sd = 1.0
        means[j] = mu
        scales[j] = sd
        out[:, j] = (filled - mu) / sd
    report = PreprocessReport(means, scales, imputed, constant)
    standardized = Cohort(
        ids=cohort.ids,
        time=cohort.time,
        event=cohort.event,
        covariates=out,
        n_risks=cohort.n_risks,
        trial_end=cohort.trial_end,
    )
    return standardized, report


def _sniff_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def load_cohort(source, schema: dict[str, object] | None = None,
                n_risks: int | None = None,
                trial_end: float | None = None) -> Cohort:
    """Read a delimited text table into a Cohort.

    Expected columns: id, time, event, z1..zP (header row required, comma or
    tab separated, auto-detected).  Empty covariate fields mark missing
    values.  ``schema`` may rename the id/time/event columns, e.g.
    ``{"id": "subject", "time": "t", "event": "cause"}``; remaining columns
    are taken as covariates in file order.
    """
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as handle:
            return load_cohort(handle, schema=schema, n_risks=n_risks,
                               trial_end=trial_end)
    if isinstance(source, bytes):
        source = io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase) or hasattr(source, "readline"):
        lines = source.read().splitlines()
    else:
        raise TypeError("source must be a path, bytes, or text stream")

    if not lines:
        raise CohortParseError("empty input", line=1)
    schema = schema or {}
    delim = _sniff_delimiter(lines[0])
    header = [h.strip() for h in lines[0].split(delim)]
    names = {"id": schema.get("id", "id"),
             "time": schema.get("time", "time"),
             "event": schema.get("event", "event")}
    try:
        col_id = header.index(names["id"])
        col_time = header.index(names["time"])
        col_event = header.index(names["event"])
    except ValueError as exc:
        raise CohortParseError(f"missing required column: {exc}", line=1)
    cov_cols = [k for k in range(len(header)) if k not in (col_id, col_time, col_event)]
    p = len(cov_cols)

    ids: list[str] = []
    times: list[float] = []
    events: list[int] = []
    cov_rows: list[list[float]] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = raw.split(delim)
        if len(fields) != len(header):
            raise CohortParseError(
                f"expected {len(header)} fields, found {len(fields)}", line=lineno)
        try:
            t = float(fields[col_time])
        except ValueError:
            raise CohortParseError(
                f"non-numeric time {fields[col_time]!r}", line=lineno)
        try:
            ev = int(fields[col_event])
        except ValueError:
            raise CohortParseError(
                f"non-integer event label {fields[col_event]!r}", line=lineno)
        row = []
        for c in cov_cols:
            cell = fields[c].strip()
            if cell == "":
                row.append(np.nan)
            else:
                try:
                    row.append(float(cell))
                except ValueError:
                    raise CohortParseError(
                        f"non-numeric covariate {cell!r}", line=lineno)
        if t < 0:
            raise CohortParseError(f"negative time {t}", line=lineno)
        if n_risks is not None and not (0 <= ev <= n_risks):
            raise CohortParseError(
                f"event label {ev} outside 0..{n_risks}", line=lineno)
        ids.append(fields[col_id].strip())
        times.append(t)
        events.append(ev)
        cov_rows.append(row)

    if not ids:
        raise CohortParseError("no data rows", line=2)
    inferred = max(1, max(events))
    r_count = inferred if n_risks is None else n_risks
    return Cohort(
        ids=tuple(ids),
        time=np.array(times),
        event=np.array(events),
        covariates=np.array(cov_rows, dtype=float).reshape(len(ids), p),
        n_risks=r_count,
        trial_end=trial_end,
    )


def write_cohort(cohort: Cohort, dest) -> None:
    """Write the CSV form read back by load_cohort (empty field = missing)."""
    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8") as handle:
            write_cohort(cohort, handle)
            return
    p = cohort.n_covariates
    header = ["id", "time", "event"] + [f"z{j + 1}" for j in range(p)]
    dest.write(",".join(header) + "\n")
    for i in range(cohort.n):
        cells = [cohort.ids[i],
                 format(cohort.time[i], ".17g"),
                 str(int(cohort.event[i]))]
        for j in range(p):
            v = cohort.covariates[i, j]
            cells.append("" if np.isnan(v) else format(v, ".17g"))
        dest.write(",".join(cells) + "\n")


def detect_censoring_mode(cohort: Cohort, tol: float = 1e-9) -> str:
    """'administrative' when every censoring time sits at the trial end.

    Deterministic end-of-trial censoring carries no information about the
    true-risk parameters, so the censoring-rate factors drop from the
    likelihood.  Any other censoring pattern gets its own parametric rate.
    """
    cens = cohort.time[cohort.event == 0]
    if cens.size == 0:
        return "administrative"
    t_end = cohort.horizon()
    if np.all(np.abs(cens - t_end) <= tol * max(1.0, abs(t_end))):
        return "administrative"
    return "parametric"
