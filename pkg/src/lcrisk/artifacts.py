"""Self-contained fit artifacts and selection reports on disk.

A fit artifact bundles the winning parameters, their standard errors, the
covariate preprocessing map, and standardized covariate quartiles, so
curve and assignment commands never re-derive scaling from raw data (a
silent scale mismatch between fit time and report time is the failure
mode this guards against).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import PreprocessReport
from .hazard import ParamSet, params_from_kv, params_to_kv
from .inference import FitResult, ParamStdErrors, SelectionReport
from .kvdoc import as_float_array, dump_kv, parse_kv

FIT_FORMAT = "lcrisk-fit-v1"
SELECTION_FORMAT = "lcrisk-selection-v1"


def _stderr_to_kv(stderr: ParamStdErrors, prefix: str = "") -> dict[str, object]:
    records: dict[str, object] = {prefix + "sigma.weights": stderr.weights}
    n_risks = stderr.frailty.shape[0]
    for r in range(n_risks):
        records[f"{prefix}sigma.frailty.r{r + 1}"] = stderr.frailty[r]
        for q in range(stderr.assoc.shape[1]):
            records[f"{prefix}sigma.assoc.r{r + 1}.c{q + 1}"] = stderr.assoc[r, q]
        for q in range(stderr.log_knots.shape[1]):
            records[f"{prefix}sigma.log_knots.r{r + 1}.c{q + 1}"] = \
                stderr.log_knots[r, q]
    if stderr.cens_log_knots is not None:
        records[prefix + "sigma.cens_log_knots"] = stderr.cens_log_knots
    return records


def _stderr_from_kv(records: dict[str, object], params: ParamSet,
                    prefix: str = "") -> ParamStdErrors:
    model = params.model
    l, k, p = model.n_classes, model.n_knots, params.n_covariates
    weights = as_float_array(records[prefix + "sigma.weights"], l)
    frailty = np.stack([
        as_float_array(records[f"{prefix}sigma.frailty.r{r + 1}"], l)
        for r in range(params.n_risks)])
    assoc = np.stack([
        np.stack([as_float_array(records[f"{prefix}sigma.assoc.r{r + 1}.c{q + 1}"], p)
                  for q in range(model.n_assoc_blocks)])
        for r in range(params.n_risks)])
    knots = np.stack([
        np.stack([as_float_array(
            records[f"{prefix}sigma.log_knots.r{r + 1}.c{q + 1}"], k)
            for q in range(model.n_spline_blocks)])
        for r in range(params.n_risks)])
    cens = None
    if (prefix + "sigma.cens_log_knots") in records:
        cens = as_float_array(records[prefix + "sigma.cens_log_knots"], k)
    return ParamStdErrors(weights=weights, frailty=frailty, assoc=assoc,
                          log_knots=knots, cens_log_knots=cens)


def _fit_blocks(fit: FitResult, prefix: str = "") -> dict[str, object]:
    records: dict[str, object] = {}
    for key, value in params_to_kv(fit.theta_star).items():
        records[prefix + key] = value
    records.update(_stderr_to_kv(fit.stderr, prefix))
    records[prefix + "log_evidence"] = fit.log_evidence
    records[prefix + "best_objective"] = fit.best_objective
    records[prefix + "convergence"] = fit.convergence_flag
    records[prefix + "restarts"] = fit.restarts_used
    records[prefix + "grad_max"] = fit.grad_max
    records[prefix + "n_params"] = fit.n_params
    return records


@dataclass(frozen=True)
class FitArtifact:
    """Everything downstream commands need from one fitted model."""

    params: ParamSet
    stderr: ParamStdErrors
    report: PreprocessReport
    quartiles: np.ndarray            # (P, 3) standardized LQ / median / UQ
    log_evidence: float
    best_objective: float
    convergence_flag: str

    def dumps(self) -> str:
        records: dict[str, object] = {"format": FIT_FORMAT}
        records.update(params_to_kv(self.params))
        records.update(_stderr_to_kv(self.stderr))
        records["log_evidence"] = self.log_evidence
        records["best_objective"] = self.best_objective
        records["convergence"] = self.convergence_flag
        for key, value in self.report.to_kv().items():
            records["preprocess." + key] = value
        for j in range(self.quartiles.shape[0]):
            records[f"quartiles.c{j + 1}"] = self.quartiles[j]
        return dump_kv(records, header="fitted model artifact")

    @classmethod
    def loads(cls, text: str) -> "FitArtifact":
        records = parse_kv(text)
        if records.get("format") != FIT_FORMAT:
            raise ValueError("not a fit artifact (bad format line)")
        params = params_from_kv(records)
        stderr = _stderr_from_kv(records, params)
        pre = {key[len("preprocess."):]: value for key, value in records.items()
               if key.startswith("preprocess.")}
        report = PreprocessReport.from_kv(pre)
        quartiles = np.stack([
            as_float_array(records[f"quartiles.c{j + 1}"], 3)
            for j in range(params.n_covariates)])
        return cls(params=params, stderr=stderr, report=report,
                   quartiles=quartiles,
                   log_evidence=float(records["log_evidence"]),
                   best_objective=float(records["best_objective"]),
                   convergence_flag=str(records["convergence"]))

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.dumps())

    @classmethod
    def load(cls, path: str) -> "FitArtifact":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.loads(handle.read())


def from_fit(fit: FitResult, report: PreprocessReport,
             quartiles: np.ndarray) -> FitArtifact:
    return FitArtifact(params=fit.theta_star, stderr=fit.stderr,
                       report=report, quartiles=np.asarray(quartiles, float),
                       log_evidence=fit.log_evidence,
                       best_objective=fit.best_objective,
                       convergence_flag=fit.convergence_flag)


def selection_dumps(report: SelectionReport) -> str:
    records: dict[str, object] = {
        "format": SELECTION_FORMAT,
        "n_models": len(report.fits),
    }
    for i, row in enumerate(report.row_tuples(), start=1):
        k, l, m, y, logz, s_star, flag = row
        records[f"row.{i}"] = f"{k} {l} {m} {y} " \
                              f"{format(logz, '.17g')} {format(s_star, '.17g')} {flag}"
    winner = report.winner
    records["winner.model"] = (f"{winner.model.n_knots} "
                               f"{winner.model.n_classes} {winner.model.variant}")
    records.update(_fit_blocks(winner, prefix="winner."))
    return dump_kv(records, header="model selection report (ranked by log evidence)")


def write_selection(report: SelectionReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(selection_dumps(report))
