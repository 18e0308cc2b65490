"""Reportable quantities derived from a fitted parameter set.

Crude quantities describe a risk as observed in the presence of all other
risks; decontaminated quantities describe the same risk with every other
risk switched off, which the latent-class construction makes available in
closed form.  Also here: cumulative incidence, retrospective class
posteriors, hazard-ratio conversions, Kaplan-Meier diagnostics, and
allocation-quality scoring against synthetic truth.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .hazard import ParamSet, cumulative_at, log_rate_at
from .likelihood import LikelihoodCore, _logsumexp

QUADRATURE_REFINE = 8   # even Simpson subdivisions per output-grid step


def _predictors(params: ParamSet, z: np.ndarray) -> np.ndarray:
    """Linear predictors frailty + assoc . z for all (risk, class), (R, L)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (params.n_covariates,):
        raise ValueError(
            f"covariate vector must have length {params.n_covariates}")
    return params.frailty + np.einsum("rqp,p->rq", params.assoc, z)


def _exposures(params: ParamSet, e: np.ndarray, t: np.ndarray) -> np.ndarray:
    """exp(beta.z) * Lambda_r(t) per (risk, class, time), shape (R, L, T)."""
    lam_int = cumulative_at(params.log_knots, params.t_max, t)   # (R, Ls, T)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(e)[:, :, None] * lam_int
        out = np.where(np.broadcast_to(lam_int, out.shape) == 0.0, 0.0, out)
    return out


def decon_survival_by_class(params: ParamSet, z, risk: int, time_grid) -> np.ndarray:
    """Class-specific decontaminated survival, shape (L, T)."""
    t = np.asarray(time_grid, dtype=float)
    e = _predictors(params, z)
    expo = _exposures(params, e, t)
    return np.exp(-expo[risk - 1])


def decon_survival(params: ParamSet, z, risk: int, time_grid) -> np.ndarray:
    """Mixture decontaminated survival for one true risk (closed form)."""
    per_class = decon_survival_by_class(params, z, risk, time_grid)
    return params.weights @ per_class


def decon_hazard(params: ParamSet, z, risk: int, t) -> np.ndarray:
    """Decontaminated cause-specific hazard (single-risk exposure ratio)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    e = _predictors(params, z)
    expo = _exposures(params, e, t)[risk - 1]                   # (L, T)
    logw = params.log_weights[:, None]
    log_rate = log_rate_at(params.log_knots, params.t_max, t)[risk - 1]
    log_num = _logsumexp(logw + log_rate + e[risk - 1][:, None] - expo, axis=0)
    log_den = _logsumexp(logw - expo, axis=0)
    return np.exp(log_num - log_den)


def crude_hazard(params: ParamSet, z, risk: int, t) -> np.ndarray:
    """Crude cause-specific hazard: mixture ratio with all-risk survival."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    e = _predictors(params, z)
    expo_all = _exposures(params, e, t).sum(axis=0)             # (L, T)
    logw = params.log_weights[:, None]
    log_rate = log_rate_at(params.log_knots, params.t_max, t)[risk - 1]
    log_num = _logsumexp(logw + log_rate + e[risk - 1][:, None] - expo_all, axis=0)
    log_den = _logsumexp(logw - expo_all, axis=0)
    out = np.exp(log_num - log_den)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(
            "crude hazard overflow: every class underflowed simultaneously")
    return out


def _cumulative_quadrature(func, grid: np.ndarray,
                           refine: int = QUADRATURE_REFINE) -> np.ndarray:
    """Integral of func from 0 to each grid point, composite Simpson.

    Each output step is subdivided into `refine` (even) panels, so interior
    kinks of the piecewise-linear rates cost at most one sub-panel of
    accuracy.  func must map a flat time array to values with time on the
    last axis; leading axes (e.g. classes) integrate in one pass.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("time grid must be a 1-D array")
    if np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ValueError("time grid must be strictly increasing and nonnegative")
    prepended = grid[0] > 0
    full = np.concatenate(([0.0], grid)) if prepended else grid
    if full.size == 1:
        probe = func(full)
        return np.zeros(probe.shape[:-1] + (1,))
    steps = np.diff(full)                                       # (S,)
    frac = np.linspace(0.0, 1.0, refine + 1)
    fine = full[:-1, None] + steps[:, None] * frac[None, :]      # (S, refine+1)
    vals = func(fine.ravel())
    vals = vals.reshape(vals.shape[:-1] + fine.shape)
    weights = np.ones(refine + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    seg = np.einsum("...sk,k->...s", vals, weights) * (steps / refine / 3.0)
    lead = seg.shape[:-1]
    cum = np.concatenate(
        [np.zeros(lead + (1,)), np.cumsum(seg, axis=-1)], axis=-1)
    return cum[..., 1:] if prepended else cum


def crude_survival(params: ParamSet, z, risk: int, time_grid,
                   refine: int = QUADRATURE_REFINE) -> np.ndarray:
    """exp(-integral of the crude hazard), quadrature over the grid."""
    integral = _cumulative_quadrature(
        lambda t: crude_hazard(params, z, risk, t), np.asarray(time_grid, float),
        refine=refine)
    return np.exp(-integral)


def _incidence_integrand(params: ParamSet, e: np.ndarray, risk: int):
    """Class-specific incidence integrand lambda_r e^{beta.z - sum exposures}."""

    def func(t):
        expo_all = _exposures(params, e, t).sum(axis=0)          # (L, T)
        if risk == 0:
            terms = -expo_all              # censoring rate factored in below
        else:
            log_rate = log_rate_at(params.log_knots, params.t_max, t)
            terms = log_rate[risk - 1] + e[risk - 1][:, None] - expo_all
        out = np.exp(terms)
        if params.cens_log_knots is not None:
            lam0 = cumulative_at(params.cens_log_knots, params.t_max, t)
            out = out * np.exp(-lam0)[None, :]
            if risk == 0:
                rate0 = log_rate_at(params.cens_log_knots, params.t_max, t)
                out = out * np.exp(rate0)[None, :]
        return np.broadcast_to(out, (params.model.n_classes, t.size))

    return func


def cumulative_incidence_by_class(params: ParamSet, z, risk: int, time_grid,
                                  refine: int = QUADRATURE_REFINE) -> np.ndarray:
    """Unweighted class-specific cumulative incidence, shape (L, T)."""
    if risk == 0 and params.cens_log_knots is None:
        raise ValueError("administrative censoring has no incidence function")
    t = np.asarray(time_grid, dtype=float)
    e = _predictors(params, z)
    integrand = _incidence_integrand(params, e, risk)
    return _cumulative_quadrature(integrand, t, refine=refine)


def cumulative_incidence(params: ParamSet, z, risk: int, time_grid,
                         per_class: bool = False,
                         refine: int = QUADRATURE_REFINE):
    """Cause-specific cumulative incidence; optionally its class split.

    The total equals the weight-weighted sum of the class components by
    construction (same quadrature applied to a linear combination).
    """
    rows = cumulative_incidence_by_class(params, z, risk, time_grid, refine)
    total = params.weights @ rows
    if per_class:
        return total, rows
    return total


@dataclass(frozen=True)
class CurveSet:
    """Sampled curves for every true risk at one covariate vector."""

    time_grid: np.ndarray
    z: np.ndarray
    crude_hazard: np.ndarray          # (R, T)
    decon_hazard: np.ndarray          # (R, T)
    crude_survival: np.ndarray        # (R, T)
    decon_survival: np.ndarray        # (R, T)
    cumulative_incidence: np.ndarray  # (R, T)
    decon_survival_class: np.ndarray | None = None   # (R, L, T)
    incidence_class: np.ndarray | None = None        # (R, L, T)

    def __post_init__(self):
        for name in ("crude_survival", "decon_survival"):
            s = getattr(self, name)
            if np.any(s > 1.0 + 1e-9) or np.any(s < -1e-12):
                raise ValueError(f"{name} leaves [0, 1]")
            if np.any(np.diff(s, axis=-1) > 1e-9):
                raise ValueError(f"{name} is not non-increasing")
        f = self.cumulative_incidence
        if np.any(np.diff(f, axis=-1) < -1e-9):
            raise ValueError("cumulative incidence must be non-decreasing")
        if np.any(f.sum(axis=0) > 1.0 + 1e-6):
            raise ValueError("total cumulative incidence exceeds 1")

    def header(self) -> list[str]:
        cols = ["time"]
        n_risks = self.crude_hazard.shape[0]
        for r in range(1, n_risks + 1):
            cols += [f"crude_hazard_r{r}", f"decon_hazard_r{r}",
                     f"crude_survival_r{r}", f"decon_survival_r{r}",
                     f"cum_incidence_r{r}"]
        if self.decon_survival_class is not None:
            n_classes = self.decon_survival_class.shape[1]
            for r in range(1, n_risks + 1):
                for l in range(1, n_classes + 1):
                    cols.append(f"decon_survival_r{r}_class{l}")
            for r in range(1, n_risks + 1):
                for l in range(1, n_classes + 1):
                    cols.append(f"cum_incidence_r{r}_class{l}")
        return cols

    def rows(self):
        n_risks = self.crude_hazard.shape[0]
        for i, t in enumerate(self.time_grid):
            row = [t]
            for r in range(n_risks):
                row += [self.crude_hazard[r, i], self.decon_hazard[r, i],
                        self.crude_survival[r, i], self.decon_survival[r, i],
                        self.cumulative_incidence[r, i]]
            if self.decon_survival_class is not None:
                for r in range(n_risks):
                    row.extend(self.decon_survival_class[r, :, i])
                for r in range(n_risks):
                    row.extend(self.incidence_class[r, :, i])
            yield row


def curve_set(params: ParamSet, z, time_grid, per_class: bool = True,
              refine: int = QUADRATURE_REFINE) -> CurveSet:
    """Evaluate the full curve family on a grid for one covariate vector."""
    t = np.asarray(time_grid, dtype=float)
    n_risks = params.n_risks
    n_classes = params.model.n_classes
    shape = (n_risks, t.size)
    ch, dh, cs, ds, ci = (np.empty(shape) for _ in range(5))
    dsc = np.empty((n_risks, n_classes, t.size)) if per_class else None
    fic = np.empty((n_risks, n_classes, t.size)) if per_class else None
    for r in range(1, n_risks + 1):
        ch[r - 1] = crude_hazard(params, z, r, t)
        dh[r - 1] = decon_hazard(params, z, r, t)
        cs[r - 1] = crude_survival(params, z, r, t, refine=refine)
        per = decon_survival_by_class(params, z, r, t)
        ds[r - 1] = params.weights @ per
        total, rows = cumulative_incidence(params, z, r, t, per_class=True,
                                           refine=refine)
        ci[r - 1] = total
        if per_class:
            dsc[r - 1] = per
            fic[r - 1] = rows
    return CurveSet(time_grid=t, z=np.asarray(z, dtype=float),
                    crude_hazard=ch, decon_hazard=dh, crude_survival=cs,
                    decon_survival=ds, cumulative_incidence=ci,
                    decon_survival_class=dsc, incidence_class=fic)


def assign_class(params: ParamSet, z, t: float, r: int) -> np.ndarray:
    """Retrospective class membership posterior for one observation.

    For a censored observation (r = 0) the class-independent censoring
    factors cancel and the posterior rests on the survival product alone.
    """
    e = _predictors(params, z)
    expo_all = _exposures(params, e, np.atleast_1d(float(t))).sum(axis=0)[:, 0]
    scores = params.log_weights - expo_all
    if r != 0:
        log_rate = log_rate_at(params.log_knots, params.t_max, float(t))
        scores = scores + e[r - 1] + np.atleast_1d(log_rate[r - 1]).ravel()
    scores = scores - scores.max()
    post = np.exp(scores)
    return post / post.sum()


def assign_cohort(params: ParamSet, cohort: Cohort) -> np.ndarray:
    """Class posteriors for every individual, shape (N, L)."""
    core = LikelihoodCore(cohort, t_max=params.t_max)
    scores = core.class_log_scores(params)
    scores = scores - scores.max(axis=1, keepdims=True)
    post = np.exp(scores)
    return post / post.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class AllocationQuality:
    overall: float                 # fraction of correctly assigned individuals
    per_class: np.ndarray          # precision among those assigned to each class
    permutation: tuple[int, ...]   # label map applied to the assignments


def allocation_quality(assignments, truth, align: bool = False) -> AllocationQuality:
    """Score hard class assignments against known true labels.

    With align=True the assignment labels are relabelled by the
    accuracy-maximising permutation first; fitted class labels are only
    defined up to permutation, so scoring against simulation truth needs
    this unless labels were already matched.
    """
    assignments = np.asarray(assignments, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if assignments.shape != truth.shape:
        raise ValueError("assignments and truth must have the same length")
    extra = set(np.unique(assignments)) - set(np.unique(truth))
    if extra and not align:
        raise ValueError(f"assignment labels {sorted(extra)} absent from truth")
    n_labels = int(max(assignments.max(), truth.max())) + 1
    best_perm = tuple(range(n_labels))
    if align:
        best_q = -1.0
        for perm in itertools.permutations(range(n_labels)):
            mapped = np.asarray(perm)[assignments]
            q = float(np.mean(mapped == truth))
            if q > best_q:
                best_q, best_perm = q, perm
        assignments = np.asarray(best_perm)[assignments]
    overall = float(np.mean(assignments == truth))
    per_class = np.full(n_labels, np.nan)
    for l in range(n_labels):
        chosen = assignments == l
        if chosen.any():
            per_class[l] = float(np.mean(truth[chosen] == l))
    return AllocationQuality(overall=overall, per_class=per_class,
                             permutation=best_perm)


def align_classes(params: ParamSet, ref_assoc: np.ndarray) -> tuple[int, ...]:
    """Permutation making params' class associations closest to a reference.

    ref_assoc has shape (R, L, P); returns the order to pass to
    ParamSet.permute_classes.
    """
    ref = np.asarray(ref_assoc, dtype=float)
    n_classes = params.model.n_classes
    est = np.broadcast_to(params.assoc,
                          (params.n_risks, n_classes, params.n_covariates))
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(n_classes)):
        cost = float(np.sum((est[:, perm, :] - ref) ** 2))
        if cost < best_cost:
            best, best_cost = perm, cost
    return best


@dataclass(frozen=True)
class AssociationSummary:
    beta: float
    sigma: float
    hazard_ratio: float
    ci_low: float
    ci_high: float
    p_value: float


def association_summary(beta: float, sigma: float) -> AssociationSummary:
    """Translate a standardized-covariate association into HR / CI / p.

    HR = exp(2 beta) (the balanced two-unit contrast on the z-score scale),
    95% CI bounds exp(2 (beta +/- 1.96 sigma)), and the two-sided normal
    p = 1 - erf(|beta| / (sqrt(2) sigma)).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    beta = float(beta)
    sigma = float(sigma)
    return AssociationSummary(
        beta=beta,
        sigma=sigma,
        hazard_ratio=math.exp(2.0 * beta),
        ci_low=math.exp(2.0 * (beta - 1.96 * sigma)),
        ci_high=math.exp(2.0 * (beta + 1.96 * sigma)),
        p_value=1.0 - math.erf(abs(beta) / (math.sqrt(2.0) * sigma)),
    )


@dataclass(frozen=True)
class KaplanMeierCurve:
    """Product-limit step function with its at-risk table."""

    times: np.ndarray       # distinct event times of the target risk
    survival: np.ndarray    # S(t) just after each step
    at_risk: np.ndarray
    events: np.ndarray

    def evaluate(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.times, t, side="right")
        steps = np.concatenate(([1.0], self.survival))
        return steps[idx]


def kaplan_meier(cohort: Cohort, risk: int, mask=None) -> KaplanMeierCurve:
    """Cause-specific Kaplan-Meier: other-risk events censor at their times."""
    if not (1 <= risk <= cohort.n_risks):
        raise ValueError(f"risk must be in 1..{cohort.n_risks}")
    if mask is None:
        mask = np.ones(cohort.n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("covariate filter selects no individuals")
    t = cohort.time[mask]
    d = cohort.event[mask] == risk
    event_times = np.unique(t[d])
    at_risk = np.empty(event_times.size, dtype=int)
    events = np.empty(event_times.size, dtype=int)
    surv = np.empty(event_times.size)
    s = 1.0
    for j, tau in enumerate(event_times):
        at_risk[j] = int(np.sum(t >= tau))
        events[j] = int(np.sum(d & (t == tau)))
        s *= 1.0 - events[j] / at_risk[j]
        surv[j] = s
    return KaplanMeierCurve(times=event_times, survival=surv,
                            at_risk=at_risk, events=events)


def covariate_quartiles(values: np.ndarray) -> np.ndarray:
    """25/50/75 percent quantiles per covariate column, shape (P, 3)."""
    return np.quantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75],
                       axis=0).T
