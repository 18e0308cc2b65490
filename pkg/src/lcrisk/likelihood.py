"""Log-likelihood, log-prior, and log-posterior of a ParamSet against a cohort.

The observation density for an individual with covariates z reporting
(t, r) is a class mixture: each class contributes its weight times the
cause-specific rate at t times the probability of having survived all
true risks until t.  With parametric censoring the end-of-trial risk
enters exactly like the true risks (class-independent, no covariates);
with administrative censoring the censoring factors are constants across
the parameters and are dropped.

All class sums run through log-sum-exp: the exponents scale like
exp(beta . z) * Lambda(t) and underflow long before t_max otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .hazard import (ModelId, ParamSet, cumulative_at, cumulative_design,
                     log_rate_at, rate_design, unpack)

_LOG_2PI = math.log(2.0 * math.pi)
KNOT_PRIOR_SD = 2.0


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - amax), axis=axis))
    return out + np.squeeze(amax, axis=axis)


@dataclass(frozen=True)
class ObjectiveValue:
    log_likelihood: float
    log_prior: float
    log_posterior: float
    per_individual: np.ndarray | None = None


class LikelihoodCore:
    """Precomputed cohort tensors for fast repeated likelihood evaluation."""

    def __init__(self, cohort: Cohort, t_max: float | None = None):
        self.t_max = float(t_max) if t_max is not None else cohort.horizon()
        t = np.asarray(cohort.time, dtype=float)
        over = t > self.t_max
        if np.any(over):
            ids = [cohort.ids[i] for i in np.flatnonzero(over)[:5]]
            warnings.warn(
                f"{int(over.sum())} event time(s) beyond t_max={self.t_max} "
                f"clamped (first ids: {ids})")
            t = np.minimum(t, self.t_max)
        self.t = t
        self.z = np.asarray(cohort.covariates, dtype=float)
        if np.isnan(self.z).any():
            raise ValueError("cohort has missing covariates; standardize() first")
        event = np.asarray(cohort.event, dtype=int)
        self.n = cohort.n
        self.n_risks = cohort.n_risks
        self.n_covariates = cohort.n_covariates
        self.i_event = np.flatnonzero(event > 0)
        self.r_event = event[self.i_event] - 1
        self.i_cens = np.flatnonzero(event == 0)
        self.t_event = t[self.i_event]
        self._event_rows = np.arange(self.i_event.size)
        self._zt = np.ascontiguousarray(self.z.T)      # (P, N) for fast matmul
        self._has_t0 = bool(np.any(t == 0.0))
        self._designs: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._ids = cohort.ids

    def _design(self, n_knots: int):
        """Cached design matrices (cumulative all, rate at events, rate at censored)."""
        cached = self._designs.get(n_knots)
        if cached is None:
            cached = (
                np.ascontiguousarray(cumulative_design(self.t, n_knots, self.t_max).T),
                np.ascontiguousarray(rate_design(self.t_event, n_knots, self.t_max).T),
                np.ascontiguousarray(rate_design(self.t[self.i_cens], n_knots, self.t_max).T),
            )
            self._designs[n_knots] = cached
        return cached

    def class_log_scores(self, params: ParamSet) -> np.ndarray:
        """Per-individual, per-class log mixture terms, shape (N, L).

        Row i holds log[w_l * density of observation i within class l],
        without the class-independent censoring factors (those cancel in
        the class posterior and are added back by log_density).
        """
        cum_all, rate_ev, _ = self._design(params.model.n_knots)
        n = self.n
        model = params.model
        n_risks = params.n_risks
        n_classes = model.n_classes
        values = np.exp(params.log_knots)             # (R, Ls, K)
        with np.errstate(over="ignore", invalid="ignore"):
            a = (params.assoc.reshape(-1, params.n_covariates) @ self._zt)
            e = params.frailty[:, :, None] + a.reshape(
                n_risks, model.n_assoc_blocks, n)                # (R, L, N)
            lam_int = (values.reshape(-1, model.n_knots) @ cum_all).reshape(
                n_risks, model.n_spline_blocks, n)               # (R, Ls, N)
            g_terms = np.exp(e) * lam_int                        # (R, L, N)
            if self._has_t0:
                g_terms = np.where(
                    np.broadcast_to(lam_int, g_terms.shape) == 0.0, 0.0, g_terms)
            g = g_terms.sum(axis=0)                              # (L, N)
        scores = params.log_weights[None, :] - g.T               # (N, L)
        if self.i_event.size:
            rates = (values.reshape(-1, model.n_knots) @ rate_ev).reshape(
                n_risks, model.n_spline_blocks, self.i_event.size)
            log_rate = np.log(rates[self.r_event, :, self._event_rows])
            e_ev = e[self.r_event, :, self.i_event]              # (Ne, L)
            scores[self.i_event] += e_ev + log_rate
        return scores

    def log_density(self, params: ParamSet) -> np.ndarray:
        """Per-individual log observation density, shape (N,)."""
        out = _logsumexp(self.class_log_scores(params), axis=1)
        if params.cens_log_knots is not None:
            cum_all, _, rate_cens = self._design(params.model.n_knots)
            v0 = np.exp(params.cens_log_knots)
            out = out - v0 @ cum_all
            if self.i_cens.size:
                out[self.i_cens] += np.log(v0 @ rate_cens)
        return out

    def log_likelihood(self, params: ParamSet) -> float:
        return float(self.log_density(params).sum())


def event_density(params: ParamSet, z: np.ndarray, t, r: int):
    """Observation density for covariates z at (t, r); t may be an array.

    Risk r = 0 is the censoring event: with parametric censoring it carries
    the censoring rate factor, with administrative censoring only the
    survival product remains.
    """
    z = np.asarray(z, dtype=float)
    scalar = np.isscalar(t) or np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if not (0 <= r <= params.n_risks):
        raise ValueError(f"risk label {r} outside 0..{params.n_risks}")
    e = params.frailty + np.einsum("rqp,p->rq", params.assoc, z)   # (R, L)
    lam_int = cumulative_at(params.log_knots, params.t_max, t)     # (R, Ls, T)
    with np.errstate(over="ignore", invalid="ignore"):
        g_terms = np.exp(e)[:, :, None] * lam_int
        g_terms = np.where(np.broadcast_to(lam_int, g_terms.shape) == 0.0,
                           0.0, g_terms)
    g = g_terms.sum(axis=0)                                        # (L, T)
    base = params.log_weights[:, None] - g
    if r == 0:
        out = np.exp(_logsumexp(base, axis=0))
    else:
        log_rate = log_rate_at(params.log_knots, params.t_max, t)  # (R, Ls, T)
        terms = base + e[r - 1][:, None] + log_rate[r - 1]
        out = np.exp(_logsumexp(terms, axis=0))
    if params.cens_log_knots is not None:
        lam0 = cumulative_at(params.cens_log_knots, params.t_max, t)
        out = out * np.exp(-lam0)
        if r == 0:
            out = out * np.exp(log_rate_at(params.cens_log_knots, params.t_max, t))
    return float(out[0]) if scalar else out


def log_likelihood(params: ParamSet, cohort: Cohort,
                   t_max: float | None = None) -> float:
    """Sum of per-individual log densities; warns and returns -inf on zeros."""
    core = LikelihoodCore(cohort, t_max=t_max or params.t_max)
    dens = core.log_density(params)
    bad = ~np.isfinite(dens)
    if bad.any():
        ids = [cohort.ids[i] for i in np.flatnonzero(bad)[:5]]
        warnings.warn(f"zero observation density for individual(s) {ids}")
        return float("-inf")
    return float(dens.sum())


def log_prior(params: ParamSet) -> float:
    """Log prior density of a ParamSet, evaluated on the constrained space.

    Flat (maximum-entropy) prior on the class weights, standard normal on
    every frailty and association, and N(0, sd=2) on each free log anchor
    of the base rates.
    """
    model = params.model
    lp = math.lgamma(model.n_classes)          # log((L-1)!)
    gauss = np.concatenate([params.frailty.ravel(), params.assoc.ravel()])
    lp += -0.5 * float(gauss @ gauss) - 0.5 * gauss.size * _LOG_2PI
    free = []
    if model.n_knots > 1:
        free.append(params.log_knots[:, :, 1:].ravel())
    if params.cens_log_knots is not None:
        free.append(params.cens_log_knots.ravel())
    if free:
        gk = np.concatenate(free)
        var = KNOT_PRIOR_SD ** 2
        lp += -0.5 * float(gk @ gk) / var - 0.5 * gk.size * math.log(2 * math.pi * var)
    return lp


def log_posterior(params: ParamSet, cohort: Cohort,
                  per_individual: bool = False) -> ObjectiveValue:
    """Constrained-space posterior decomposition (likelihood + prior)."""
    core = LikelihoodCore(cohort, t_max=params.t_max)
    dens = core.log_density(params)
    ll = float(dens.sum())
    lp = log_prior(params)
    return ObjectiveValue(
        log_likelihood=ll,
        log_prior=lp,
        log_posterior=ll + lp,
        per_individual=dens if per_individual else None,
    )


def simplex_log_jacobian(weights: np.ndarray) -> float:
    """log |dw/dlogits| for the softmax map with the last logit pinned."""
    if weights.size == 1:
        return 0.0
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(weights)))


def make_objective(model: ModelId, cohort: Cohort, censoring: str,
                   t_max: float | None = None):
    """Negative unconstrained-space log posterior S(v), ready for minimisation.

    S(v) = -(log likelihood + log prior + softmax Jacobian); the Jacobian
    term keeps the flat simplex prior flat after the change of variables to
    weight logits.  Returns (objective, core).
    """
    core = LikelihoodCore(cohort, t_max=t_max)
    n_risks, p = core.n_risks, core.n_covariates
    horizon = core.t_max

    def objective(vec: np.ndarray) -> float:
        vec = np.asarray(vec, dtype=float)
        if not np.all(np.isfinite(vec)):
            return float("inf")
        params = unpack(vec, model, n_risks, p, horizon, censoring)
        ll = core.log_density(params).sum()
        if not np.isfinite(ll):
            return float("inf")
        val = ll + log_prior(params) + simplex_log_jacobian(params.weights)
        return float("inf") if not np.isfinite(val) else -float(val)

    return objective, core
