"""MAP estimation, curvature-based uncertainty, and evidence-ranked model selection.

Each model on the (K, L, M) grid is fitted by randomized multistart
simplex search with stochastic refinement; the posterior curvature at the
optimum gives per-parameter standard errors and the Gaussian-approximated
log evidence  log Z = -S(theta*) + (Y/2) log 2pi - (1/2) log det A,
where S is the negative log posterior in the unconstrained packing, Y its
dimension, and A the Hessian of S at the optimum.  The grid winner is the
converged fit with the greatest evidence.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .cohort import Cohort, detect_censoring_mode
from .hazard import ModelId, ParamSet, pack, param_count, unpack
from .likelihood import make_objective
from .simplex import refined_minimize

_LOG_2PI = math.log(2.0 * math.pi)
EIGVAL_FLOOR_RATIO = 1e-8


class FitError(RuntimeError):
    """Optimization could not produce a usable fit."""


@dataclass(frozen=True)
class FitConfig:
    seed: int
    restarts: int = 5
    max_fev: int | None = None        # evaluation budget per simplex run
    tolerance: float = 1e-9
    refine_rounds: int = 10
    censoring: str = "auto"           # auto | administrative | parametric
    threads: int = 1

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.censoring not in ("auto", "administrative", "parametric"):
            raise ValueError(f"unknown censoring mode {self.censoring!r}")


@dataclass(frozen=True)
class ParamStdErrors:
    """Standard errors arranged like the ParamSet blocks they belong to.

    Weight errors come from the delta method through the softmax map; all
    other entries are read straight off the inverse-Hessian diagonal (the
    parameters are already unconstrained).  log_knots carries a leading
    zero column for the pinned first anchor of each true-risk rate.
    """

    weights: np.ndarray
    frailty: np.ndarray
    assoc: np.ndarray
    log_knots: np.ndarray
    cens_log_knots: np.ndarray | None = None

    def permute_classes(self, order, model: ModelId) -> "ParamStdErrors":
        order = list(order)
        assoc = self.assoc[:, order, :] if model.n_assoc_blocks > 1 else self.assoc
        knots = self.log_knots[:, order, :] if model.n_spline_blocks > 1 else self.log_knots
        return replace(self, weights=self.weights[order],
                       frailty=self.frailty[:, order], assoc=assoc,
                       log_knots=knots)


@dataclass(frozen=True)
class FitResult:
    model: ModelId
    theta_star: ParamSet
    sigma: np.ndarray                  # packed-space standard errors (Y,)
    stderr: ParamStdErrors
    hessian: np.ndarray                # (Y, Y), symmetric
    log_evidence: float
    best_objective: float              # minimised S = -log posterior
    restarts_used: int
    convergence_flag: str              # converged | max-iter | degenerate-hessian
    grad_max: float
    n_params: int
    censoring_mode: str
    t_max: float


@dataclass(frozen=True)
class SelectionReport:
    fits: tuple[FitResult, ...]        # ranked, best first
    winner: FitResult

    def row_tuples(self):
        for fit in self.fits:
            m = fit.model
            yield (m.n_knots, m.n_classes, m.variant, fit.n_params,
                   fit.log_evidence, fit.best_objective, fit.convergence_flag)


def model_grid(k_values, l_values, m_values) -> list[ModelId]:
    grid = [ModelId(k, l, m) for k in k_values for l in l_values for m in m_values]
    if not grid:
        raise ValueError("model grid is empty")
    return grid


def _draw_start(rng: np.random.Generator, model: ModelId, n_risks: int,
                n_covariates: int, censoring: str) -> np.ndarray:
    """Prior-consistent random start in the packed space."""
    k, l = model.n_knots, model.n_classes
    parts = [rng.standard_normal(l - 1)]
    parts.append(rng.standard_normal(n_risks * l))
    parts.append(rng.standard_normal(n_risks * model.n_assoc_blocks * n_covariates))
    parts.append(0.5 * rng.standard_normal(n_risks * model.n_spline_blocks * (k - 1)))
    if censoring == "parametric":
        parts.append(0.5 * rng.standard_normal(k))
    return np.concatenate(parts)


def _relabel_proposals(model: ModelId, n_risks: int, n_covariates: int,
                       t_max: float, censoring: str):
    """Candidate generator: permute one risk's class blocks, others fixed.

    The likelihood is invariant under relabeling all classes jointly, but
    permuting the class-specific blocks of a single risk changes how
    classes pair across risks; local optima with the wrong pairing are
    common and unreachable by continuous moves.
    """
    import itertools

    l = model.n_classes
    if l < 2:
        return None
    perms = [p for p in itertools.permutations(range(l))
             if p != tuple(range(l))]

    def generate(x: np.ndarray) -> list[np.ndarray]:
        params = unpack(x, model, n_risks, n_covariates, t_max, censoring)
        out = []
        for risk_idx in range(n_risks):
            for perm in perms:
                order = list(perm)
                frailty = params.frailty.copy()
                frailty[risk_idx] = frailty[risk_idx, order]
                assoc = params.assoc.copy()
                if model.n_assoc_blocks > 1:
                    assoc[risk_idx] = assoc[risk_idx, order]
                knots = params.log_knots.copy()
                if model.n_spline_blocks > 1:
                    knots[risk_idx] = knots[risk_idx, order]
                cand = replace(params, frailty=frailty, assoc=assoc,
                               log_knots=knots)
                out.append(pack(cand))
        return out

    return generate


def numeric_hessian(f, x: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian, symmetrised as (H + H^T)/2."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    hess = np.empty((n, n))
    fp = np.empty(n)
    fm = np.empty(n)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        fp[i] = f(x + ei)
        fm[i] = f(x - ei)
        hess[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / (h[i] * h[i])
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            val = (f(x + ei + ej) - f(x + ei - ej)
                   - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h[i] * h[j])
            hess[i, j] = val
            hess[j, i] = val
    return 0.5 * (hess + hess.T)


def _central_gradient(f, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = rel_step * np.maximum(1.0, np.abs(x))
    grad = np.empty(x.size)
    for i in range(x.size):
        ei = np.zeros(x.size)
        ei[i] = h[i]
        grad[i] = (f(x + ei) - f(x - ei)) / (2.0 * h[i])
    return grad


def spd_logdet(matrix: np.ndarray, floor_ratio: float = EIGVAL_FLOOR_RATIO):
    """(log det, floored) of a symmetric matrix meant to be positive definite.

    Falls back to an eigenvalue floor of floor_ratio * max eigenvalue when
    the Cholesky factorisation fails, so evidence stays comparable across a
    grid even when a class has collapsed.
    """
    matrix = np.asarray(matrix, dtype=float)
    try:
        chol = np.linalg.cholesky(matrix)
        return 2.0 * float(np.sum(np.log(np.diag(chol)))), False
    except np.linalg.LinAlgError:
        eigvals = np.linalg.eigvalsh(matrix)
        top = float(eigvals.max())
        floor = floor_ratio * top if top > 0 else floor_ratio
        return float(np.sum(np.log(np.maximum(eigvals, floor)))), True


def laplace_evidence(best_objective: float, hessian: np.ndarray) -> float:
    """Gaussian-approximation log evidence from the optimum and its curvature."""
    hessian = np.asarray(hessian, dtype=float)
    y = hessian.shape[0]
    logdet, _ = spd_logdet(hessian)
    value = -best_objective + 0.5 * y * _LOG_2PI - 0.5 * logdet
    if not np.isfinite(value):
        raise FitError("non-finite log evidence (singular curvature)")
    return float(value)


def _canonical_order(params: ParamSet) -> list[int]:
    """Classes sorted by weight descending, frailty of risk 1 breaking ties."""
    w = np.round(params.weights, 12)
    return list(np.lexsort((params.frailty[0], -w)))


def _sigma_views(sigma_vec: np.ndarray, model: ModelId, n_risks: int,
                 n_covariates: int, censoring: str, weights: np.ndarray,
                 cov: np.ndarray) -> ParamStdErrors:
    k, l = model.n_knots, model.n_classes
    pos = 0

    def take(n):
        nonlocal pos
        out = sigma_vec[pos:pos + n]
        pos += n
        return out

    take(l - 1)  # logit errors; weights are reported via the delta method
    if l > 1:
        cov_v = cov[: l - 1, : l - 1]
        jac = np.zeros((l, l - 1))
        for a in range(l):
            for b in range(l - 1):
                jac[a, b] = weights[a] * ((1.0 if a == b else 0.0) - weights[b])
        var_w = np.einsum("ab,bc,ac->a", jac, cov_v, jac)
        weight_sigma = np.sqrt(np.maximum(var_w, 0.0))
    else:
        weight_sigma = np.zeros(1)
    frailty = take(n_risks * l).reshape(n_risks, l)
    assoc = take(n_risks * model.n_assoc_blocks * n_covariates).reshape(
        n_risks, model.n_assoc_blocks, n_covariates)
    knots = np.zeros((n_risks, model.n_spline_blocks, k))
    if k > 1:
        knots[:, :, 1:] = take(n_risks * model.n_spline_blocks * (k - 1)).reshape(
            n_risks, model.n_spline_blocks, k - 1)
    cens = take(k).copy() if censoring == "parametric" else None
    return ParamStdErrors(weights=weight_sigma, frailty=frailty, assoc=assoc,
                          log_knots=knots, cens_log_knots=cens)


def map_fit(model: ModelId, cohort: Cohort, config: FitConfig) -> FitResult:
    """Multistart MAP fit of one model; deterministic given config.seed."""
    censoring = config.censoring
    if censoring == "auto":
        censoring = detect_censoring_mode(cohort)
    objective, core = make_objective(model, cohort, censoring)
    n_risks, p = core.n_risks, core.n_covariates
    dim = param_count(model, n_risks, p, censoring)
    max_fev = config.max_fev if config.max_fev else 200 * dim + 200
    refine_fev = max(60 * dim, 240)
    proposals = _relabel_proposals(model, n_risks, p, core.t_max, censoring)

    best = None
    completed = 0
    for j in range(config.restarts):
        # streams keyed by the effective structure, so equivalent (K, L, M)
        # labels of one family yield bit-identical fits and exact ties
        seq = np.random.SeedSequence(config.seed,
                                     spawn_key=model.structure_key() + (j,))
        rng = np.random.default_rng(seq)
        start = None
        for _ in range(10):
            cand = _draw_start(rng, model, n_risks, p, censoring)
            if np.isfinite(objective(cand)):
                start = cand
                break
        if start is None:
            continue
        res = refined_minimize(objective, start, rng, max_fev=max_fev,
                               refine_fev=refine_fev,
                               rounds=config.refine_rounds,
                               tol=config.tolerance, proposals=proposals)
        if not np.isfinite(res.fun):
            continue
        completed += 1
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitError(
            f"all {config.restarts} restarts diverged for model "
            f"{model.label()} (non-finite objective)")

    params = unpack(best.x, model, n_risks, p, core.t_max, censoring)
    order = _canonical_order(params)
    params = params.permute_classes(order)
    x_star = pack(params)
    s_star = objective(x_star)

    grad = _central_gradient(objective, x_star)
    hessian = numeric_hessian(objective, x_star)
    logdet, floored = spd_logdet(hessian)
    if floored:
        eigvals, eigvecs = np.linalg.eigh(hessian)
        top = float(eigvals.max())
        floor = EIGVAL_FLOOR_RATIO * top if top > 0 else EIGVAL_FLOOR_RATIO
        inv = (eigvecs * (1.0 / np.maximum(eigvals, floor))) @ eigvecs.T
    else:
        inv = np.linalg.inv(hessian)
    sigma = np.sqrt(np.maximum(np.diag(inv), 0.0))
    log_evidence = -s_star + 0.5 * dim * _LOG_2PI - 0.5 * logdet

    stderr = _sigma_views(sigma, model, n_risks, p, censoring,
                          params.weights, inv)
    if floored:
        flag = "degenerate-hessian"
    elif best.converged:
        flag = "converged"
    else:
        flag = "max-iter"
    return FitResult(
        model=model, theta_star=params, sigma=sigma, stderr=stderr,
        hessian=hessian, log_evidence=float(log_evidence),
        best_objective=float(s_star), restarts_used=completed,
        convergence_flag=flag, grad_max=float(np.max(np.abs(grad))),
        n_params=dim, censoring_mode=censoring, t_max=core.t_max,
    )


def estimate_hessian(model: ModelId, theta_star: ParamSet,
                     cohort: Cohort) -> np.ndarray:
    """Posterior curvature at a fitted parameter point (packed space)."""
    if model != theta_star.model:
        raise ValueError("model does not match theta_star.model")
    objective, _ = make_objective(model, cohort, theta_star.censoring_mode,
                                  t_max=theta_star.t_max)
    x = pack(theta_star.canonical_scale())
    return numeric_hessian(objective, x)


def _fit_task(args):
    model, cohort, config = args
    try:
        return map_fit(model, cohort, config)
    except FitError as exc:
        return exc


def select_model(cohort: Cohort, grid, config: FitConfig) -> SelectionReport:
    """Fit every model on the grid and rank by log evidence.

    Fits run as independent seeded tasks, so the report is identical for
    any thread count.  The winner is the best-evidence converged fit.
    """
    grid = sorted(grid, key=lambda m: (m.n_knots, m.n_classes, m.variant))
    if not grid:
        raise ValueError("model grid is empty")
    tasks = [(model, cohort, config) for model in grid]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(_fit_task, tasks, chunksize=1))
    else:
        outcomes = [_fit_task(t) for t in tasks]

    fits = [o for o in outcomes if isinstance(o, FitResult)]
    failures = [o for o in outcomes if isinstance(o, Exception)]
    if not fits:
        detail = "; ".join(str(f) for f in failures)
        raise FitError(f"every model on the grid failed: {detail}")

    def rank_key(fit: FitResult):
        m = fit.model
        return (fit.convergence_flag != "converged", -fit.log_evidence,
                fit.n_params, (m.n_knots, m.n_classes, m.variant))

    ranked = tuple(sorted(fits, key=rank_key))
    if ranked[0].convergence_flag != "converged":
        raise FitError(
            "no model converged; best attempt "
            f"{ranked[0].model.label()} flagged {ranked[0].convergence_flag}")
    return SelectionReport(fits=ranked, winner=ranked[0])
