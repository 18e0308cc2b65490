"""Downhill simplex (Nelder-Mead) minimiser.

Derivative-free, deterministic given the starting point, and tolerant of
+inf objective values (an infeasible vertex is simply the worst vertex).
Uses the dimension-adaptive expansion/contraction coefficients of
Gao & Han, which behave much better than the classic constants once the
dimension climbs past ten or so.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool


def nelder_mead(f, x0, *, scale=0.25, max_fev: int = 2000,
                tol: float = 1e-9) -> SimplexResult:
    """Minimise f from x0.

    scale sets the initial simplex edge lengths (scalar or per-coordinate).
    Convergence: the simplex function-value spread falls below
    tol * (1 + |f_best|).  Always returns the best point seen.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (n,))

    verts = np.tile(x0, (n + 1, 1))
    for j in range(n):
        verts[j + 1, j] += scale[j] if scale[j] != 0 else 0.1
    fvals = np.array([f(v) for v in verts])
    nfev = n + 1

    alpha = 1.0
    gamma = 1.0 + 2.0 / n if n > 1 else 2.0
    rho = 0.75 - 1.0 / (2.0 * n) if n > 1 else 0.5
    sigma = 1.0 - 1.0 / n if n > 1 else 0.5

    converged = False
    while nfev < max_fev:
        order = np.argsort(fvals, kind="stable")
        verts = verts[order]
        fvals = fvals[order]
        f_best, f_worst = fvals[0], fvals[-1]
        spread = f_worst - f_best
        if np.isfinite(f_worst) and spread <= tol * (1.0 + abs(f_best)):
            converged = True
            break

        centroid = verts[:-1].mean(axis=0)
        xr = centroid + alpha * (centroid - verts[-1])
        fr = f(xr)
        nfev += 1
        if fr < fvals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = f(xe)
            nfev += 1
            if fe < fr:
                verts[-1], fvals[-1] = xe, fe
            else:
                verts[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            verts[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + rho * (xr - centroid)       # outside contraction
            else:
                xc = centroid - rho * (centroid - verts[-1])  # inside contraction
            fc = f(xc)
            nfev += 1
            if fc < min(fr, fvals[-1]):
                verts[-1], fvals[-1] = xc, fc
            else:
                for j in range(1, n + 1):                   # shrink toward best
                    verts[j] = verts[0] + sigma * (verts[j] - verts[0])
                    fvals[j] = f(verts[j])
                nfev += n

    best = int(np.argmin(fvals))
    return SimplexResult(x=verts[best].copy(), fun=float(fvals[best]),
                         nfev=nfev, converged=converged)


def refined_minimize(f, x0, rng: np.random.Generator, *,
                     max_fev: int = 2000, refine_fev: int = 600,
                     rounds: int = 10, tol: float = 1e-9,
                     init_scale=0.3, proposals=None) -> SimplexResult:
    """Simplex search followed by stochastic refinement.

    After the first convergence two refinement mechanisms run:

    * discrete escape sweeps: `proposals(x)` yields candidate relabelings
      of the incumbent (e.g. per-risk class permutations); any candidate
      that already improves the objective is simplex-polished and adopted.
      Mixture posteriors have combinatorial local maxima where class
      blocks of different risks are paired wrongly; no small continuous
      perturbation escapes those, one relabeling does.
    * annealed jitter: the incumbent is perturbed with Gaussian noise of
      geometrically decaying scale (0.1 * 0.7^k over `rounds` rounds) and
      re-run, keeping improvements, which knocks the simplex out of
      premature contractions.
    """
    best = nelder_mead(f, x0, scale=init_scale, max_fev=max_fev, tol=tol)
    nfev = best.nfev
    if proposals is not None:
        for _ in range(3):                       # sweeps until no move helps
            moved = False
            candidates = proposals(best.x)
            scored = []
            for idx, cand in enumerate(candidates):
                scored.append((f(cand), idx, cand))
                nfev += 1
            scored.sort(key=lambda item: (item[0], item[1]))
            for s_cand, _, cand in scored:
                if not s_cand < best.fun:
                    break
                res = nelder_mead(f, cand, scale=0.05, max_fev=refine_fev,
                                  tol=tol)
                nfev += res.nfev
                if res.fun < best.fun:
                    best = res
                    moved = True
                    break
            if not moved:
                break
    for k in range(rounds):
        noise = 0.1 * 0.7 ** k
        trial = best.x + noise * rng.standard_normal(best.x.size)
        res = nelder_mead(f, trial, scale=max(noise, 0.02),
                          max_fev=refine_fev, tol=tol)
        nfev += res.nfev
        if res.fun < best.fun:
            best = res
    polish = nelder_mead(f, best.x, scale=0.02, max_fev=max_fev, tol=tol)
    nfev += polish.nfev
    if polish.fun < best.fun:
        best = polish
    return SimplexResult(x=best.x, fun=best.fun, nfev=nfev,
                         converged=polish.converged)
