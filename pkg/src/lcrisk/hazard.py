"""Latent-class proportional-hazards parametrisation.

A model is the triple (K, L, M): K spline anchors for each base rate,
L latent classes, and variant M controlling how much structure is
class-specific (1: frailties only; 2: frailties and associations;
3: frailties, associations, and base rates).

Base rates are piecewise-linear interpolations of positive anchor values
on K equally spaced time points spanning [0, t_max].  Anchor values are
carried in log space, so positivity is structural and the cumulative
integral is an exact piecewise quadratic.  The first anchor of every
true-risk rate is pinned to value 1 (log value 0); the overall scale of
the rate lives in the class frailty, which removes the scale/frailty
degeneracy and leaves K-1 free anchors per rate.  The censoring rate
(risk 0) has no frailty, so all K of its anchors are free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np


class HazardDomainError(ValueError):
    """Time outside the [0, t_max] support of a base rate."""


_T_SLACK = 1e-9


@dataclass(frozen=True)
class ModelId:
    n_knots: int    # K
    n_classes: int  # L
    variant: int    # M

    def __post_init__(self):
        if self.n_knots < 1:
            raise ValueError("n_knots (K) must be >= 1")
        if self.n_classes < 1:
            raise ValueError("n_classes (L) must be >= 1")
        if self.variant not in (1, 2, 3):
            raise ValueError("variant (M) must be 1, 2, or 3")

    @property
    def n_assoc_blocks(self) -> int:
        """Class rows in the association block: shared for M=1."""
        return 1 if self.variant == 1 else self.n_classes

    @property
    def n_spline_blocks(self) -> int:
        """Class rows in the base-rate block: shared unless M=3."""
        return self.n_classes if self.variant == 3 else 1

    def structure_key(self) -> tuple[int, int, int, int]:
        """Effective parametrisation signature.

        Different (K, L, M) triples can denote the same free-parameter
        structure (any M at L=1; M=2 vs M=3 at K=1, where no anchor is
        free).  Models sharing a signature are the same distribution family
        and must produce identical fits.
        """
        k, l = self.n_knots, self.n_classes
        return (k, l, self.n_assoc_blocks,
                self.n_spline_blocks if k > 1 else 1)

    def label(self) -> str:
        return f"K{self.n_knots}L{self.n_classes}M{self.variant}"


def knot_times(n_knots: int, t_max: float) -> np.ndarray:
    """Equally spaced anchors on [0, t_max], endpoints included."""
    if n_knots == 1:
        return np.zeros(1)
    return np.linspace(0.0, t_max, n_knots)


def _check_times(t: np.ndarray, t_max: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise HazardDomainError("time must be nonnegative")
    if np.any(t > t_max * (1.0 + _T_SLACK)):
        raise HazardDomainError(f"time beyond the rate support [0, {t_max}]")
    return np.minimum(t, t_max)


def _segments(t: np.ndarray, n_knots: int, t_max: float):
    delta = t_max / (n_knots - 1)
    seg = np.clip((t / delta).astype(int), 0, n_knots - 2)
    local = np.maximum(t - seg * delta, 0.0)
    return seg, local, delta


def rate_at(log_values: np.ndarray, t_max: float, t) -> np.ndarray:
    """Evaluate the piecewise-linear rate; log_values has shape (..., K)."""
    g = np.asarray(log_values, dtype=float)
    k = g.shape[-1]
    scalar = np.isscalar(t) or np.ndim(t) == 0
    t = _check_times(np.atleast_1d(t), t_max)
    v = np.exp(g)
    if k == 1:
        out = v[..., :1] * np.ones_like(t)
    else:
        seg, u, delta = _segments(t, k, t_max)
        slope = np.diff(v, axis=-1) / delta
        out = v[..., seg] + slope[..., seg] * u
    return out[..., 0] if scalar and out.shape[-1] == 1 else out


def cumulative_at(log_values: np.ndarray, t_max: float, t) -> np.ndarray:
    """Exact integral of the piecewise-linear rate from 0 to t."""
    g = np.asarray(log_values, dtype=float)
    k = g.shape[-1]
    scalar = np.isscalar(t) or np.ndim(t) == 0
    t = _check_times(np.atleast_1d(t), t_max)
    v = np.exp(g)
    if k == 1:
        out = v[..., :1] * t
    else:
        seg, u, delta = _segments(t, k, t_max)
        slope = np.diff(v, axis=-1) / delta
        anchors = np.concatenate(
            [np.zeros(g.shape[:-1] + (1,)),
             np.cumsum((v[..., :-1] + v[..., 1:]) * (delta / 2.0), axis=-1)],
            axis=-1,
        )
        out = anchors[..., seg] + v[..., seg] * u + 0.5 * slope[..., seg] * u * u
    return out[..., 0] if scalar and out.shape[-1] == 1 else out


def log_rate_at(log_values: np.ndarray, t_max: float, t) -> np.ndarray:
    return np.log(rate_at(log_values, t_max, t))


def rate_design(t, n_knots: int, t_max: float) -> np.ndarray:
    """Constant matrix B with rate(t_i) = sum_k B[i, k] * exp(g_k).

    The piecewise-linear rate is linear in its anchor values, so repeated
    evaluation at fixed times reduces to one small matrix product.
    """
    t = _check_times(np.atleast_1d(np.asarray(t, dtype=float)), t_max)
    n = t.size
    if n_knots == 1:
        return np.ones((n, 1))
    seg, u, delta = _segments(t, n_knots, t_max)
    design = np.zeros((n, n_knots))
    rows = np.arange(n)
    frac = u / delta
    design[rows, seg] = 1.0 - frac
    design[rows, seg + 1] += frac
    return design


def cumulative_design(t, n_knots: int, t_max: float) -> np.ndarray:
    """Constant matrix A with Lambda(t_i) = sum_k A[i, k] * exp(g_k).

    Row i carries the trapezoid weights of the whole anchor intervals below
    t_i plus the partial-segment quadratic tail.
    """
    t = _check_times(np.atleast_1d(np.asarray(t, dtype=float)), t_max)
    n = t.size
    if n_knots == 1:
        return t[:, None].copy()
    seg, u, delta = _segments(t, n_knots, t_max)
    design = np.zeros((n, n_knots))
    for k in range(n_knots):
        whole = (k < seg).astype(float) + ((k >= 1) & (k <= seg))
        design[:, k] = 0.5 * delta * whole
    rows = np.arange(n)
    tail = u * u / (2.0 * delta)
    design[rows, seg] += u - tail
    design[rows, seg + 1] += tail
    return design


@dataclass(frozen=True)
class BaseHazardSpline:
    """One base rate: K log anchor values on equally spaced times in [0, t_max]."""

    t_max: float
    log_values: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.log_values, dtype=float))
        object.__setattr__(self, "log_values", g)
        if g.ndim != 1:
            raise ValueError("log_values must be one-dimensional")
        if g.size > 1 and not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ValueError("t_max must be positive and finite for K > 1")

    @property
    def n_knots(self) -> int:
        return self.log_values.size

    @property
    def knot_times(self) -> np.ndarray:
        return knot_times(self.n_knots, self.t_max)

    def rate(self, t):
        return rate_at(self.log_values, self.t_max, t)

    def cumulative(self, t):
        return cumulative_at(self.log_values, self.t_max, t)


def cumulative_base(spline: BaseHazardSpline, t):
    """Integral of the base rate over [0, t]; errors for t beyond t_max."""
    return spline.cumulative(t)


@dataclass(frozen=True)
class ParamSet:
    """Full parameter state for one ModelId.

    Shapes (R risks, P covariates):
      weights        (L,)        simplex
      frailty        (R, L)
      assoc          (R, La, P)  La = 1 when M = 1, else L
      log_knots      (R, Ls, K)  Ls = L when M = 3, else 1
      cens_log_knots (K,) or None; present only with parametric censoring
    """

    model: ModelId
    t_max: float
    weights: np.ndarray
    frailty: np.ndarray
    assoc: np.ndarray
    log_knots: np.ndarray
    cens_log_knots: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        fr = np.asarray(self.frailty, dtype=float)
        a = np.asarray(self.assoc, dtype=float)
        g = np.asarray(self.log_knots, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "frailty", fr)
        object.__setattr__(self, "assoc", a)
        object.__setattr__(self, "log_knots", g)
        m = self.model
        if w.shape != (m.n_classes,):
            raise ValueError("weights must have shape (L,)")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must lie on the simplex")
        if fr.ndim != 2 or fr.shape[1] != m.n_classes:
            raise ValueError("frailty must have shape (R, L)")
        r = fr.shape[0]
        if a.shape != (r, m.n_assoc_blocks, self.n_covariates):
            raise ValueError(
                f"assoc must have shape (R, {m.n_assoc_blocks}, P), got {a.shape}")
        if g.shape != (r, m.n_spline_blocks, m.n_knots):
            raise ValueError(
                f"log_knots must have shape (R, {m.n_spline_blocks}, K), got {g.shape}")
        if m.n_knots > 1 and not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ValueError("t_max must be positive and finite for K > 1")
        if self.cens_log_knots is not None:
            c = np.asarray(self.cens_log_knots, dtype=float)
            object.__setattr__(self, "cens_log_knots", c)
            if c.shape != (m.n_knots,):
                raise ValueError("cens_log_knots must have shape (K,)")

    @property
    def n_risks(self) -> int:
        return self.frailty.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.assoc.shape[2]

    @property
    def censoring_mode(self) -> str:
        return "administrative" if self.cens_log_knots is None else "parametric"

    @cached_property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(self.weights, 0.0))

    def assoc_for(self, risk: int, class_index: int) -> np.ndarray:
        """Association row for a true risk (1..R), resolving M=1 sharing."""
        block = 0 if self.model.variant == 1 else class_index
        return self.assoc[risk - 1, block]

    def spline_for(self, risk: int, class_index: int = 0) -> BaseHazardSpline:
        """Base rate for risk 0 (censoring) or a true risk 1..R."""
        if risk == 0:
            if self.cens_log_knots is None:
                raise ValueError(
                    "administrative censoring carries no censoring rate")
            return BaseHazardSpline(self.t_max, self.cens_log_knots)
        block = class_index if self.model.variant == 3 else 0
        return BaseHazardSpline(self.t_max, self.log_knots[risk - 1, block])

    def linear_predictor(self, risk: int, class_index: int, z: np.ndarray) -> float:
        """Frailty plus association dot covariates for one (risk, class)."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_covariates,):
            raise ValueError("covariate vector has the wrong length")
        return float(self.frailty[risk - 1, class_index]
                     + self.assoc_for(risk, class_index) @ z)

    def canonical_scale(self) -> "ParamSet":
        """Shift each true-risk rate so its first anchor is 1 (log 0).

        The removed scale moves into the frailties, which leaves every
        personalised hazard unchanged.
        """
        g = self.log_knots.copy()
        fr = self.frailty.copy()
        shift = g[:, :, 0].copy()            # (R, Ls); broadcasts over classes
        g -= shift[:, :, None]
        fr += shift
        return replace(self, frailty=fr, log_knots=g)

    def permute_classes(self, order) -> "ParamSet":
        """Relabel latent classes; the likelihood is invariant under this."""
        order = list(order)
        if sorted(order) != list(range(self.model.n_classes)):
            raise ValueError("order must be a permutation of 0..L-1")
        assoc = self.assoc[:, order, :] if self.model.n_assoc_blocks > 1 else self.assoc
        knots = self.log_knots[:, order, :] if self.model.n_spline_blocks > 1 else self.log_knots
        return replace(self, weights=self.weights[order],
                       frailty=self.frailty[:, order], assoc=assoc, log_knots=knots)


def personalised_hazard(params: ParamSet, class_index: int, risk: int,
                        z: np.ndarray, t):
    """Cause-specific hazard for one class member with covariates z.

    Computes rate(t) * exp(frailty + assoc . z).  Risk 0 is the censoring
    rate (parametric mode only); it carries no frailty or associations.
    """
    if risk == 0:
        return params.spline_for(0).rate(t)
    bz = params.linear_predictor(risk, class_index, z)
    return params.spline_for(risk, class_index).rate(t) * math.exp(bz)


def param_count(model: ModelId, n_risks: int, n_covariates: int,
                censoring: str = "administrative") -> int:
    """Free-parameter dimensionality Y of a model.

    (L-1) weights, one frailty per (risk, class), associations per
    (risk, class-or-shared, covariate), K-1 free anchors per true-risk
    rate, and K censoring anchors in parametric mode.
    """
    k, l = model.n_knots, model.n_classes
    count = (l - 1)
    count += n_risks * l
    count += n_risks * model.n_assoc_blocks * n_covariates
    count += n_risks * model.n_spline_blocks * (k - 1)
    if censoring == "parametric":
        count += k
    elif censoring != "administrative":
        raise ValueError("censoring must be 'administrative' or 'parametric'")
    return count


def pack(params: ParamSet) -> np.ndarray:
    """Flatten to the unconstrained optimisation vector.

    Layout: weight logits (L-1, last class pinned to 0), frailties (R*L),
    associations, free log anchors (first anchor of each true-risk rate is
    fixed at 0 and not packed), censoring anchors last.  Raises if a
    true-risk rate is not in canonical scale, since the fixed anchor would
    silently lose information.
    """
    if np.any(params.log_knots[:, :, 0] != 0.0):
        raise ValueError("pack requires canonical scale; call canonical_scale() first")
    l = params.model.n_classes
    w = params.weights
    blocks = []
    if l > 1:
        blocks.append(np.log(w[:-1] / w[-1]))
    blocks.append(params.frailty.ravel())
    blocks.append(params.assoc.ravel())
    if params.model.n_knots > 1:
        blocks.append(params.log_knots[:, :, 1:].ravel())
    if params.cens_log_knots is not None:
        blocks.append(params.cens_log_knots.ravel())
    return np.concatenate(blocks) if blocks else np.zeros(0)


def unpack(vector: np.ndarray, model: ModelId, n_risks: int, n_covariates: int,
           t_max: float, censoring: str = "administrative") -> ParamSet:
    """Inverse of pack; validates the vector length."""
    vector = np.asarray(vector, dtype=float)
    expected = param_count(model, n_risks, n_covariates, censoring)
    if vector.shape != (expected,):
        raise ValueError(
            f"parameter vector must have length {expected}, got {vector.shape}")
    k, l = model.n_knots, model.n_classes
    pos = 0

    def take(n):
        nonlocal pos
        out = vector[pos:pos + n]
        pos += n
        return out

    if l > 1:
        logits = np.concatenate([take(l - 1), [0.0]])
        shifted = logits - logits.max()
        expl = np.exp(shifted)
        weights = expl / expl.sum()
        log_weights = shifted - math.log(expl.sum())
    else:
        weights = np.ones(1)
        log_weights = np.zeros(1)
    frailty = take(n_risks * l).reshape(n_risks, l)
    la = model.n_assoc_blocks
    assoc = take(n_risks * la * n_covariates).reshape(n_risks, la, n_covariates)
    ls = model.n_spline_blocks
    log_knots = np.zeros((n_risks, ls, k))
    if k > 1:
        log_knots[:, :, 1:] = take(n_risks * ls * (k - 1)).reshape(n_risks, ls, k - 1)
    cens = take(k).copy() if censoring == "parametric" else None
    params = ParamSet(model=model, t_max=t_max, weights=weights, frailty=frailty,
                      assoc=assoc, log_knots=log_knots, cens_log_knots=cens)
    params.__dict__["log_weights"] = log_weights   # pre-seed the cached property
    return params


def params_to_kv(params: ParamSet, sigma: "ParamStdErrors | None" = None) -> dict[str, object]:
    """Serializable kv records for a ParamSet (and optional standard errors)."""
    records: dict[str, object] = {
        "model.k": params.model.n_knots,
        "model.l": params.model.n_classes,
        "model.m": params.model.variant,
        "n_risks": params.n_risks,
        "n_covariates": params.n_covariates,
        "t_max": params.t_max,
        "censoring": params.censoring_mode,
        "weights": params.weights,
    }
    for r in range(params.n_risks):
        records[f"frailty.r{r + 1}"] = params.frailty[r]
        for q in range(params.model.n_assoc_blocks):
            records[f"assoc.r{r + 1}.c{q + 1}"] = params.assoc[r, q]
        for q in range(params.model.n_spline_blocks):
            records[f"log_knots.r{r + 1}.c{q + 1}"] = params.log_knots[r, q]
    if params.cens_log_knots is not None:
        records["cens_log_knots"] = params.cens_log_knots
    return records


def params_from_kv(records: dict[str, object], prefix: str = "") -> ParamSet:
    from .kvdoc import as_float_array  # local import avoids a cycle at module load

    def get(key):
        return records[prefix + key]

    model = ModelId(int(get("model.k")), int(get("model.l")), int(get("model.m")))
    n_risks = int(get("n_risks"))
    p = int(get("n_covariates"))
    k, l = model.n_knots, model.n_classes
    weights = as_float_array(get("weights"), l)
    frailty = np.stack([as_float_array(get(f"frailty.r{r + 1}"), l)
                        for r in range(n_risks)])
    assoc = np.stack([
        np.stack([as_float_array(get(f"assoc.r{r + 1}.c{q + 1}"), p)
                  for q in range(model.n_assoc_blocks)])
        for r in range(n_risks)])
    log_knots = np.stack([
        np.stack([as_float_array(get(f"log_knots.r{r + 1}.c{q + 1}"), k)
                  for q in range(model.n_spline_blocks)])
        for r in range(n_risks)])
    cens = None
    if (prefix + "cens_log_knots") in records:
        cens = as_float_array(get("cens_log_knots"), k)
    return ParamSet(model=model, t_max=float(get("t_max")), weights=weights,
                    frailty=frailty, assoc=assoc, log_knots=log_knots,
                    cens_log_knots=cens)
