"""Synthetic cohorts with risks that are independent within each individual.

Each individual draws a latent class, standard-normal covariates, and one
latent event time per true risk by inverse-transform sampling of its
personalised survival function; the earliest latent time is observed,
and times beyond the trial end are recorded as end-of-trial censoring.
Correlations between risks then exist only at cohort level, through the
class structure.

Per-individual generator streams are derived from (seed, index), so a
cohort is bit-identical however the work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .hazard import BaseHazardSpline


@dataclass(frozen=True)
class ConstantRate:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    def rate_at(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.rate)

    def cumulative(self, t):
        return self.rate * np.asarray(t, dtype=float)

    def inverse_cumulative(self, target: float) -> float:
        return target / self.rate


@dataclass(frozen=True)
class ExponentialRate:
    """Rate base * exp(growth * t)."""

    base: float
    growth: float

    def __post_init__(self):
        if not self.base > 0:
            raise ValueError("base rate must be positive")

    def rate_at(self, t):
        return self.base * np.exp(self.growth * np.asarray(t, dtype=float))

    def cumulative(self, t):
        t = np.asarray(t, dtype=float)
        if self.growth == 0.0:
            return self.base * t
        return (self.base / self.growth) * np.expm1(self.growth * t)

    def inverse_cumulative(self, target: float) -> float:
        if self.growth == 0.0:
            return target / self.base
        arg = 1.0 + self.growth * target / self.base
        if arg <= 0.0:
            return math.inf       # decaying rate with bounded total exposure
        return math.log(arg) / self.growth


@dataclass(frozen=True)
class SplineRate:
    spline: BaseHazardSpline

    def rate_at(self, t):
        return self.spline.rate(t)

    def cumulative(self, t):
        return self.spline.cumulative(t)

    def inverse_cumulative(self, target: float, tol: float = 1e-12) -> float:
        """Bisection on [0, t_max]; targets beyond the support map to inf."""
        hi = self.spline.t_max
        if target <= 0.0:
            return 0.0
        if target > float(self.spline.cumulative(hi)):
            return math.inf
        lo = 0.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if float(self.spline.cumulative(mid)) < target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def event_time_from_uniform(family, linear_predictor: float, u: float) -> float:
    """Inverse-transform event time: solve exp(bz) * Lambda(t) = -log u."""
    if not (0.0 < u <= 1.0):
        raise ValueError("u must lie in (0, 1]")
    target = -math.log(u) * math.exp(-linear_predictor)
    return family.inverse_cumulative(target)


def sample_event_time(family, linear_predictor: float,
                      rng: np.random.Generator) -> float:
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return event_time_from_uniform(family, linear_predictor, u)


@dataclass(frozen=True)
class SynthSpec:
    """Generator configuration: true model plus cohort size and seed."""

    weights: np.ndarray          # (L,)
    frailty: np.ndarray          # (R, L)
    assoc: np.ndarray            # (R, L, P)
    rates: tuple                 # (R, L) nested tuples of rate families
    trial_end: float             # may be inf (no censoring) or 0 (degenerate)
    n: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "frailty", np.asarray(self.frailty, dtype=float))
        object.__setattr__(self, "assoc", np.asarray(self.assoc, dtype=float))
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("weights must lie on the simplex")
        r, l = self.frailty.shape
        if self.assoc.shape[:2] != (r, l) or self.weights.shape != (l,):
            raise ValueError("weights, frailty, assoc shapes disagree")
        if len(self.rates) != r or any(len(row) != l for row in self.rates):
            raise ValueError("rates must be an (R, L) grid of families")
        if self.trial_end < 0:
            raise ValueError("trial_end must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def n_classes(self) -> int:
        return self.weights.size

    @property
    def n_risks(self) -> int:
        return self.frailty.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.assoc.shape[2]


@dataclass(frozen=True)
class TruthSidecar:
    """Hidden generation truth, kept apart from the fitting inputs."""

    ids: tuple[str, ...]
    true_class: np.ndarray       # (N,) labels 0..L-1
    latent_times: np.ndarray     # (N, R), inf when a risk never fires

    def write(self, dest) -> None:
        if isinstance(dest, str):
            with open(dest, "w", encoding="utf-8") as handle:
                self.write(handle)
                return
        r = self.latent_times.shape[1]
        dest.write("id,true_class," + ",".join(f"t{j + 1}" for j in range(r)) + "\n")
        for i, ident in enumerate(self.ids):
            cells = [ident, str(int(self.true_class[i]))]
            cells += [format(v, ".17g") for v in self.latent_times[i]]
            dest.write(",".join(cells) + "\n")

    @classmethod
    def load(cls, source) -> "TruthSidecar":
        if isinstance(source, str):
            with open(source, "r", encoding="utf-8") as handle:
                return cls.load(handle)
        lines = source.read().splitlines()
        header = lines[0].split(",")
        r = len(header) - 2
        ids, classes, times = [], [], []
        for line in lines[1:]:
            if not line.strip():
                continue
            cells = line.split(",")
            ids.append(cells[0])
            classes.append(int(cells[1]))
            times.append([float(c) for c in cells[2:2 + r]])
        return cls(ids=tuple(ids), true_class=np.array(classes, dtype=int),
                   latent_times=np.array(times, dtype=float))


def preset(name: str, n: int = 1000, seed: int = 0) -> SynthSpec:
    """Published synthetic scenarios.

    A: three classes, one risk, class-specific rates (two constants and an
       exponentially growing one), end-of-trial censoring at t = 20.
    B: two classes, two risks, constant shared rates, opposite primary-risk
       associations and a strong secondary-risk association in class 1
       (false protectivity).
    C: as B with the secondary-risk association negated (false aetiology).

    The published tables leave the B/C base-rate constants and trial length
    open; 0.1 per unit time for both risks with trial_end = 10 gives all
    three outcomes (both risks and censoring) substantial probability.
    """
    name = name.upper()
    if name == "A":
        return SynthSpec(
            weights=np.full(3, 1.0 / 3.0),
            frailty=np.zeros((1, 3)),
            assoc=np.array([[[2.0, 0.0, 0.0],
                             [2.0, 0.0, 0.0],
                             [-2.0, 0.0, 0.0]]]),
            rates=((ConstantRate(0.3),
                    ExponentialRate(0.01, 0.25),
                    ConstantRate(0.1)),),
            trial_end=20.0, n=n, seed=seed)
    if name in ("B", "C"):
        sign = 1.0 if name == "B" else -1.0
        const = ConstantRate(0.1)
        return SynthSpec(
            weights=np.array([0.5, 0.5]),
            frailty=np.zeros((2, 2)),
            assoc=np.array([[[2.0, 0.0, 0.0],
                             [-2.0, 0.0, 0.0]],
                            [[sign * 3.0, 0.0, 0.0],
                             [0.0, 0.0, 0.0]]]),
            rates=((const, const), (const, const)),
            trial_end=10.0, n=n, seed=seed)
    raise ValueError(f"unknown preset {name!r} (expected A, B, or C)")


def individual_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one individual: Philox offset by index * 2^64.

    Streams never overlap (an individual consumes far fewer than 2^64
    draws), so generation order and any parallel scheduling cannot change
    the output.
    """
    bits = np.random.Philox(key=seed)
    bits.advance(index << 64)
    return np.random.Generator(bits)


class _StreamCursor:
    """Reusable Philox generator repositioned to each individual's stream.

    Draw-for-draw identical to individual_stream(seed, i), without paying
    bit-generator construction per individual.
    """

    def __init__(self, seed: int):
        self._bits = np.random.Philox(key=seed)
        self.generator = np.random.Generator(self._bits)

    def seek(self, index: int) -> np.random.Generator:
        state = self._bits.state
        state["state"]["counter"][:] = 0
        state["state"]["counter"][1] = index
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        self._bits.state = state
        return self.generator


def generate_cohort(spec: SynthSpec) -> tuple[Cohort, TruthSidecar]:
    """Draw a cohort; the returned sidecar holds the hidden truth labels."""
    n, r_count, p = spec.n, spec.n_risks, spec.n_covariates
    ids = tuple(str(i + 1) for i in range(n))
    times = np.empty(n)
    events = np.empty(n, dtype=int)
    covariates = np.empty((n, p))
    classes = np.empty(n, dtype=int)
    latents = np.empty((n, r_count))
    cum_weights = np.cumsum(spec.weights)
    cursor = _StreamCursor(spec.seed)
    for i in range(n):
        rng = cursor.seek(i)
        cls = int(np.searchsorted(cum_weights, rng.random(), side="right"))
        cls = min(cls, spec.n_classes - 1)
        z = rng.standard_normal(p)
        classes[i] = cls
        covariates[i] = z
        for r in range(r_count):
            bz = spec.frailty[r, cls] + float(spec.assoc[r, cls] @ z)
            latents[i, r] = sample_event_time(spec.rates[r][cls], bz, rng)
        first = int(np.argmin(latents[i]))
        t = latents[i, first]
        if t > spec.trial_end:
            times[i] = spec.trial_end
            events[i] = 0
        else:
            times[i] = t
            events[i] = first + 1
    trial_end = spec.trial_end if 0.0 < spec.trial_end < math.inf else None
    cohort = Cohort(ids=ids, time=times, event=events, covariates=covariates,
                    n_risks=r_count, trial_end=trial_end)
    truth = TruthSidecar(ids=ids, true_class=classes, latent_times=latents)
    return cohort, truth
