"""Latent-class competing-risk survival analysis.

Fits Bayesian latent-class cause-specific hazard models to cohort data,
selects the most probable model by Laplace-approximated evidence, and
reports crude and decontaminated hazard, survival, and incidence curves
plus retrospective class assignments.  Includes a synthetic-cohort
generator with the published benchmark scenarios.
"""

from .artifacts import FitArtifact
from .cohort import (Cohort, CohortError, CohortParseError, PreprocessReport,
                     detect_censoring_mode, impute_missing, load_cohort,
                     standardize, write_cohort)
from .estimators import (AllocationQuality, AssociationSummary, CurveSet,
                         KaplanMeierCurve, align_classes, allocation_quality,
                         assign_class, assign_cohort, association_summary,
                         covariate_quartiles, crude_hazard, crude_survival,
                         cumulative_incidence, cumulative_incidence_by_class,
                         curve_set, decon_hazard, decon_survival,
                         decon_survival_by_class, kaplan_meier)
from .hazard import (BaseHazardSpline, HazardDomainError, ModelId, ParamSet,
                     cumulative_base, knot_times, pack, param_count,
                     personalised_hazard, unpack)
from .inference import (FitConfig, FitError, FitResult, ParamStdErrors,
                        SelectionReport, estimate_hessian, laplace_evidence,
                        map_fit, model_grid, numeric_hessian, select_model,
                        spd_logdet)
from .likelihood import (ObjectiveValue, event_density, log_likelihood,
                         log_posterior, log_prior, make_objective)
from .simulate import (ConstantRate, ExponentialRate, SplineRate, SynthSpec,
                       TruthSidecar, event_time_from_uniform, generate_cohort,
                       preset, sample_event_time)

__version__ = "0.1.0"
