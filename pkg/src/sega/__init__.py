"""Concept-guided diffusion sampling with an exact Gaussian-mixture backend.

The guidance layer turns a set of noise estimates (unconditioned,
prompt-conditioned, and one per edit concept) into a single combined
prediction by masking, scaling, aggregating, and momentum-smoothing the
per-edit directions. The backend provides those estimates in closed form,
which makes every property of the guidance arithmetic directly testable.
"""

from .config import ConfigError, ConfigWarning, RunConfig, emit_normalized, parse
from .guidance import (
    EditDirective,
    GuidanceConfig,
    GuidanceState,
    aggregate_edits,
    cfg_combine,
    edit_direction,
    edit_mask_scale,
    gamma_single,
    guided_prediction,
    momentum_apply,
    momentum_update,
    normalize_weights,
    sega_step,
)
from .metrics import ShiftReport, SweepReport, arithmetic_consistency, concept_shift, strength_sweep
from .mixture import (
    Component,
    ConceptQuery,
    MixtureScene,
    composite_query,
    eps_predict,
    marginal_at,
    mixture_moments,
    posterior_tag_probability,
    royal_court_scene,
    select,
)
from .sampler import (
    LatentState,
    NonFiniteLatentError,
    SampleTrajectory,
    Schedule,
    StepRecord,
    denoise_update,
    make_schedule,
    run_chains,
    sample_initial,
    sample_loop,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConfigWarning",
    "RunConfig",
    "emit_normalized",
    "parse",
    "EditDirective",
    "GuidanceConfig",
    "GuidanceState",
    "aggregate_edits",
    "cfg_combine",
    "edit_direction",
    "edit_mask_scale",
    "gamma_single",
    "guided_prediction",
    "momentum_apply",
    "momentum_update",
    "normalize_weights",
    "sega_step",
    "ShiftReport",
    "SweepReport",
    "arithmetic_consistency",
    "concept_shift",
    "strength_sweep",
    "Component",
    "ConceptQuery",
    "MixtureScene",
    "composite_query",
    "eps_predict",
    "marginal_at",
    "mixture_moments",
    "posterior_tag_probability",
    "royal_court_scene",
    "select",
    "LatentState",
    "NonFiniteLatentError",
    "SampleTrajectory",
    "Schedule",
    "StepRecord",
    "denoise_update",
    "make_schedule",
    "run_chains",
    "sample_initial",
    "sample_loop",
    "__version__",
]
