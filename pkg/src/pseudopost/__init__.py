"""Survey-weighted pseudo-posterior estimation for a Poisson-lognormal model."""
from importlib import metadata as _metadata

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:       # running from a source tree
    __version__ = "0+unknown"

from .errors import (ConfigError, GenerationError, NumericalError, PseudopostError, RankError,
                     SchemaError)
from .population import (CovariateRecipe, FinitePopulation, GeneratingParams, ModelConfig,
                         default_jolts_params, generate_population, load_population,
                         save_population)
from .design import (DesignDiagnosticsReport, InclusionProbabilities, ObservedSample,
                     SamplingDesign, compute_inclusion_probs, design_report, draw_sample,
                     load_sample, normalize_weights, save_sample)
from .model import FitConfig, McmcState, PosteriorDraws, fit, init_state
from .diagnostics import (HellingerResult, PoissonLognormalUnits, contraction_curve,
                          hellinger_sq, pseudo_hellinger_sq)
from .simulation import StudyConfig, StudyResult, run_study, summarize_distributions

__all__ = [
    "ConfigError", "GenerationError", "NumericalError", "PseudopostError", "RankError",
    "SchemaError", "CovariateRecipe", "FinitePopulation", "GeneratingParams", "ModelConfig",
    "default_jolts_params", "generate_population", "load_population", "save_population",
    "DesignDiagnosticsReport", "InclusionProbabilities", "ObservedSample", "SamplingDesign",
    "compute_inclusion_probs", "design_report", "draw_sample", "load_sample",
    "normalize_weights", "save_sample", "FitConfig", "McmcState", "PosteriorDraws", "fit",
    "init_state", "HellingerResult", "PoissonLognormalUnits", "contraction_curve",
    "hellinger_sq", "pseudo_hellinger_sq", "StudyConfig", "StudyResult", "run_study",
    "summarize_distributions",
]
