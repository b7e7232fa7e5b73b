"""aqem: adaptive quantum-enhanced phase estimation, noise robustness and scaling."""

from aqem.engine import (
    RunRecord,
    VarianceCurve,
    estimate_sharpness_variance,
    run_single_shot,
    sweep_curve,
)
from aqem.noise import NoiseParams, NoiseSpec, params_from_spec, sample_phase
from aqem.policies import (
    BayesState,
    MarkovPolicy,
    bayes_estimate,
    bayes_init,
    bayes_optimal_phase,
    bayes_update,
    markov_next_phase,
)
from aqem.regress import LogSeries, PiecewiseFit, fit_all_families, select_model
from aqem.states import (
    SymmetricState,
    ZeroProbabilityError,
    collapse,
    dense_oracle,
    detection_probability,
    product_state,
    sine_state,
    wigner_d,
    wrap_angle,
)
from aqem.trainer import TrainConfig, evaluate_candidate, train_policy

__all__ = [
    "BayesState",
    "LogSeries",
    "MarkovPolicy",
    "NoiseParams",
    "NoiseSpec",
    "PiecewiseFit",
    "RunRecord",
    "SymmetricState",
    "TrainConfig",
    "VarianceCurve",
    "ZeroProbabilityError",
    "bayes_estimate",
    "bayes_init",
    "bayes_optimal_phase",
    "bayes_update",
    "collapse",
    "dense_oracle",
    "detection_probability",
    "estimate_sharpness_variance",
    "evaluate_candidate",
    "fit_all_families",
    "markov_next_phase",
    "params_from_spec",
    "product_state",
    "run_single_shot",
    "sample_phase",
    "select_model",
    "sine_state",
    "sweep_curve",
    "train_policy",
    "wigner_d",
    "wrap_angle",
]

__version__ = "0.1.0"
