"""Dynamic exponential family models for discrete time series."""
import os as _os

# DYNEF_THREADS caps the BLAS/OpenMP pools; it must be applied before numpy loads.
_threads = _os.environ.get("DYNEF_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .basis import BasisBank, custom_bank, raised_cosine_bank  # noqa: E402
from .graph import CausalGraph, GraphPair, LateralGraph, ReachableSets, parents, reachable_sets  # noqa: E402
from .inference import GibbsConfig, exact_node_marginal, exact_pair_marginal, gibbs_expectations  # noqa: E402
from .learning import (  # noqa: E402
    Prior,
    TrainConfig,
    grad_log_likelihood,
    gradient_check,
    train_bayes,
    train_ml,
)
from .model import (  # noqa: E402
    ComponentTooLarge,
    ModelParams,
    TimeSeries,
    filtered_traces,
    membrane_potentials,
    sample_sequence,
    sequence_log_likelihood,
    step_log_prob,
)

__version__ = "0.1.0"

__all__ = [
    "BasisBank", "custom_bank", "raised_cosine_bank",
    "CausalGraph", "LateralGraph", "GraphPair", "ReachableSets", "parents", "reachable_sets",
    "GibbsConfig", "exact_node_marginal", "exact_pair_marginal", "gibbs_expectations",
    "Prior", "TrainConfig", "grad_log_likelihood", "gradient_check", "train_ml", "train_bayes",
    "ComponentTooLarge", "ModelParams", "TimeSeries", "filtered_traces", "membrane_potentials",
    "sample_sequence", "sequence_log_likelihood", "step_log_prob",
]
