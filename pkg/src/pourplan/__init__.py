"""Uncertainty-aware Monte Carlo Tree Search planning for liquid pouring.

The package is organized as a small numpy/scipy library:

* :mod:`pourplan.gp` — Gaussian-process regression over pouring
  transitions; the predictive variance doubles as the model-deviation
  estimate that drives the uncertainty-aware search.
* :mod:`pourplan.mcts` — generic tree search over an abstract planning
  domain, with uncertainty-aware selection and expansion variants.
* :mod:`pourplan.pouring` — the simulated pouring domain: dynamics, noisy
  observation, dataset sampling and receding-horizon episodes.
* :mod:`pourplan.bench` — the method x model-size benchmark harness with
  CSV/JSON reporting and action-space variance scatters.
* :mod:`pourplan.cli` — the ``pourplan`` command-line entry point.
"""

from .gp import (
    Dataset,
    Feature,
    GpModel,
    KernelParams,
    Prediction,
    fit_hyperparams,
    gp_fit,
    gp_predict,
    gp_predict_batch,
    kernel_eval,
    mde,
)
from .mcts import (
    PlanningDomain,
    SearchConfig,
    SearchNode,
    SearchResult,
    Variant,
    run_search,
    search,
)
from .pouring import (
    ActionGrid,
    EpisodeConfig,
    EpisodeTrace,
    GoalSpec,
    GpPredictor,
    GroundTruth,
    InflatedPredictor,
    PerfectPredictor,
    PouringDomain,
    PourAction,
    PourState,
    gen_dataset,
    run_episode,
)
from .bench import BenchConfig, BenchReport, run_bench, summarize, variance_scatter

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Feature",
    "GpModel",
    "KernelParams",
    "Prediction",
    "fit_hyperparams",
    "gp_fit",
    "gp_predict",
    "gp_predict_batch",
    "kernel_eval",
    "mde",
    "PlanningDomain",
    "SearchConfig",
    "SearchNode",
    "SearchResult",
    "Variant",
    "run_search",
    "search",
    "ActionGrid",
    "EpisodeConfig",
    "EpisodeTrace",
    "GoalSpec",
    "GpPredictor",
    "GroundTruth",
    "InflatedPredictor",
    "PerfectPredictor",
    "PouringDomain",
    "PourAction",
    "PourState",
    "gen_dataset",
    "run_episode",
    "BenchConfig",
    "BenchReport",
    "run_bench",
    "summarize",
    "variance_scatter",
    "__version__",
]
