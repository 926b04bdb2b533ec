"""Representative one-shot learning on brain connectivity graphs."""
from .graph_core import (
    AdjacencyMask,
    ConnectivityMatrix,
    Population,
    Trajectory,
    frobenius_distance,
    mean_absolute_error,
    minmax_normalize,
    permute_nodes,
    threshold_by_mean,
    validate_connectivity,
)
from .templates import TemplateConfig, centeredness, estimate_cbt, linear_average_template, random_one_shot_select
from .evolution import EvolutionHyperparams, CascadeModel, predict_trajectory, train_cascade
from .classification import ClassifierConfig, GatModel, classify, train_classifier
from .harness import (
    Strategy,
    StrategySpec,
    kfold_split,
    run_classification_benchmark,
    run_regression_benchmark,
    stability_study,
)
from .synthetic import SynthSpec, synth_population, synth_trajectories

__version__ = "0.1.0"
