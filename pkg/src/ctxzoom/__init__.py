"""Contextual bandits with similarity information: zooming, adaptive partitions and taxonomies."""
from .baselines import UCB1, Exp3, UniformPartition
from .environments import (EnvironmentInstance, best_response, check_lipschitz, generate, load_instance,
                           make_adversarial_env, make_drifting_env, make_needle_instance, make_peak_instance,
                           make_random_lipschitz, make_sleeping_env, save_instance, zooming_number)
from .harness import ExperimentConfig, RunLog, contextual_regret, run, run_config, streams, sweep
from .meta import ContextualBandit, rk_covering_number, t0
from .metric import (ProductSpace, SimilaritySpace, build_r_net, covering_number, doubling_constant_estimate,
                     packing_number)
from .taxonomy import Taxonomy, TaxonomyBandit, make_taxonomy_env, true_quality, true_weight
from .zooming import ContextualZooming, ZoomAuditor

__version__ = "0.1.0"

__all__ = [
    "UCB1",
    "Exp3",
    "UniformPartition",
    "EnvironmentInstance",
    "best_response",
    "check_lipschitz",
    "generate",
    "load_instance",
    "make_adversarial_env",
    "make_drifting_env",
    "make_needle_instance",
    "make_peak_instance",
    "make_random_lipschitz",
    "make_sleeping_env",
    "save_instance",
    "zooming_number",
    "ExperimentConfig",
    "RunLog",
    "contextual_regret",
    "run",
    "run_config",
    "streams",
    "sweep",
    "ContextualBandit",
    "rk_covering_number",
    "t0",
    "ProductSpace",
    "SimilaritySpace",
    "build_r_net",
    "covering_number",
    "doubling_constant_estimate",
    "packing_number",
    "Taxonomy",
    "TaxonomyBandit",
    "make_taxonomy_env",
    "true_quality",
    "true_weight",
    "ContextualZooming",
    "ZoomAuditor",
]
