"""Multi-period p-median toolkit.

Solvers: exact per-period enumeration (small scale), Teitz-Bart vertex
substitution, simulated annealing, and a trainable neural constructive
policy (sparse geometry-biased attention encoder, memory-augmented GRU
decoder, REINFORCE with a greedy rollout baseline). A CLI harness covers
corpus generation, training, solving, gap tables, ablations, scaling
sweeps, and gradient verification.
"""

from .config import EncoderConfig, PolicyConfig, TrainConfig
from .instance import (
    SCENARIOS,
    ProblemInstance,
    ScenarioSpec,
    SchemaError,
    Solution,
    Violation,
    evaluate_cost,
    generate_instance,
    knn_neighbors,
    load_instance,
    load_solution,
    save_instance,
    save_solution,
    validate,
)
from .model import Policy

__version__ = "0.1.0"
