"""Continuous-time graph neural networks.

Node representations evolve under a linear ODE driven by a regularized
graph operator and a restart term; training uses a constant-memory
adjoint backward pass. Closed-form spectral solutions serve as oracles
for every numeric path.
"""

from cgnn.graph import Graph, PropagationOperator, SymNormAdj, build_sym_norm, regularize
from cgnn.dynamics import NodeStates, OdeSpec, SolverConfig, integrate, adjoint_backward
from cgnn.datasets import Dataset, SbmSpec, generate_sbm, load_dataset, save_dataset
from cgnn.model import ModelParams, TrainConfig, train, evaluate

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "SymNormAdj",
    "PropagationOperator",
    "build_sym_norm",
    "regularize",
    "NodeStates",
    "OdeSpec",
    "SolverConfig",
    "integrate",
    "adjoint_backward",
    "Dataset",
    "SbmSpec",
    "generate_sbm",
    "load_dataset",
    "save_dataset",
    "ModelParams",
    "TrainConfig",
    "train",
    "evaluate",
]
