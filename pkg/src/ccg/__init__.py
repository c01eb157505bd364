"""Concept graphs from sparse autoencoder codes, with intervention-based scoring.

Modules
-------
sae        TopK sparse autoencoder
graph      concept selection and DAG learning
intervene  ablations and the Causal Fidelity Score
stats      paired tests, bootstrap, probes, correlation guards
synth      planted ground truth and recovery metrics
io         file formats
pipeline   per-dataset, per-seed orchestration
"""

__version__ = "0.1.0"

from .errors import CCGError, FormatError, InvalidArgumentError, NumericError, UndefinedTestError
from .sae import SaeModel, SaeTrainConfig, encode, decode, topk_gate, train_sae, l0_rate
from .graph import ConceptGraph, GraphTrainConfig, acyclicity, expm, sem_loss, train_graph
from .intervene import CfsConfig, CfsReport, cfs_score, run_cfs_evaluation
from .synth import SynthConfig, generate

__all__ = [
    "CCGError", "FormatError", "InvalidArgumentError", "NumericError", "UndefinedTestError",
    "SaeModel", "SaeTrainConfig", "encode", "decode", "topk_gate", "train_sae", "l0_rate",
    "ConceptGraph", "GraphTrainConfig", "acyclicity", "expm", "sem_loss", "train_graph",
    "CfsConfig", "CfsReport", "cfs_score", "run_cfs_evaluation",
    "SynthConfig", "generate",
]
