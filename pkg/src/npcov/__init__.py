"""Neuron path coverage for feed-forward classifiers.

Relevance is propagated back from the predicted logit, each input's
critical decision path is extracted from it, training paths are clustered
into a decision graph, and test suites are scored by how many
(class, cluster, layer, bucket) cells they reach.
"""

from npcov.abstraction import DecisionGraph, build_decision_graph
from npcov.cdp import Cdp, extract_cdp, layer_jaccard, path_similarity
from npcov.coverage import CoverageConfig, CoverageState, coverage, output_impartiality
from npcov.errors import ConfigError, FormatError, InvariantError, NpcError
from npcov.io import LabeledDataset, load_dataset, load_decision_graph, load_model, save_decision_graph, save_model
from npcov.kernels import BACKEND
from npcov.lrp import relevance
from npcov.nn import Model, forward, mask_forward

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Cdp",
    "ConfigError",
    "CoverageConfig",
    "CoverageState",
    "DecisionGraph",
    "FormatError",
    "InvariantError",
    "LabeledDataset",
    "Model",
    "NpcError",
    "build_decision_graph",
    "coverage",
    "extract_cdp",
    "forward",
    "layer_jaccard",
    "load_dataset",
    "load_decision_graph",
    "load_model",
    "mask_forward",
    "output_impartiality",
    "path_similarity",
    "relevance",
    "save_decision_graph",
    "save_model",
]
