"""Decentralized, privacy-preserving recommendation with interest hypergraphs.

Each user trains a small local model on an item hypergraph built from its
own and its neighbours' public interactions, and shares 1-bit randomized
gradients with a sampled neighbourhood.
"""

from .data import Dataset, parse_tsv, split, synth_generate
from .experiment import ConfigError, ExperimentConfig, ablation, run_experiment
from .graphs import build_inter_user_graph, build_item_hypergraph, normalized_adjacency
from .metrics import ndcg_at_k, rank_items, recall_at_k
from .model import Batch, LocalModel, ModelConfig, compute_local_gradients, forward
from .privacy import LdpConfig, PrivacyAccountant, compose_to_dp, decode, encode, rdp_epsilon
from .protocol import ProtocolConfig, communication_cost, neighbor_sampling, propagate, training_round

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ConfigError",
    "Dataset",
    "ExperimentConfig",
    "LdpConfig",
    "LocalModel",
    "ModelConfig",
    "PrivacyAccountant",
    "ProtocolConfig",
    "ablation",
    "build_inter_user_graph",
    "build_item_hypergraph",
    "communication_cost",
    "compose_to_dp",
    "compute_local_gradients",
    "decode",
    "encode",
    "forward",
    "ndcg_at_k",
    "neighbor_sampling",
    "normalized_adjacency",
    "parse_tsv",
    "propagate",
    "rank_items",
    "rdp_epsilon",
    "recall_at_k",
    "run_experiment",
    "split",
    "synth_generate",
    "training_round",
]
