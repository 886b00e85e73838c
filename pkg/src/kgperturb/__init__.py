"""Knowledge-graph conditioned drug perturbation prediction."""
from .chem import SplitAssignment, murcko_scaffold, parse_smiles, random_split, scaffold_key, scaffold_split
from .graph_store import EdgeType, FeatureMatrix, HeteroGraph, build_graph, load_graph, save_graph, validate
from .metrics import deg_correlation, paired_bootstrap, pearson
from .models import ModelConfig, build_model
from .sampler import PerturbationData, sample_neighbors
from .trainer import TrainConfig, evaluate_epoch, train

__version__ = "0.1.0"
