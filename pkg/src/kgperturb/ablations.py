"""Graph ablations and the model × split × ablation experiment matrix."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .chem import SplitAssignment, random_split, scaffold_split
from .graph_store import NODE_TYPES, FeatureMatrix, HeteroGraph, drug_smiles_table
from .metrics import SampleMetrics, metric_column, paired_bootstrap
from .sampler import PerturbationData
from .trainer import TrainConfig, evaluate_epoch, model_from_checkpoint, split_rows, train

log = logging.getLogger(__name__)

ABLATIONS = ("none", "edge_shuffle", "node_randomize")
RESULT_HEADER = ("model", "split", "ablation", "pearson_mean", "deg_mean", "deg_ci_lo", "deg_ci_hi", "p_vs_mlp")


def shuffle_edges(g: HeteroGraph, seed: int = 0, rewire: bool = False) -> HeteroGraph:
    """Permute destination endpoints within each edge type.

    Sources, per-type counts and every node's in- and out-degree survive;
    which source meets which destination does not. ``rewire=True`` instead
    draws both endpoints uniformly at random (degrees not preserved).
    """
    edges = {}
    for k, et in enumerate(g.edge_types):
        rng = np.random.default_rng([int(seed), k])
        src, dst = g.edges[et]
        if rewire:
            src = rng.integers(0, g.num_nodes(et.src), size=len(src))
            dst = rng.integers(0, g.num_nodes(et.dst), size=len(dst))
        else:
            dst = dst[rng.permutation(len(dst))]
        edges[et] = (np.array(src), np.array(dst))
    return g.replace(edges=edges)


def randomize_node_features(g: HeteroGraph, exclude: Sequence[str] = ("drug", "cell"), seed: int = 0) -> HeteroGraph:
    """Replace features of non-excluded node types with Gaussian draws matched per column."""
    feats = dict(g.features)
    for t in g.node_types:
        if t in exclude:
            continue
        fm = g.features[t]
        x = fm.values.astype(np.float64)
        rng = np.random.default_rng([int(seed), NODE_TYPES.index(t)])
        new = rng.normal(x.mean(axis=0), x.std(axis=0), size=x.shape)
        feats[t] = FeatureMatrix(t, new, fm.modalities, fm.dim)
    return g.replace(features=feats)


def apply_ablation(g: HeteroGraph, ablation: str, seed: int = 0) -> HeteroGraph:
    if ablation == "none":
        return g
    if ablation == "edge_shuffle":
        return shuffle_edges(g, seed)
    if ablation == "edge_rewire":
        return shuffle_edges(g, seed, rewire=True)
    if ablation == "node_randomize":
        return randomize_node_features(g, seed=seed)
    raise ValueError(f"unknown ablation {ablation!r}")


def make_split(g: HeteroGraph, mode: str, train_fraction: float = 0.8, seed: int = 0) -> SplitAssignment:
    if mode == "scaffold":
        return scaffold_split(drug_smiles_table(g), train_fraction, seed)
    if mode == "random":
        return random_split(g.node_ids["drug"], train_fraction, seed)
    raise ValueError(f"unknown split mode {mode!r}")


def matrix_conditions() -> List[tuple]:
    """(model, split, ablation) in table order; graph ablations apply to GAT only."""
    rows = []
    for split in ("scaffold", "random"):
        for model in ("mlp", "mlp_targets", "gat"):
            rows.append((model, split, "none"))
        rows += [("gat", split, "edge_shuffle"), ("gat", split, "node_randomize")]
    return rows


@dataclass
class MatrixRow:
    model: str
    split: str
    ablation: str
    pearson_mean: float
    deg_mean: float
    deg_ci_lo: float
    deg_ci_hi: float
    p_vs_mlp: float
    metrics: List[SampleMetrics] = field(default_factory=list, repr=False)
    checkpoint: object = field(default=None, repr=False)

    def as_row(self) -> tuple:
        return (self.model, self.split, self.ablation, repr(self.pearson_mean), repr(self.deg_mean),
                repr(self.deg_ci_lo), repr(self.deg_ci_hi), repr(self.p_vs_mlp))


def run_condition(cfg: TrainConfig, graph: HeteroGraph, data: PerturbationData, split: SplitAssignment,
                  ablation_seed: int = 0):
    """Train and evaluate one cell; returns (checkpoint, history, per-sample metrics, graph used)."""
    g = apply_ablation(graph, cfg.ablation, ablation_seed) if cfg.model == "gat" else graph
    ckpt, hist = train(cfg, data, g, split)
    model = model_from_checkpoint(ckpt)
    _, test_rows = split_rows(data, g, split)
    table = evaluate_epoch(model, data, test_rows, g, cfg.deg_k, cfg.batch_size, cfg.eval_seed)
    return ckpt, hist, table, g


def _run_cell(args):
    cfg, graph, data, split, ablation_seed = args
    ckpt, _, table, _ = run_condition(cfg, graph, data, split, ablation_seed)
    return ckpt, table


def run_matrix(base_cfg: TrainConfig, graph: HeteroGraph, data: PerturbationData, train_fraction: float = 0.8,
               split_seed: Optional[int] = None, iters: int = 1000, parallel: bool = False,
               conditions: Optional[Sequence[tuple]] = None) -> List[MatrixRow]:
    """Train every condition with the shared seed and compare each against MLP on the same split."""
    seed = base_cfg.seed if split_seed is None else split_seed
    conditions = list(conditions or matrix_conditions())
    splits: Dict[str, SplitAssignment] = {}
    jobs = []
    for model, split, ablation in conditions:
        if split not in splits:
            splits[split] = make_split(graph, split, train_fraction, seed)
        cfg = replace(base_cfg, model=model, ablation=ablation, split=split)
        jobs.append((cfg, graph, data, splits[split], base_cfg.seed))

    if parallel:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = []
        for job in jobs:
            log.info("condition %s/%s/%s", job[0].model, job[0].split, job[0].ablation)
            results.append(_run_cell(job))

    mlp_deg = {}
    for (model, split, ablation), (_, table) in zip(conditions, results):
        if model == "mlp" and ablation == "none":
            mlp_deg[split] = metric_column(table, "deg")
    rows = []
    for (model, split, ablation), (ckpt, table) in zip(conditions, results):
        deg = metric_column(table, "deg")
        ci = paired_bootstrap(deg, np.zeros_like(deg), iters, seed).ci95
        base = mlp_deg.get(split)
        p = paired_bootstrap(deg, base, iters, seed).p_one_sided if base is not None else float("nan")
        rows.append(MatrixRow(model, split, ablation, float(metric_column(table, "pearson").mean()),
                              float(deg.mean()), ci[0], ci[1], p, table, ckpt))
    return rows


def write_results(path, rows: Sequence[MatrixRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r in rows:
            w.writerow(r.as_row())


def read_results(path) -> List[MatrixRow]:
    with open(path, newline="") as fh:
        return [MatrixRow(r["model"], r["split"], r["ablation"], float(r["pearson_mean"]), float(r["deg_mean"]),
                          float(r["deg_ci_lo"]), float(r["deg_ci_hi"]), float(r["p_vs_mlp"]))
                for r in csv.DictReader(fh)]
