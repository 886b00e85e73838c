"""Perturbation samples, minibatches and seeded neighbourhood sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import FormatError, UnknownId
from .graph_store import HeteroGraph, Relation, read_ndf, read_tsv, write_ndf, write_tsv

SAMPLE_HEADER = ("drug_id", "cell_id", "row")
BASELINE_HEADER = ("cell_id", "row")


@dataclass
class PerturbationSample:
    drug_id: str
    cell_id: str
    y: np.ndarray


@dataclass
class PerturbationData:
    """Observed expression per (drug, cell) pair plus the per-cell baselines."""

    drug_ids: List[str]
    cell_ids: List[str]
    Y: np.ndarray  # [S, G]
    baseline_ids: List[str]
    baselines: np.ndarray  # [C, G]

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float32)
        self.baselines = np.asarray(self.baselines, dtype=np.float32)
        if self.Y.shape[0] != len(self.drug_ids) or len(self.drug_ids) != len(self.cell_ids):
            raise FormatError("sample index and expression matrix disagree in length")
        if self.baselines.shape[0] != len(self.baseline_ids):
            raise FormatError("baseline index and matrix disagree in length")
        if self.Y.size and self.Y.shape[1] != self.baselines.shape[1]:
            raise FormatError(f"gene count mismatch: {self.Y.shape[1]} vs {self.baselines.shape[1]}")
        if not np.all(np.isfinite(self.Y)) or not np.all(np.isfinite(self.baselines)):
            raise FormatError("non-finite expression values")
        self._cell_row = {c: i for i, c in enumerate(self.baseline_ids)}
        missing = sorted(set(self.cell_ids) - set(self._cell_row))
        if missing:
            raise UnknownId(f"no baseline for cell {missing[0]!r}")

    @property
    def n_genes(self) -> int:
        return self.baselines.shape[1]

    def __len__(self) -> int:
        return len(self.drug_ids)

    def __getitem__(self, i: int) -> PerturbationSample:
        return PerturbationSample(self.drug_ids[i], self.cell_ids[i], self.Y[i])

    def baseline_rows(self, rows) -> np.ndarray:
        return self.baselines[[self._cell_row[self.cell_ids[r]] for r in rows]]

    def baseline_of(self, cell_id: str) -> np.ndarray:
        return self.baselines[self._cell_row[cell_id]]

    def rows_for_drugs(self, drugs) -> np.ndarray:
        wanted = set(drugs)
        return np.array([i for i, d in enumerate(self.drug_ids) if d in wanted], dtype=np.int64)

    def save(self, directory, prefix: str = "") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_tsv(directory / f"{prefix}samples.tsv", SAMPLE_HEADER,
                  [(d, c, i) for i, (d, c) in enumerate(zip(self.drug_ids, self.cell_ids))])
        write_ndf(directory / f"{prefix}samples.ndf", self.Y)
        write_tsv(directory / f"{prefix}baselines.tsv", BASELINE_HEADER,
                  [(c, i) for i, c in enumerate(self.baseline_ids)])
        write_ndf(directory / f"{prefix}baselines.ndf", self.baselines)

    @classmethod
    def load(cls, directory, prefix: str = "") -> "PerturbationData":
        directory = Path(directory)
        idx = read_tsv(directory / f"{prefix}samples.tsv", SAMPLE_HEADER)
        Y = read_ndf(directory / f"{prefix}samples.ndf")
        Y = Y.reshape(Y.shape[0], -1)
        rows = [int(r[2]) for r in idx]
        bidx = read_tsv(directory / f"{prefix}baselines.tsv", BASELINE_HEADER)
        B = read_ndf(directory / f"{prefix}baselines.ndf")
        B = B.reshape(B.shape[0], -1)
        return cls([r[0] for r in idx], [r[1] for r in idx], Y[rows],
                   [r[0] for r in bidx], B[[int(r[1]) for r in bidx]])


@dataclass
class SampledSubgraph:
    """Sampled neighbourhood of a set of seed nodes in local index space.

    ``nodes[t][k]`` is the global index of local node ``k`` of type ``t``;
    seeds occupy the first local slots of their type. Each entry of
    ``edges`` holds local ``src``/``dst`` arrays and the hop at which the
    edge was sampled.
    """

    seed_type: str
    nodes: Dict[str, np.ndarray]
    n_seeds: int
    edges: Dict[Relation, Dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def seeds(self) -> np.ndarray:
        return np.arange(self.n_seeds)

    def num_edges(self) -> int:
        return sum(len(e["src"]) for e in self.edges.values())

    def global_edges(self, rel: Relation) -> Tuple[np.ndarray, np.ndarray]:
        e = self.edges[rel]
        return self.nodes[rel.src][e["src"]], self.nodes[rel.dst][e["dst"]]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_neighbors(
    g: HeteroGraph,
    seeds: Sequence[int],
    fanouts: Sequence[int] = (20, 10),
    seed: Union[int, Sequence[int], np.random.Generator] = 0,
    relations: Optional[Sequence[Relation]] = None,
    seed_type: str = "drug",
) -> SampledSubgraph:
    """Sample up to ``fanouts[h]`` in-edges per (node, relation) at hop ``h``.

    Sampling is without replacement over edge positions, walks edges toward
    the seeds, and is fully determined by ``seed``.
    """
    rng = _rng(seed)
    if relations is None:
        relations = g.message_relations()
    by_dst: Dict[str, List[Relation]] = {}
    for rel in relations:
        by_dst.setdefault(rel.dst, []).append(rel)

    local: Dict[str, Dict[int, int]] = {t: {} for t in g.node_types}
    order: Dict[str, List[int]] = {t: [] for t in g.node_types}
    for s in seeds:
        s = int(s)
        if s not in local[seed_type]:
            local[seed_type][s] = len(order[seed_type])
            order[seed_type].append(s)
    n_seeds = len(order[seed_type])
    edge_buf: Dict[Relation, List[Tuple[int, int, int]]] = {rel: [] for rel in relations}

    frontier = [(seed_type, s) for s in order[seed_type]]
    for hop, fanout in enumerate(fanouts):
        nxt = []
        for t, v in frontier:
            dst_local = local[t][v]
            for rel in by_dst.get(t, ()):
                nbrs = g.in_neighbors(rel, v)
                if len(nbrs) > fanout:
                    nbrs = nbrs[np.sort(rng.choice(len(nbrs), size=fanout, replace=False))]
                src_map = local[rel.src]
                for u in nbrs.tolist():
                    if u not in src_map:
                        src_map[u] = len(order[rel.src])
                        order[rel.src].append(u)
                        nxt.append((rel.src, u))
                    edge_buf[rel].append((src_map[u], dst_local, hop))
        frontier = nxt

    edges = {}
    for rel, buf in edge_buf.items():
        arr = np.array(buf, dtype=np.int64).reshape(-1, 3)
        edges[rel] = {"src": arr[:, 0], "dst": arr[:, 1], "hop": arr[:, 2]}
    nodes = {t: np.array(order[t], dtype=np.int64) for t in g.node_types}
    return SampledSubgraph(seed_type, nodes, n_seeds, edges)


def make_batches(samples, batch_size: int = 512, shuffle_seed=0) -> List[np.ndarray]:
    """Seeded shuffle then contiguous chunks of sample indices; the last chunk may be short."""
    n = samples if isinstance(samples, (int, np.integer)) else len(samples)
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    perm = _rng(shuffle_seed).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def batch_seed(seed: int, epoch: int, batch_index: int) -> np.random.Generator:
    """Independent PRNG stream per (seed, epoch, batch) so results do not depend on scheduling."""
    return np.random.default_rng([int(seed), int(epoch), int(batch_index)])
