"""Heterogeneous graph container, file formats and adjacency queries.

Nodes are identified by string ids in the input tables and mapped to dense
per-type indices in first-seen order. Edges are stored per edge type as a
(src, dst) index list sorted by (src, dst), with forward and reverse CSR
views built from it.
"""
from __future__ import annotations

import csv
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    DanglingEdgeEndpoint,
    FeatureShapeMismatch,
    FormatError,
    GraphError,
    NonFiniteFeature,
    UnknownEdgeType,
    UnknownNodeType,
)

NODE_TYPES = (
    "drug",
    "gene_protein",
    "disease",
    "biological_process",
    "molecular_function",
    "cellular_component",
    "pathway",
    "cell",
)

NDF_MAGIC = b"NDF1"


class EdgeType(NamedTuple):
    src: str
    relation: str
    dst: str

    @property
    def key(self) -> str:
        return f"{self.src}:{self.relation}:{self.dst}"

    @classmethod
    def parse(cls, key: str) -> "EdgeType":
        parts = key.split(":")
        if len(parts) != 3:
            raise UnknownEdgeType(key)
        return cls(*parts)


class Relation(NamedTuple):
    """A message-passing direction over one stored edge type.

    ``reverse=False`` sends messages src -> dst along the stored edges;
    ``reverse=True`` sends them dst -> src.
    """

    src: str
    name: str
    dst: str
    etype: EdgeType
    reverse: bool

    @property
    def key(self) -> str:
        return f"{self.src}:{self.name}:{self.dst}"


@dataclass
class FeatureMatrix:
    node_type: str
    values: np.ndarray  # [N, modalities * dim], float32
    modalities: int = 2
    dim: int = 768

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[1] != self.modalities * self.dim:
            raise FeatureShapeMismatch(
                f"{self.node_type}: expected width {self.modalities}x{self.dim}, "
                f"got shape {self.values.shape}"
            )

    @property
    def width(self) -> int:
        return self.modalities * self.dim

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


@dataclass
class CSR:
    indptr: np.ndarray
    indices: np.ndarray

    def row(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)


def _csr(rows: np.ndarray, cols: np.ndarray, n_rows: int) -> CSR:
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return CSR(np.cumsum(indptr), cols.astype(np.int64))


@dataclass
class HeteroGraph:
    node_ids: Dict[str, List[str]]
    edges: Dict[EdgeType, Tuple[np.ndarray, np.ndarray]]
    features: Dict[str, FeatureMatrix]
    node_names: Dict[str, List[str]] = field(default_factory=dict)
    smiles: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for t in self.node_ids:
            if t not in NODE_TYPES:
                raise UnknownNodeType(t)
        self._lookup = {
            nid: (t, i) for t, ids in self.node_ids.items() for i, nid in enumerate(ids)
        }
        sorted_edges = {}
        self._fwd: Dict[EdgeType, CSR] = {}
        self._rev: Dict[EdgeType, CSR] = {}
        for et, (src, dst) in self.edges.items():
            src = np.asarray(src, dtype=np.int64)
            dst = np.asarray(dst, dtype=np.int64)
            ns, nd = self.num_nodes(et.src), self.num_nodes(et.dst)
            if src.size and (src.min() < 0 or src.max() >= ns or dst.min() < 0 or dst.max() >= nd):
                raise DanglingEdgeEndpoint(f"edge index out of range for {et.key}")
            order = np.lexsort((dst, src))
            src, dst = src[order], dst[order]
            src.flags.writeable = False
            dst.flags.writeable = False
            sorted_edges[et] = (src, dst)
            self._fwd[et] = _csr(src, dst, ns)
            self._rev[et] = _csr(dst, src, nd)
        self.edges = sorted_edges

    # -- basic queries ----------------------------------------------------
    @property
    def node_types(self) -> List[str]:
        return [t for t in NODE_TYPES if self.num_nodes(t) > 0]

    @property
    def edge_types(self) -> List[EdgeType]:
        return sorted(self.edges)

    def num_nodes(self, node_type: str) -> int:
        if node_type not in NODE_TYPES:
            raise UnknownNodeType(node_type)
        return len(self.node_ids.get(node_type, ()))

    def num_edges(self, etype: EdgeType) -> int:
        return len(self.edges[etype][0])

    def index_of(self, node_id: str) -> Tuple[str, int]:
        try:
            return self._lookup[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._lookup

    def csr(self, etype: EdgeType, direction: str = "forward") -> CSR:
        table = self._fwd if direction == "forward" else self._rev
        try:
            return table[etype]
        except KeyError:
            raise UnknownEdgeType(str(etype)) from None

    def feature_values(self, node_type: str) -> np.ndarray:
        return self.features[node_type].values

    def message_relations(self, add_reverse: bool = True) -> List[Relation]:
        rels = []
        for et in self.edge_types:
            rels.append(Relation(et.src, et.relation, et.dst, et, False))
            if add_reverse:
                rels.append(Relation(et.dst, "rev_" + et.relation, et.src, et, True))
        return rels

    def in_neighbors(self, rel: Relation, index: int) -> np.ndarray:
        """Sources of messages arriving at ``index`` (a node of type ``rel.dst``)."""
        return self.csr(rel.etype, "forward" if rel.reverse else "reverse").row(index)

    def replace(self, edges=None, features=None) -> "HeteroGraph":
        return HeteroGraph(
            node_ids=self.node_ids,
            edges=self.edges if edges is None else edges,
            features=self.features if features is None else features,
            node_names=self.node_names,
            smiles=self.smiles,
        )


def neighbors(g: HeteroGraph, node: Tuple[str, int], etype, direction: str = "forward") -> np.ndarray:
    """Sorted, duplicate-preserving neighbour indices of ``node`` under ``etype``.

    ``forward`` returns destinations of edges leaving the node; ``reverse``
    returns sources of edges entering it.
    """
    if isinstance(etype, str):
        etype = EdgeType.parse(etype)
    etype = EdgeType(*etype)
    if etype not in g.edges:
        raise UnknownEdgeType(etype.key)
    if direction not in ("forward", "reverse"):
        raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    node_type, index = node
    expected = etype.src if direction == "forward" else etype.dst
    if node_type != expected:
        raise UnknownEdgeType(f"{etype.key} has no {direction} edges at a {node_type} node")
    if not 0 <= index < g.num_nodes(node_type):
        raise IndexError(f"{node_type} index {index} out of range")
    return g.csr(etype, direction).row(index).copy()


def build_graph(
    nodes: Iterable[Sequence[str]],
    edges: Iterable[Sequence[str]],
    features: Mapping[str, FeatureMatrix],
) -> HeteroGraph:
    """Assemble a validated graph from node rows, edge rows and per-type features.

    ``nodes`` rows are ``(node_id, node_type, name, smiles)`` and ``edges``
    rows are ``(src_id, relation, dst_id)``.
    """
    node_ids: Dict[str, List[str]] = {}
    names: Dict[str, List[str]] = {}
    smiles: Dict[str, str] = {}
    lookup: Dict[str, Tuple[str, int]] = {}
    for row_no, row in enumerate(nodes):
        nid, ntype = row[0], row[1]
        if ntype not in NODE_TYPES:
            raise UnknownNodeType(f"row {row_no}: {ntype!r}")
        if nid in lookup:
            raise GraphError(f"row {row_no}: duplicate node id {nid!r}")
        lookup[nid] = (ntype, len(node_ids.setdefault(ntype, [])))
        node_ids[ntype].append(nid)
        names.setdefault(ntype, []).append(row[2] if len(row) > 2 else "")
        if len(row) > 3 and row[3]:
            smiles[nid] = row[3]

    buckets: Dict[EdgeType, Tuple[List[int], List[int]]] = {}
    for row_no, (src_id, relation, dst_id) in enumerate(edges):
        if not relation:
            raise GraphError(f"edge row {row_no}: empty relation")
        for endpoint in (src_id, dst_id):
            if endpoint not in lookup:
                raise DanglingEdgeEndpoint(endpoint)
        (st, si), (dt, di) = lookup[src_id], lookup[dst_id]
        s, d = buckets.setdefault(EdgeType(st, relation, dt), ([], []))
        s.append(si)
        d.append(di)

    for ntype, ids in node_ids.items():
        if ntype not in features:
            raise FeatureShapeMismatch(f"no feature matrix for node type {ntype!r}")
        fm = features[ntype]
        if fm.n_rows != len(ids):
            raise FeatureShapeMismatch(
                f"{ntype}: {fm.n_rows} feature rows for {len(ids)} nodes"
            )
        bad = np.argwhere(~np.isfinite(fm.values))
        if bad.size:
            raise NonFiniteFeature(f"{ntype}: row {int(bad[0, 0])} ({ids[bad[0, 0]]})")
    for ntype in features:
        if ntype not in NODE_TYPES:
            raise UnknownNodeType(ntype)

    return HeteroGraph(
        node_ids=node_ids,
        edges={et: (np.array(s, dtype=np.int64), np.array(d, dtype=np.int64)) for et, (s, d) in buckets.items()},
        features={t: features[t] for t in node_ids},
        node_names=names,
        smiles=smiles,
    )


def validate(g: HeteroGraph) -> dict:
    """Summary counts used for auditing a graph; never raises."""
    report = {
        "node_counts": {t: g.num_nodes(t) for t in NODE_TYPES if g.num_nodes(t)},
        "edge_counts": {},
        "out_degree_histogram": {},
        "in_degree_histogram": {},
        "feature_nan_count": 0,
    }
    for et in g.edge_types:
        report["edge_counts"][et.key] = g.num_edges(et)
        for name, direction in (("out_degree_histogram", "forward"), ("in_degree_histogram", "reverse")):
            hist = Counter(int(d) for d in g.csr(et, direction).degrees())
            report[name][et.key] = {str(k): v for k, v in sorted(hist.items())}
    for fm in g.features.values():
        report["feature_nan_count"] += int((~np.isfinite(fm.values)).sum())
    return report


# -- file formats -----------------------------------------------------------

def write_ndf(path, values: np.ndarray) -> None:
    """Write a [rows, modalities, dim] float32 block in NDF1 layout."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, None, :]
    if arr.ndim != 3:
        raise FormatError(f"NDF1 payload must be 2-D or 3-D, got {arr.ndim}-D")
    n, m, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(NDF_MAGIC)
        fh.write(struct.pack("<III", n, m, d))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_ndf(path) -> np.ndarray:
    """Read an NDF1 file into a float32 array of shape [rows, modalities, dim]."""
    raw = Path(path).read_bytes()
    if raw[:4] != NDF_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    n, m, d = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * n * m * d
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, m, d).astype(np.float32)


def read_feature_matrix(path, node_type: str) -> FeatureMatrix:
    arr = read_ndf(path)
    n, m, d = arr.shape
    return FeatureMatrix(node_type, arr.reshape(n, m * d), modalities=m, dim=d)


def read_tsv(path, header: Sequence[str]) -> List[List[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        first = next(reader, None)
        if first is None or [c.strip() for c in first[: len(header)]] != list(header):
            raise FormatError(f"{path}: expected header {list(header)}, got {first}")
        rows = []
        for row in reader:
            if not row:
                continue
            row = row + [""] * (len(header) - len(row))
            rows.append(row[: len(header)])
        return rows


def write_tsv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


NODE_HEADER = ("node_id", "node_type", "name", "smiles")
EDGE_HEADER = ("src_id", "relation", "dst_id")


def load_graph(manifest_path) -> HeteroGraph:
    """Load a graph from its JSON manifest.

    Manifest keys: ``nodes`` and ``edges`` (TSV paths) and ``features``
    (node type -> NDF1 path). Relative paths resolve against the manifest.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    nodes = read_tsv(base / manifest["nodes"], NODE_HEADER)
    edges = read_tsv(base / manifest["edges"], EDGE_HEADER)
    feats = {}
    for ntype, rel in manifest["features"].items():
        if ntype not in NODE_TYPES:
            raise UnknownNodeType(ntype)
        feats[ntype] = read_feature_matrix(base / rel, ntype)
    return build_graph(nodes, edges, feats)


def save_graph(g: HeteroGraph, directory, prefix: str = "") -> Path:
    """Write nodes/edges TSVs, per-type NDF1 features and a manifest; returns the manifest path."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    node_rows = []
    for t in NODE_TYPES:
        for i, nid in enumerate(g.node_ids.get(t, ())):
            names = g.node_names.get(t, [])
            node_rows.append((nid, t, names[i] if i < len(names) else "", g.smiles.get(nid, "")))
    edge_rows = []
    for et in g.edge_types:
        src, dst = g.edges[et]
        s_ids, d_ids = g.node_ids[et.src], g.node_ids[et.dst]
        edge_rows.extend((s_ids[s], et.relation, d_ids[d]) for s, d in zip(src, dst))
    write_tsv(directory / f"{prefix}nodes.tsv", NODE_HEADER, node_rows)
    write_tsv(directory / f"{prefix}edges.tsv", EDGE_HEADER, edge_rows)
    feat_paths = {}
    for t in g.node_types:
        fm = g.features[t]
        rel = f"features/{prefix}{t}.ndf"
        write_ndf(directory / rel, fm.values.reshape(fm.n_rows, fm.modalities, fm.dim))
        feat_paths[t] = rel
    manifest = {"nodes": f"{prefix}nodes.tsv", "edges": f"{prefix}edges.tsv", "features": feat_paths}
    path = directory / f"{prefix}manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def drug_smiles_table(g: HeteroGraph) -> List[Tuple[str, str]]:
    return [(nid, g.smiles.get(nid, "")) for nid in g.node_ids.get("drug", [])]


def type_of_edges(g: HeteroGraph, relation: str, src: str = "drug", dst: Optional[str] = None) -> EdgeType:
    """Find the single stored edge type with the given relation name."""
    hits = [et for et in g.edge_types if et.relation == relation and et.src == src and (dst is None or et.dst == dst)]
    if len(hits) != 1:
        raise UnknownEdgeType(f"{src}:{relation}:{dst or '*'}")
    return hits[0]
