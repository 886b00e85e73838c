"""Attention capture, source-type aggregation and per-drug reasoning subgraphs."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import EmptyRecords, UnknownDrug
from .graph_store import HeteroGraph
from .models import HeteroGATModel


class AttentionRecord(NamedTuple):
    layer: int
    edge_type: str  # message relation key, e.g. "gene_protein:rev_targets:drug"
    head: int
    source: Tuple[str, int]
    destination: Tuple[str, int]
    weight: float


def record_attention(model: HeteroGATModel, graph: HeteroGraph, drug_idx: Sequence[int],
                     sample_seed=0, batch_size: int = 512) -> List[AttentionRecord]:
    """One record per (sampled edge, layer, head), weights taken after the softmax, in eval mode."""
    was_training = model.training
    model.eval()
    out: List[AttentionRecord] = []
    drug_idx = np.asarray(drug_idx, dtype=np.int64)
    try:
        for k in range(0, len(drug_idx), batch_size):
            sub, _ = model.sample(graph, drug_idx[k:k + batch_size], [*np.atleast_1d(sample_seed).tolist(), k])
            raw = []
            model.embed_drugs(graph, sub, None, raw)
            for layer, rel, src, dst, alpha in raw:
                gs, gd = sub.nodes[rel.src][src], sub.nodes[rel.dst][dst]
                key = rel.key
                for e in range(len(src)):
                    s, d = (rel.src, int(gs[e])), (rel.dst, int(gd[e]))
                    for h in range(alpha.shape[1]):
                        out.append(AttentionRecord(layer, key, h, s, d, float(alpha[e, h])))
    finally:
        model.train(was_training)
    return out


def aggregate_by_source_type(records: Iterable[AttentionRecord], destination_type: str = "drug",
                             layer: Optional[int] = None) -> Dict[str, float]:
    """Share of attention mass arriving at ``destination_type`` nodes, by source node type.

    ``layer=None`` pools all layers; a negative layer counts from the end.
    """
    records = list(records)
    if not records:
        raise EmptyRecords("no attention records")
    if layer is not None and layer < 0:
        layer = max(r.layer for r in records) + 1 + layer
    mass: Dict[str, float] = defaultdict(float)
    for r in records:
        if r.destination[0] == destination_type and (layer is None or r.layer == layer):
            mass[r.source[0]] += r.weight
    total = sum(mass.values())
    if total == 0:
        raise EmptyRecords(f"no attention records into {destination_type!r} nodes")
    return {t: v / total for t, v in sorted(mass.items())}


def write_aggregate_csv(path, distributions: Dict[str, Dict[str, float]], destination_type: str = "drug") -> None:
    """Rows ``scope,source_type,destination_type,mass``; one scope per layer selection."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scope", "source_type", "destination_type", "mass"])
        for scope, dist in distributions.items():
            for t, v in dist.items():
                w.writerow([scope, t, destination_type, repr(v)])


def attention_summary(model: HeteroGATModel, graph: HeteroGraph, drug_idx=None, sample_seed=0,
                      destination_type: str = "drug") -> Dict[str, Dict[str, float]]:
    """Source-type distributions pooled over all layers and for the final layer only."""
    if drug_idx is None:
        drug_idx = np.arange(graph.num_nodes("drug"))
    recs = record_attention(model, graph, drug_idx, sample_seed)
    return {
        "all_layers": aggregate_by_source_type(recs, destination_type),
        "final_layer": aggregate_by_source_type(recs, destination_type, layer=-1),
    }


def _distribution(edges: List[dict], graph: HeteroGraph) -> Dict[str, float]:
    mass: Dict[str, float] = defaultdict(float)
    for e in edges:
        mass[graph.index_of(e["src"])[0]] += e["alpha_mean"]
    total = sum(mass.values())
    return {t: v / total for t, v in sorted(mass.items())} if total else {}


def khop_reasoning_subgraph(model: HeteroGATModel, graph: HeteroGraph, drug_id: str, k: int = 2,
                            top_m: int = 5, sample_seed=0) -> dict:
    """Attention-weighted k-hop neighbourhood of one drug.

    Edges into the drug use the final layer's attention; edges one hop
    further out use the layer below. Each expanded node keeps its ``top_m``
    in-edges by head-mean weight.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    if top_m <= 0:
        raise ValueError("top_m must be positive")
    if not graph.has_node(drug_id) or graph.index_of(drug_id)[0] != "drug":
        raise UnknownDrug(drug_id)
    d_idx = graph.index_of(drug_id)[1]

    was_training = model.training
    model.eval()
    try:
        sub, _ = model.sample(graph, [d_idx], sample_seed)
        raw = []
        model.embed_drugs(graph, sub, None, raw)
    finally:
        model.train(was_training)

    n_layers = len(model.layers)
    incoming: Dict[Tuple[int, Tuple[str, int]], List[dict]] = defaultdict(list)
    for layer, rel, src, dst, alpha in raw:
        gs, gd = sub.nodes[rel.src][src], sub.nodes[rel.dst][dst]
        for e in range(len(src)):
            incoming[(layer, (rel.dst, int(gd[e])))].append({
                "src": graph.node_ids[rel.src][int(gs[e])],
                "dst": graph.node_ids[rel.dst][int(gd[e])],
                "relation": rel.name,
                "edge_type": rel.etype.key,
                "reversed": bool(rel.reverse),
                "alpha": [float(a) for a in alpha[e]],
                "alpha_mean": float(alpha[e].mean()),
            })

    root = ("drug", d_idx)
    seen = {root}
    frontier = [root]
    edges, per_hop = [], {}
    for hop in range(k):
        layer = max(n_layers - 1 - hop, 0)
        hop_edges, nxt = [], []
        for node in frontier:
            cands = sorted(incoming.get((layer, node), []), key=lambda e: (-e["alpha_mean"], e["src"], e["relation"]))
            for e in cands[:top_m]:
                hop_edges.append(dict(e, hop=hop + 1))
                src = graph.index_of(e["src"])
                if src not in seen:
                    seen.add(src)
                    nxt.append(src)
        edges.extend(hop_edges)
        per_hop[str(hop + 1)] = _distribution(hop_edges, graph)
        frontier = nxt

    order = sorted(seen, key=lambda n: (n != root, n[0], n[1]))
    nodes = [{"id": graph.node_ids[t][i], "type": t,
              "name": graph.node_names.get(t, [""] * (i + 1))[i] if graph.node_names.get(t) else ""}
             for t, i in order]
    return {
        "drug": drug_id,
        "k": k,
        "top_m": top_m,
        "nodes": nodes,
        "edges": edges,
        "source_type_distribution": _distribution(edges, graph),
        "per_hop_source_type_distribution": per_hop,
    }


def write_export(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
