"""Perturbation-delta models: MLP, MLP+Targets and heterogeneous GATv2.

Every model predicts a delta that is added to the cell baseline, so a zero
delta reproduces the baseline exactly.
"""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .engine import tensor as T
from .engine.nn import MLP, Module, glorot
from .engine.tensor import Tensor
from .exceptions import MissingSeedNode, ShapeMismatch, UnknownEdgeType, WidthMismatch
from .graph_store import EdgeType, HeteroGraph, Relation
from .sampler import SampledSubgraph, sample_neighbors

MODEL_KINDS = ("mlp", "mlp_targets", "gat")


@dataclass
class ModelConfig:
    kind: str = "gat"
    n_genes: int = 978
    node_widths: Dict[str, int] = field(default_factory=lambda: {"drug": 1536})
    relations: List[List] = field(default_factory=list)
    embed_dim: int = 256
    enc_hidden: int = 1024
    delta_hidden: int = 1024
    heads: int = 4
    gat_layers: int = 2
    mlp_enc_layers: int = 2
    gat_enc_layers: int = 3
    dropout: float = 0.1
    batch_norm: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    leaky_slope: float = 0.2
    targets_relation: str = "targets"
    fanouts: List[int] = field(default_factory=lambda: [20, 10])
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def for_graph(cls, g: HeteroGraph, n_genes: int, kind: str = "gat", **kw) -> "ModelConfig":
        widths = {t: g.features[t].width for t in g.node_types}
        rels = [[r.src, r.name, r.dst, r.etype.key, r.reverse] for r in g.message_relations()]
        return cls(kind=kind, n_genes=n_genes, node_widths=widths, relations=rels, **kw)

    def relation_objects(self) -> List[Relation]:
        return [Relation(s, n, d, EdgeType.parse(k), bool(rev)) for s, n, d, k, rev in self.relations]


def _param_name(key: str) -> str:
    return re.sub(r"[^0-9A-Za-z_]", "_", key)


def predict_residual(delta: Tensor, baseline) -> Tensor:
    """ŷ = baseline + delta; gradients flow only through ``delta``."""
    base = baseline if isinstance(baseline, Tensor) else Tensor(np.asarray(baseline, dtype=delta.dtype))
    if base.shape != delta.shape:
        raise ShapeMismatch(f"delta {delta.shape} vs baseline {base.shape}")
    return T.add(delta, Tensor(base.data))


def mean_pool_targets(target_embeddings: Tensor) -> Tensor:
    """Row mean of the target feature rows; an empty set pools to the zero vector."""
    if target_embeddings.shape[0] == 0:
        return Tensor(np.zeros((1, target_embeddings.shape[1]), dtype=target_embeddings.dtype))
    return T.mean_rows(target_embeddings)


def pooled_target_features(g: HeteroGraph, drug_idx: np.ndarray, relation: str = "targets") -> np.ndarray:
    """Mean target feature row for each drug index (zeros for drugs without targets)."""
    hits = [et for et in g.edge_types if et.src == "drug" and et.relation == relation]
    if len(hits) != 1:
        raise UnknownEdgeType(f"drug:{relation}:*")
    et = hits[0]
    csr = g.csr(et, "forward")
    feats = g.feature_values(et.dst)
    out = np.zeros((len(drug_idx), feats.shape[1]), dtype=np.float32)
    for k, d in enumerate(drug_idx):
        row = csr.row(int(d))
        if len(row):
            out[k] = feats[row].mean(axis=0)
    return out


class PerturbationModel(Module):
    config: ModelConfig

    @property
    def dtype(self):
        return next(iter(self.parameters().values())).dtype

    def _check(self, x_width: int, baseline: Tensor):
        if x_width != self.config.node_widths["drug"]:
            raise WidthMismatch(f"drug input width {x_width} != {self.config.node_widths['drug']}")
        if baseline.shape[1] != self.config.n_genes:
            raise WidthMismatch(f"baseline width {baseline.shape[1]} != {self.config.n_genes}")

    def predict_batch(self, graph: HeteroGraph, drug_idx, baseline: np.ndarray,
                      rng: Optional[np.random.Generator] = None, sample_seed=0, record=None) -> Tensor:
        raise NotImplementedError


class MLPModel(PerturbationModel):
    """Drug features and cell baseline only."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config
        self.encoder = MLP([c.node_widths["drug"]] + [c.enc_hidden] * (c.mlp_enc_layers - 1) + [c.embed_dim],
                           rng, c.batch_norm, c.dropout, c.bn_momentum, c.bn_eps)
        self.head = MLP([c.embed_dim + c.n_genes, c.delta_hidden, c.delta_hidden, c.n_genes], rng)

    def forward(self, x_drug: Tensor, baseline: Tensor, rng=None) -> Tensor:
        self._check(x_drug.shape[1], baseline)
        h = self.encoder(x_drug, rng)
        delta = self.head(T.concat([h, baseline]), rng)
        return predict_residual(delta, baseline)

    def predict_batch(self, graph, drug_idx, baseline, rng=None, sample_seed=0, record=None):
        x = Tensor(graph.feature_values("drug")[drug_idx].astype(self.dtype))
        return self.forward(x, Tensor(np.asarray(baseline, dtype=self.dtype)), rng)


def mlp_forward(x_drug: Tensor, baseline: Tensor, model: MLPModel, rng=None) -> Tensor:
    return model.forward(x_drug, baseline, rng)


class MLPTargetsModel(PerturbationModel):
    """MLP baseline plus mean-pooled target features through the same encoder."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config
        self.encoder = MLP([c.node_widths["drug"]] + [c.enc_hidden] * (c.mlp_enc_layers - 1) + [c.embed_dim],
                           rng, c.batch_norm, c.dropout, c.bn_momentum, c.bn_eps)
        self.head = MLP([2 * c.embed_dim + c.n_genes, c.delta_hidden, c.delta_hidden, c.n_genes], rng)

    def forward(self, x_drug: Tensor, x_targets: Tensor, baseline: Tensor, rng=None) -> Tensor:
        self._check(x_drug.shape[1], baseline)
        if x_targets.shape != x_drug.shape:
            raise WidthMismatch(f"target input {x_targets.shape} vs drug input {x_drug.shape}")
        h_drug = self.encoder(x_drug, rng)
        h_targets = self.encoder(x_targets, rng)
        delta = self.head(T.concat([h_drug, h_targets, baseline]), rng)
        return predict_residual(delta, baseline)

    def predict_batch(self, graph, drug_idx, baseline, rng=None, sample_seed=0, record=None):
        dt = self.dtype
        x = Tensor(graph.feature_values("drug")[drug_idx].astype(dt))
        xt = Tensor(pooled_target_features(graph, drug_idx, self.config.targets_relation).astype(dt))
        return self.forward(x, xt, Tensor(np.asarray(baseline, dtype=dt)), rng)


def mlp_targets_forward(x_drug, x_targets, baseline, model: MLPTargetsModel, rng=None) -> Tensor:
    return model.forward(x_drug, x_targets, baseline, rng)


class RelationAttention(Module):
    """GATv2 attention and messages for a single relation."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        c = dim // heads
        self.w_src = Tensor(glorot(rng, dim, dim), requires_grad=True)
        self.w_dst = Tensor(glorot(rng, dim, dim), requires_grad=True)
        self.att = Tensor(glorot(rng, heads, c), requires_grad=True)
        self.heads = heads


class HeteroGATv2Layer(Module):
    def __init__(self, relations: Sequence[Relation], dim: int, heads: int, rng: np.random.Generator,
                 slope: float = 0.2):
        self.relations = list(relations)
        self.rel = {_param_name(r.key): RelationAttention(dim, heads, rng) for r in self.relations}
        self.slope = slope
        self.heads = heads

    def __call__(self, h: Dict[str, Tensor], sub: SampledSubgraph, activation: bool, record=None,
                 layer: int = 0) -> Dict[str, Tensor]:
        messages: Dict[str, List[Tensor]] = {}
        for rel in self.relations:
            e = sub.edges.get(rel)
            if e is None or len(e["src"]) == 0:
                continue
            p = self.rel[_param_name(rel.key)]
            src, dst = e["src"], e["dst"]
            proj_src = T.take_rows(T.matmul(h[rel.src], p.w_src), src)
            proj_dst = T.take_rows(T.matmul(h[rel.dst], p.w_dst), dst)
            scores = T.head_dot(T.leaky_relu(T.add(proj_src, proj_dst), self.slope), p.att)
            uniq, seg = np.unique(dst, return_inverse=True)
            alpha = T.segment_softmax(scores, seg, len(uniq))
            if record is not None:
                record.append((layer, rel, src, dst, alpha.data.copy()))
            out = T.segment_weighted_sum(proj_src, alpha, dst, h[rel.dst].shape[0])
            messages.setdefault(rel.dst, []).append(out)
        new = dict(h)
        for t, outs in messages.items():
            total = outs[0]
            for o in outs[1:]:
                total = T.add(total, o)
            if activation:
                total = T.leaky_relu(total, self.slope)
            new[t] = T.add(h[t], total)
        return new


class HeteroGATModel(PerturbationModel):
    def __init__(self, config: ModelConfig):
        self.config = config
        c = config
        rng = np.random.default_rng(c.seed)
        self.encoders = {
            t: MLP([w] + [c.enc_hidden] * (c.gat_enc_layers - 1) + [c.embed_dim], rng,
                   c.batch_norm, c.dropout, c.bn_momentum, c.bn_eps)
            for t, w in sorted(c.node_widths.items())
        }
        rels = c.relation_objects()
        self.layers = [HeteroGATv2Layer(rels, c.embed_dim, c.heads, rng, c.leaky_slope) for _ in range(c.gat_layers)]
        self.head = MLP([c.embed_dim + c.n_genes, c.delta_hidden, c.delta_hidden, c.n_genes], rng)

    def encode(self, graph: HeteroGraph, sub: SampledSubgraph, rng=None) -> Dict[str, Tensor]:
        h = {}
        for t, idx in sub.nodes.items():
            if len(idx) == 0:
                continue
            if t not in self.encoders:
                raise WidthMismatch(f"model has no encoder for node type {t!r}")
            x = graph.feature_values(t)[idx].astype(self.dtype)
            if x.shape[1] != self.config.node_widths[t]:
                raise WidthMismatch(f"{t} features have width {x.shape[1]}, expected {self.config.node_widths[t]}")
            h[t] = self.encoders[t](Tensor(x), rng)
        return h

    def embed_drugs(self, graph: HeteroGraph, sub: SampledSubgraph, rng=None, record=None) -> Tensor:
        """Graph-contextualised embeddings of the seed drugs, in seed order."""
        if sub.n_seeds == 0:
            raise MissingSeedNode("subgraph has no seed drugs")
        h = self.encode(graph, sub, rng)
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            h = layer(h, sub, activation=k < last, record=record, layer=k)
        return T.take_rows(h["drug"], np.arange(sub.n_seeds))

    def forward(self, graph: HeteroGraph, sub: SampledSubgraph, seed_rows, baseline: Tensor,
                rng=None, record=None) -> Tensor:
        """``seed_rows[i]`` is the local seed index for sample row ``i``."""
        if baseline.shape[1] != self.config.n_genes:
            raise WidthMismatch(f"baseline width {baseline.shape[1]} != {self.config.n_genes}")
        z = T.take_rows(self.embed_drugs(graph, sub, rng, record), seed_rows)
        delta = self.head(T.concat([z, baseline]), rng)
        return predict_residual(delta, baseline)

    def sample(self, graph: HeteroGraph, drug_idx, sample_seed=0):
        drug_idx = np.asarray(drug_idx, dtype=np.int64)
        n_drugs = graph.num_nodes("drug")
        if drug_idx.size and (drug_idx.min() < 0 or drug_idx.max() >= n_drugs):
            raise MissingSeedNode("drug index outside the graph")
        seeds, seed_rows = np.unique(drug_idx, return_inverse=True)
        sub = sample_neighbors(graph, seeds, self.config.fanouts, sample_seed, self.config.relation_objects())
        return sub, seed_rows

    def predict_batch(self, graph, drug_idx, baseline, rng=None, sample_seed=0, record=None):
        sub, seed_rows = self.sample(graph, drug_idx, sample_seed)
        return self.forward(graph, sub, seed_rows, Tensor(np.asarray(baseline, dtype=self.dtype)), rng, record)


def gat_forward(graph, sub, seed_rows, baseline, model: HeteroGATModel, rng=None, record=None) -> Tensor:
    return model.forward(graph, sub, seed_rows, baseline, rng, record)


def build_model(config: ModelConfig) -> PerturbationModel:
    cls = {"mlp": MLPModel, "mlp_targets": MLPTargetsModel, "gat": HeteroGATModel}[config.kind]
    return cls(config)


def zero_delta_(model: PerturbationModel) -> PerturbationModel:
    """Zero the last layer of the delta head so the model predicts the baseline."""
    last = model.head.layers[-1]
    last.weight.data[...] = 0
    last.bias.data[...] = 0
    return model
