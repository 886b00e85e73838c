"""Synthetic dataset with a planted, graph-mediated drug mechanism.

Each protein carries a gene signature and belongs to one pathway; a drug's
delta is the sum over its targets of (signature * cell mask + pathway
modifier). Drug features encode the scaffold family only, so the target
proteins, and with them the delta, are reachable through the graph edges
but not from the drug features of an unseen scaffold family.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .exceptions import ParamDomain, UnknownId
from .graph_store import FeatureMatrix, build_graph, save_graph
from .sampler import PerturbationData

# 30 ring systems; the first atom of each accepts a substituent.
RING_TEMPLATES = [
    "c1ccccc1",                 # benzene
    "c1ccncc1",                 # pyridine
    "c1cncnc1",                 # pyrimidine
    "c1cnccn1",                 # pyrazine
    "c1cc[nH]c1",               # pyrrole
    "c1ccoc1",                  # furan
    "c1ccsc1",                  # thiophene
    "c1c[nH]cn1",               # imidazole
    "c1cocn1",                  # oxazole
    "c1cscn1",                  # thiazole
    "c1ccc2ccccc2c1",           # naphthalene
    "c1ccc2[nH]ccc2c1",         # indole
    "c1ccc2ncccc2c1",           # quinoline
    "c1ccc2cnccc2c1",           # isoquinoline
    "c1ccc2occc2c1",            # benzofuran
    "c1ccc2sccc2c1",            # benzothiophene
    "c1ccc2[nH]cnc2c1",         # benzimidazole
    "c1ccc2ocnc2c1",            # benzoxazole
    "C1CCCCC1",                 # cyclohexane
    "C1CCCC1",                  # cyclopentane
    "C1CC1",                    # cyclopropane
    "C1CCNCC1",                 # piperidine
    "C1CNCCN1",                 # piperazine
    "C1COCCN1",                 # morpholine
    "C1CCOC1",                  # tetrahydrofuran
    "C1CCNC1",                  # pyrrolidine
    "c1ccc(cc1)-c1ccccc1",      # biphenyl
    "c1ccc(cc1)Cc1ccccc1",      # diphenylmethane
    "c1ccc2cc3ccccc3cc2c1",     # anthracene
    "c1ncc2[nH]cnc2n1",         # purine
]

# acyclic substituents written so that their last atom bonds to the ring
SUBSTITUENTS = [h + "C" * n for n in range(1, 6) for h in ("", "O", "N", "F", "Cl", "S")]


@dataclass
class SynthParams:
    n_drugs: int = 300
    n_proteins: int = 100
    n_pathways: int = 20
    n_cells: int = 3
    n_genes: int = 64
    targets_min: int = 1
    targets_max: int = 3
    scaffold_families: int = 30
    noise_sd: float = 0.1
    seed: int = 0
    feature_dim: int = 32
    modalities: int = 2
    baseline_sd: float = 1.0
    modifier_sd: float = 0.5
    feature_noise: float = 0.3
    off_target_prob: float = 0.2
    similar_prob: float = 0.3
    ppi_per_protein: float = 2.0
    signature_rank: int = 8

    def validate(self):
        positive = ("n_drugs", "n_proteins", "n_pathways", "n_cells", "n_genes", "targets_min",
                    "targets_max", "scaffold_families", "feature_dim", "modalities", "signature_rank")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ParamDomain(f"{name} must be positive")
        if self.noise_sd < 0 or self.baseline_sd < 0 or self.feature_noise < 0:
            raise ParamDomain("standard deviations must be non-negative")
        if self.scaffold_families > self.n_drugs:
            raise ParamDomain("scaffold_families exceeds n_drugs")
        if self.scaffold_families > len(RING_TEMPLATES):
            raise ParamDomain(f"at most {len(RING_TEMPLATES)} scaffold families are available")
        if self.targets_min > self.targets_max or self.targets_max > self.n_proteins:
            raise ParamDomain("invalid target count range")
        if not 0 <= self.off_target_prob <= 1 or not 0 <= self.similar_prob <= 1:
            raise ParamDomain("probabilities must lie in [0, 1]")


@dataclass
class SynthTruth:
    """Generator state; used for oracle evaluation only, never by the models."""

    params: dict
    drug_ids: List[str]
    cell_ids: List[str]
    protein_ids: List[str]
    signatures: np.ndarray  # [P, G]
    modifiers: np.ndarray  # [Q, G]
    masks: np.ndarray  # [C, G]
    baselines: np.ndarray  # [C, G]
    pathway_of: np.ndarray  # [P]
    targets: List[List[int]]
    families: List[int]
    family_keys: List[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("signatures", "modifiers", "masks", "baselines"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.pathway_of = np.asarray(self.pathway_of, dtype=np.int64)
        self._drug = {d: i for i, d in enumerate(self.drug_ids)}
        self._cell = {c: i for i, c in enumerate(self.cell_ids)}

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items()}
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "SynthTruth":
        return cls(**json.loads(Path(path).read_text()))

    def drug_index(self, drug_id: str) -> int:
        try:
            return self._drug[drug_id]
        except KeyError:
            raise UnknownId(drug_id) from None

    def cell_index(self, cell_id: str) -> int:
        try:
            return self._cell[cell_id]
        except KeyError:
            raise UnknownId(cell_id) from None


def oracle_delta(drug_id: str, cell_id: str, truth: SynthTruth) -> np.ndarray:
    """Noise-free planted delta for a (drug, cell) pair."""
    d = truth.drug_index(drug_id)
    c = truth.cell_index(cell_id)
    delta = np.zeros(truth.signatures.shape[1])
    for p in truth.targets[d]:
        delta += truth.signatures[p] * truth.masks[c] + truth.modifiers[truth.pathway_of[p]]
    return delta


@dataclass
class SynthDataset:
    graph: object
    data: PerturbationData
    truth: SynthTruth
    manifest: Path = None


def _ids(prefix: str, n: int) -> List[str]:
    width = max(3, len(str(n - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def generate(p: SynthParams, out_dir=None) -> SynthDataset:
    """Generate the benchmark; writes graph/sample files and ``truth.json`` when ``out_dir`` is given."""
    p.validate()
    rng = np.random.default_rng(p.seed)
    G, P, Q, C, F = p.n_genes, p.n_proteins, p.n_pathways, p.n_cells, p.scaffold_families
    width = p.feature_dim * p.modalities

    # signatures and modifiers mix a small set of shared gene programs
    r = p.signature_rank
    programs = rng.normal(0.0, 1.0 / np.sqrt(r), size=(r, G))
    sig_codes = rng.normal(0.0, 1.0, size=(P, r))
    mod_codes = rng.normal(0.0, p.modifier_sd, size=(Q, r))
    signatures = sig_codes @ programs
    modifiers = mod_codes @ programs
    masks = rng.uniform(0.5, 1.5, size=(C, G))
    baselines = rng.normal(0.0, p.baseline_sd, size=(C, G))
    pathway_of = np.concatenate([np.arange(min(Q, P)), rng.integers(0, Q, size=max(P - Q, 0))])
    rng.shuffle(pathway_of)

    families = np.concatenate([np.arange(F), rng.integers(0, F, size=p.n_drugs - F)])
    rng.shuffle(families)
    # families own disjoint target sets when proteins suffice; leftovers serve as off-targets
    counts = rng.integers(p.targets_min, p.targets_max + 1, size=F)
    order = rng.permutation(P)
    disjoint = counts.sum() <= P
    family_targets, used = [], 0
    for k in counts:
        if disjoint:
            family_targets.append(sorted(order[used:used + k].tolist()))
            used += k
        else:
            family_targets.append(sorted(rng.choice(P, size=k, replace=False).tolist()))
    spare = np.sort(order[used:]) if disjoint and used < P else np.arange(P)
    targets = []
    for d in range(p.n_drugs):
        t = list(family_targets[families[d]])
        if rng.random() < p.off_target_prob:
            pool = np.setdiff1d(spare, t)
            if pool.size:
                t[int(rng.integers(len(t)))] = int(rng.choice(pool))
        targets.append(sorted(t))

    family_embed = rng.normal(0.0, 1.0, size=(F, width))
    drug_x = family_embed[families] + rng.normal(0.0, p.feature_noise, size=(p.n_drugs, width))
    proj_sig = rng.normal(0.0, 1.0 / np.sqrt(r), size=(r, width))
    proj_mod = rng.normal(0.0, 1.0 / np.sqrt(r), size=(r, width))
    protein_x = sig_codes @ proj_sig + rng.normal(0.0, 0.05, size=(P, width))
    pathway_x = (mod_codes / max(p.modifier_sd, 1e-12)) @ proj_mod + rng.normal(0.0, 0.05, size=(Q, width))
    cell_x = np.concatenate([baselines, baselines], axis=1)

    drug_ids, prot_ids = _ids("drug_", p.n_drugs), _ids("prot_", P)
    path_ids, cell_ids = _ids("path_", Q), _ids("cell_", C)
    chain_use = np.zeros(F, dtype=np.int64)
    smiles = []
    for d in range(p.n_drugs):
        f = families[d]
        smiles.append(SUBSTITUENTS[chain_use[f] % len(SUBSTITUENTS)] + RING_TEMPLATES[f])
        chain_use[f] += 1

    nodes = [(drug_ids[d], "drug", f"drug {d} (family {families[d]})", smiles[d]) for d in range(p.n_drugs)]
    nodes += [(prot_ids[i], "gene_protein", f"protein {i}", "") for i in range(P)]
    nodes += [(path_ids[i], "pathway", f"pathway {i}", "") for i in range(Q)]
    nodes += [(cell_ids[i], "cell", f"cell line {i}", "") for i in range(C)]

    edges = []
    for d in range(p.n_drugs):
        edges.extend((drug_ids[d], "targets", prot_ids[t]) for t in targets[d])
    edges.extend((prot_ids[i], "in_pathway", path_ids[pathway_of[i]]) for i in range(P))
    n_ppi = int(round(p.ppi_per_protein * P))
    for _ in range(n_ppi):
        a, b = rng.choice(P, size=2, replace=False)
        edges.append((prot_ids[a], "interacts", prot_ids[b]))
    by_family: Dict[int, List[int]] = {}
    for d in range(p.n_drugs):
        by_family.setdefault(int(families[d]), []).append(d)
    for d in range(p.n_drugs):
        mates = [m for m in by_family[int(families[d])] if m != d]
        if mates and rng.random() < p.similar_prob:
            edges.append((drug_ids[d], "similar_to", drug_ids[mates[int(rng.integers(len(mates)))]]))

    m, k = p.modalities, p.feature_dim
    feats = {
        "drug": FeatureMatrix("drug", drug_x, m, k),
        "gene_protein": FeatureMatrix("gene_protein", protein_x, m, k),
        "pathway": FeatureMatrix("pathway", pathway_x, m, k),
        "cell": FeatureMatrix("cell", cell_x, 2, G),
    }
    graph = build_graph(nodes, edges, feats)

    truth = SynthTruth(
        params=asdict(p), drug_ids=drug_ids, cell_ids=cell_ids, protein_ids=prot_ids,
        signatures=signatures, modifiers=modifiers, masks=masks, baselines=baselines,
        pathway_of=pathway_of, targets=targets, families=families.tolist(),
        family_keys=list(RING_TEMPLATES[:F]),
    )
    s_drug, s_cell, ys = [], [], []
    for d in range(p.n_drugs):
        for c in range(C):
            delta = oracle_delta(drug_ids[d], cell_ids[c], truth)
            ys.append(baselines[c] + delta + rng.normal(0.0, p.noise_sd, size=G))
            s_drug.append(drug_ids[d])
            s_cell.append(cell_ids[c])
    data = PerturbationData(s_drug, s_cell, np.array(ys), cell_ids, baselines)

    manifest = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = save_graph(graph, out)
        data.save(out)
        truth.save(out / "truth.json")
    return SynthDataset(graph, data, truth, manifest)
