"""Training loop with best-DEG checkpoint selection."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .chem import SplitAssignment
from .engine.checkpoint import ModelCheckpoint
from .engine.optim import AdamW
from .engine.tensor import Tape, mse_loss
from .exceptions import NonFiniteLoss
from .graph_store import HeteroGraph
from .metrics import SampleMetrics, deg_correlation, pearson
from .models import ModelConfig, PerturbationModel, build_model
from .sampler import PerturbationData, batch_seed, make_batches

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    model: str = "gat"
    lr: float = 1e-3
    batch_size: int = 512
    epochs: int = 20
    fanouts: List[int] = field(default_factory=lambda: [20, 10])
    seed: int = 0
    split: str = "scaffold"
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    dropout: float = 0.1
    embed_dim: int = 256
    enc_hidden: int = 1024
    delta_hidden: int = 1024
    heads: int = 4
    deg_k: int = 50
    eval_seed: int = 0
    ablation: str = "none"
    record_time: bool = True

    def __post_init__(self):
        if self.lr < 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("lr must be >= 0, batch_size > 0, epochs >= 0")
        self.fanouts = [int(f) for f in self.fanouts]
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def model_config(self, graph: HeteroGraph, n_genes: int) -> ModelConfig:
        return ModelConfig.for_graph(
            graph, n_genes, kind=self.model, embed_dim=self.embed_dim, enc_hidden=self.enc_hidden,
            delta_hidden=self.delta_hidden, heads=self.heads, dropout=self.dropout,
            fanouts=list(self.fanouts), seed=self.seed,
        )


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    test_pearson: float
    test_deg: float
    seconds: float


@dataclass
class TrainHistory:
    rows: List[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def best(self) -> Optional[EpochRecord]:
        best = None
        for r in self.rows:
            if best is None or r.test_deg > best.test_deg:
                best = r
        return best

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "test_pearson", "test_deg", "seconds"])
            for r in self.rows:
                w.writerow([r.epoch, repr(r.train_mse), repr(r.test_pearson), repr(r.test_deg), repr(r.seconds)])

    @classmethod
    def read_csv(cls, path) -> "TrainHistory":
        with open(path, newline="") as fh:
            return cls([EpochRecord(int(r["epoch"]), float(r["train_mse"]), float(r["test_pearson"]),
                                    float(r["test_deg"]), float(r["seconds"])) for r in csv.DictReader(fh)])


def drug_indices(graph: HeteroGraph, drug_ids) -> np.ndarray:
    return np.array([graph.index_of(d)[1] for d in drug_ids], dtype=np.int64)


def predict(model: PerturbationModel, graph: HeteroGraph, data: PerturbationData, rows,
            batch_size: int = 512, eval_seed: int = 0) -> np.ndarray:
    """Eval-mode predictions for the given sample rows, [len(rows), G]."""
    rows = np.asarray(rows, dtype=np.int64)
    was_training = model.training
    model.eval()
    out = np.zeros((len(rows), data.n_genes), dtype=np.float32)
    drugs = drug_indices(graph, [data.drug_ids[r] for r in rows])
    try:
        for k in range(0, len(rows), batch_size):
            chunk = rows[k:k + batch_size]
            pred = model.predict_batch(graph, drugs[k:k + batch_size], data.baseline_rows(chunk),
                                       sample_seed=[int(eval_seed), k])
            out[k:k + len(chunk)] = pred.data
    finally:
        model.train(was_training)
    return out


def evaluate_epoch(model: PerturbationModel, data: PerturbationData, rows, graph: HeteroGraph,
                   deg_k: int = 50, batch_size: int = 512, eval_seed: int = 0) -> List[SampleMetrics]:
    """Per-sample (global Pearson, DEG correlation) rows in eval mode."""
    rows = np.asarray(rows, dtype=np.int64)
    pred = predict(model, graph, data, rows, batch_size, eval_seed)
    table = []
    for k, r in enumerate(rows):
        obs = data.Y[r]
        base = data.baseline_of(data.cell_ids[r])
        table.append(SampleMetrics(int(r), data.drug_ids[r], data.cell_ids[r],
                                   pearson(pred[k], obs), deg_correlation(pred[k], obs, base, deg_k)))
    return table


def split_rows(data: PerturbationData, graph: HeteroGraph, split: SplitAssignment):
    train = [d for d in split.train if graph.has_node(d)]
    test = [d for d in split.test if graph.has_node(d)]
    return data.rows_for_drugs(train), data.rows_for_drugs(test)


def model_from_checkpoint(ckpt: ModelCheckpoint) -> PerturbationModel:
    model = build_model(ModelConfig.from_dict(ckpt.config["model"]))
    model.load_state_dict(ckpt.params)
    return model.eval()


def train(cfg: TrainConfig, data: PerturbationData, graph: HeteroGraph, split: SplitAssignment,
          progress: bool = False) -> Tuple[ModelCheckpoint, TrainHistory]:
    """Train one model; the returned checkpoint holds the epoch with the best mean test DEG correlation.

    Selection uses the test set, ties go to the earliest epoch, and
    ``epochs=0`` returns the initial parameters. Without test rows the last
    epoch is kept.
    """
    mcfg = cfg.model_config(graph, data.n_genes)
    model = build_model(mcfg)
    train_rows, test_rows = split_rows(data, graph, split)
    if len(train_rows) == 0 and cfg.epochs > 0:
        raise ValueError("split leaves no training samples")
    drugs = drug_indices(graph, data.drug_ids)
    opt = AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    history = TrainHistory()
    best_state = model.state_dict()
    best = {"epoch": -1, "test_deg": None, "test_pearson": None}

    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        model.train()
        total, count = 0.0, 0
        for b, idx in enumerate(make_batches(len(train_rows), cfg.batch_size, [cfg.seed, epoch])):
            rows = train_rows[idx]
            rng = batch_seed(cfg.seed, epoch, b)
            sample_seed = [cfg.seed, epoch, b, 1]
            with Tape() as tape:
                pred = model.predict_batch(graph, drugs[rows], data.baseline_rows(rows), rng=rng,
                                           sample_seed=sample_seed)
                loss = mse_loss(pred, data.Y[rows])
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(f"epoch {epoch} batch {b}: loss {value} (rows {rows[:5].tolist()}...)")
            model.zero_grad()
            tape.backward(loss)
            opt.step()
            total += value * len(rows)
            count += len(rows)
        table = evaluate_epoch(model, data, test_rows, graph, cfg.deg_k, cfg.batch_size, cfg.eval_seed)
        pear = float(np.mean([r.pearson for r in table])) if table else 0.0
        deg = float(np.mean([r.deg for r in table])) if table else 0.0
        seconds = time.perf_counter() - start if cfg.record_time else 0.0
        history.rows.append(EpochRecord(epoch, total / max(count, 1), pear, deg, seconds))
        if len(test_rows) == 0:
            # nothing to select on: keep the latest parameters
            best = {"epoch": epoch, "test_deg": None, "test_pearson": None}
            best_state = model.state_dict()
        elif best["test_deg"] is None or deg > best["test_deg"]:
            best = {"epoch": epoch, "test_deg": deg, "test_pearson": pear}
            best_state = model.state_dict()
        if progress:
            log.info("epoch %d  mse %.4f  pearson %.4f  deg %.4f", epoch, total / max(count, 1), pear, deg)

    ckpt = ModelCheckpoint(
        config={"model": mcfg.to_dict(), "train": cfg.to_dict(), "split": split.mode},
        params=best_state,
        best=best,
    )
    return ckpt, history
