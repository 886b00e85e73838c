"""scikit-learn style wrappers around the trainer and the scaffold split.

``X`` is a two-column array of ``(drug_id, cell_id)`` strings and ``y`` the
observed expression rows; the graph and cell baselines are constructor
parameters so the estimator can be cloned and grid-searched.
"""
from __future__ import annotations

from typing import Iterator, Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .chem import SplitAssignment, scaffold_key
from .exceptions import SmilesError
from .graph_store import HeteroGraph
from .sampler import PerturbationData
from .trainer import TrainConfig, model_from_checkpoint, predict, train


def _pairs(X) -> Tuple[list, list]:
    X = np.asarray(X, dtype=object)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"X must have shape (n_samples, 2) of (drug_id, cell_id), got {X.shape}")
    return [str(v) for v in X[:, 0]], [str(v) for v in X[:, 1]]


class DeltaRegressor(RegressorMixin, BaseEstimator):
    """Predicts perturbed expression as cell baseline plus a learned delta."""

    def __init__(self, graph: Optional[HeteroGraph] = None, baseline_ids=None, baselines=None, model: str = "gat",
                 epochs: int = 20, lr: float = 1e-3, batch_size: int = 512, fanouts=(20, 10),
                 embed_dim: int = 256, enc_hidden: int = 1024, delta_hidden: int = 1024, heads: int = 4,
                 dropout: float = 0.1, weight_decay: float = 0.01, seed: int = 0):
        self.graph = graph
        self.baseline_ids = baseline_ids
        self.baselines = baselines
        self.model = model
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.fanouts = fanouts
        self.embed_dim = embed_dim
        self.enc_hidden = enc_hidden
        self.delta_hidden = delta_hidden
        self.heads = heads
        self.dropout = dropout
        self.weight_decay = weight_decay
        self.seed = seed

    def _data(self, X, y=None) -> PerturbationData:
        drugs, cells = _pairs(X)
        base = np.asarray(self.baselines, dtype=np.float32)
        Y = np.zeros((len(drugs), base.shape[1]), dtype=np.float32) if y is None else np.asarray(y, dtype=np.float32)
        return PerturbationData(drugs, cells, Y, list(self.baseline_ids), base)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(model=self.model, lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           fanouts=list(self.fanouts), seed=self.seed, weight_decay=self.weight_decay,
                           dropout=self.dropout, embed_dim=self.embed_dim, enc_hidden=self.enc_hidden,
                           delta_hidden=self.delta_hidden, heads=self.heads, record_time=False)

    def fit(self, X, y):
        if self.graph is None or self.baselines is None or self.baseline_ids is None:
            raise ValueError("graph, baseline_ids and baselines are required")
        data = self._data(X, y)
        drugs = sorted(set(data.drug_ids))
        split = SplitAssignment(drugs, [], self.seed, 1.0, "all")
        self.checkpoint_, self.history_ = train(self._train_config(), data, self.graph, split)
        self.model_ = model_from_checkpoint(self.checkpoint_)
        self.n_outputs_ = data.n_genes
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        data = self._data(X)
        return predict(self.model_, self.graph, data, np.arange(len(data)), self.batch_size)


class ScaffoldSplitter:
    """Cross-validation style splitter that keeps each scaffold group on one side.

    ``split`` yields row indices of ``X`` (rows are ``(drug_id, cell_id)``),
    one fold per seed in ``seed, seed + 1, ...``.
    """

    def __init__(self, smiles, n_splits: int = 1, train_fraction: float = 0.8, seed: int = 0):
        self.smiles = smiles.smiles if isinstance(smiles, HeteroGraph) else dict(smiles)
        self.n_splits = n_splits
        self.train_fraction = train_fraction
        self.seed = seed

    def get_n_splits(self, X=None, y=None, groups=None) -> int:
        return self.n_splits

    def groups(self, X) -> np.ndarray:
        drugs, _ = _pairs(X)
        keys = []
        for d in drugs:
            try:
                keys.append(scaffold_key(self.smiles.get(d, "")))
            except SmilesError:
                keys.append(f"<invalid:{d}>")
        return np.array(keys, dtype=object)

    def split(self, X, y=None, groups=None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        keys = self.groups(X)
        uniq = sorted(set(keys))
        for fold in range(self.n_splits):
            order = np.random.default_rng(self.seed + fold).permutation(len(uniq))
            chosen, n = set(), 0
            for k in order:
                if n >= self.train_fraction * len(keys):
                    break
                chosen.add(uniq[k])
                n += int(np.count_nonzero(keys == uniq[k]))
            mask = np.array([k in chosen for k in keys])
            yield np.flatnonzero(mask), np.flatnonzero(~mask)
