"""Correlation metrics and the paired bootstrap test."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Sequence, Tuple

import numpy as np

from .exceptions import KTooLarge, LengthMismatch


def pearson(x, y) -> float:
    """Product-moment correlation in float64; 0.0 if either side has zero variance."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"pearson: {x.size} vs {y.size}")
    if x.size < 2:
        raise LengthMismatch("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = np.dot(dx, dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def top_k_perturbed(obs, baseline, k: int = 50) -> np.ndarray:
    """Indices of the k largest |obs - baseline|, ties resolved toward lower index."""
    mag = np.abs(np.asarray(obs, dtype=np.float64) - np.asarray(baseline, dtype=np.float64))
    if k > mag.size:
        raise KTooLarge(f"k={k} exceeds {mag.size} genes")
    return np.sort(np.argsort(-mag, kind="stable")[:k])


def deg_correlation(pred, obs, baseline, k: int = 50) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    obs = np.asarray(obs, dtype=np.float64).ravel()
    baseline = np.asarray(baseline, dtype=np.float64).ravel()
    if not (pred.shape == obs.shape == baseline.shape):
        raise LengthMismatch(f"deg_correlation: {pred.shape}, {obs.shape}, {baseline.shape}")
    idx = top_k_perturbed(obs, baseline, k)
    return pearson(pred[idx], obs[idx])


@dataclass
class BootstrapResult:
    mean_diff: float
    ci95: Tuple[float, float]
    p_one_sided: float
    iters: int
    seed: int

    def to_json(self, model_a: str = "a", model_b: str = "b") -> dict:
        return {"model_a": model_a, "model_b": model_b, "mean_diff": self.mean_diff,
                "ci95": list(self.ci95), "p": self.p_one_sided, "iters": self.iters, "seed": self.seed}


def paired_bootstrap(metric_a, metric_b, iters: int = 1000, seed: int = 0) -> BootstrapResult:
    """Resample sample indices with replacement; one-sided test of mean(a) > mean(b)."""
    a = np.asarray(metric_a, dtype=np.float64).ravel()
    b = np.asarray(metric_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"paired_bootstrap: {a.size} vs {b.size}")
    if a.size < 2:
        raise LengthMismatch("paired_bootstrap needs at least two samples")
    d = a - b
    rng = np.random.default_rng(seed)
    diffs = np.empty(iters, dtype=np.float64)
    for i in range(iters):
        idx = rng.integers(0, d.size, size=d.size)
        diffs[i] = d[idx].mean()
    lo, hi = np.percentile(diffs, [2.5, 97.5])
    p = (1 + int(np.count_nonzero(diffs <= 0))) / (iters + 1)
    return BootstrapResult(float(d.mean()), (float(lo), float(hi)), p, iters, seed)


@dataclass
class SampleMetrics:
    row: int
    drug_id: str
    cell_id: str
    pearson: float
    deg: float


def per_sample_metrics(pred: np.ndarray, obs: np.ndarray, baseline: np.ndarray, k: int = 50):
    """Row-wise (global Pearson, DEG correlation) for [S, G] arrays."""
    pear = np.array([pearson(p, o) for p, o in zip(pred, obs)])
    deg = np.array([deg_correlation(p, o, b, k) for p, o, b in zip(pred, obs, baseline)])
    return pear, deg


def write_metric_table(path, rows: Sequence[SampleMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "drug_id", "cell_id", "pearson", "deg"])
        for r in rows:
            w.writerow([r.row, r.drug_id, r.cell_id, repr(float(r.pearson)), repr(float(r.deg))])


def read_metric_table(path) -> list:
    with open(path, newline="") as fh:
        return [SampleMetrics(int(r["row"]), r["drug_id"], r["cell_id"], float(r["pearson"]), float(r["deg"]))
                for r in csv.DictReader(fh)]


def metric_column(rows: Sequence[SampleMetrics], name: str = "deg") -> np.ndarray:
    return np.array([getattr(r, name) for r in rows], dtype=np.float64)


def summarize(rows: Sequence[SampleMetrics]) -> dict:
    pear, deg = metric_column(rows, "pearson"), metric_column(rows, "deg")
    return {"n": len(rows), "pearson_mean": float(pear.mean()) if len(rows) else 0.0,
            "deg_mean": float(deg.mean()) if len(rows) else 0.0}


def row_dict(r: SampleMetrics) -> dict:
    return asdict(r)
