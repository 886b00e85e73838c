"""Command-line entry point: ``kgperturb <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ablations import apply_ablation, make_split, run_matrix, write_results
from .attention import attention_summary, khop_reasoning_subgraph, write_aggregate_csv, write_export
from .chem import SplitAssignment, overlapping_scaffolds, scaffold_audit
from .engine.checkpoint import ModelCheckpoint
from .exceptions import KGPerturbError
from .graph_store import load_graph
from .metrics import metric_column, paired_bootstrap, read_metric_table, summarize, write_metric_table
from .models import HeteroGATModel
from .sampler import PerturbationData
from .synthbench import SynthParams, generate
from .trainer import TrainConfig, evaluate_epoch, model_from_checkpoint, split_rows, train

log = logging.getLogger("kgperturb")


def _fanouts(text: str):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError("fan-outs must be positive")
    return vals


def _load_dataset(directory):
    directory = Path(directory)
    return load_graph(directory / "manifest.json"), PerturbationData.load(directory)


def _emit(doc: dict, out) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _train_options(p: argparse.ArgumentParser, batch: int = 512) -> None:
    d = TrainConfig()
    p.add_argument("--seed", type=int, default=0, help="seed for init, batching, dropout and sampling")
    p.add_argument("--epochs", type=int, default=d.epochs, help="training epochs")
    p.add_argument("--lr", type=float, default=d.lr, help="AdamW learning rate")
    p.add_argument("--batch", type=int, default=batch, help="minibatch size")
    p.add_argument("--fanouts", type=_fanouts, default=",".join(map(str, d.fanouts)), help="per-hop neighbour fan-outs")
    p.add_argument("--weight-decay", type=float, default=d.weight_decay, help="decoupled weight decay")
    p.add_argument("--dropout", type=float, default=d.dropout, help="encoder dropout")
    p.add_argument("--embed-dim", type=int, default=d.embed_dim, help="node embedding width")
    p.add_argument("--enc-hidden", type=int, default=d.enc_hidden, help="encoder hidden width")
    p.add_argument("--delta-hidden", type=int, default=d.delta_hidden, help="delta head hidden width")
    p.add_argument("--heads", type=int, default=d.heads, help="attention heads")
    p.add_argument("--deg-k", type=int, default=d.deg_k, help="top-k genes for DEG correlation")
    p.add_argument("--deterministic", action="store_true",
                   help="write 0.0 in the history seconds column so reruns are byte-identical")


def _config(args, model: str, ablation: str = "none", split: str = "scaffold") -> TrainConfig:
    return TrainConfig(model=model, lr=args.lr, batch_size=args.batch, epochs=args.epochs, fanouts=args.fanouts,
                       seed=args.seed, split=split, weight_decay=args.weight_decay, dropout=args.dropout,
                       embed_dim=args.embed_dim, enc_hidden=args.enc_hidden, delta_hidden=args.delta_hidden,
                       heads=args.heads, deg_k=args.deg_k, ablation=ablation, record_time=not args.deterministic)


def cmd_synth(args) -> int:
    p = SynthParams(n_drugs=args.n_drugs, n_proteins=args.n_proteins, n_pathways=args.n_pathways,
                    n_cells=args.n_cells, n_genes=args.n_genes, scaffold_families=args.families,
                    noise_sd=args.noise_sd, seed=args.seed)
    ds = generate(p, args.out)
    _emit({"out": str(args.out), "manifest": str(ds.manifest), "drugs": p.n_drugs,
           "samples": len(ds.data), "genes": p.n_genes}, None)
    return 0


def cmd_split(args) -> int:
    g, _ = _load_dataset(args.data)
    split = make_split(g, args.mode, args.frac, args.seed)
    out = Path(args.out) if args.out else Path(args.data) / "split.json"
    split.save(out)
    audit = scaffold_audit(split, {d: g.smiles.get(d, "") for d in split.train + split.test})
    doc = {"split": str(out), "mode": split.mode, "seed": split.seed, "n_train": len(split.train),
           "n_test": len(split.test), "achieved_train_fraction": split.achieved_train_fraction,
           "excluded": len(split.excluded), "scaffolds": len(audit),
           "overlapping_scaffolds": overlapping_scaffolds(audit)}
    _emit(doc, out.with_name(out.stem + "_audit.json"))
    return 0


def cmd_train(args) -> int:
    g, data = _load_dataset(args.data)
    split = SplitAssignment.load(args.split)
    cfg = _config(args, args.model, args.ablation, split.mode)
    graph = apply_ablation(g, args.ablation, args.seed) if args.model == "gat" else g
    ckpt, hist = train(cfg, data, graph, split, progress=args.verbose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(out / "checkpoint.dgck")
    hist.write_csv(out / "history.csv")
    _emit({"checkpoint": str(out / "checkpoint.dgck"), "history": str(out / "history.csv"),
           "epochs": len(hist), "best": ckpt.best}, None)
    return 0


def _checkpoint_graph(ckpt: ModelCheckpoint, g):
    t = ckpt.config.get("train", {})
    if ckpt.config["model"]["kind"] == "gat":
        return apply_ablation(g, t.get("ablation", "none"), t.get("seed", 0))
    return g


def cmd_eval(args) -> int:
    g, data = _load_dataset(args.data)
    ckpt = ModelCheckpoint.load(args.ckpt)
    graph = _checkpoint_graph(ckpt, g)
    split = SplitAssignment.load(args.split)
    _, test_rows = split_rows(data, graph, split)
    model = model_from_checkpoint(ckpt)
    t = ckpt.config.get("train", {})
    batch = args.batch if args.batch is not None else t.get("batch_size", 512)
    seed = args.seed if args.seed is not None else t.get("eval_seed", 0)
    table = evaluate_epoch(model, data, test_rows, graph, args.deg_k, batch, seed)
    out = Path(args.out) if args.out else Path(args.ckpt).with_name("metrics.csv")
    write_metric_table(out, table)
    _emit(dict(summarize(table), metrics=str(out)), out.with_name(out.stem + "_summary.json"))
    return 0


def cmd_bootstrap(args) -> int:
    a, b = read_metric_table(args.a), read_metric_table(args.b)
    if [r.row for r in a] != [r.row for r in b]:
        raise KGPerturbError("metric tables do not list the same samples in the same order")
    res = paired_bootstrap(metric_column(a, args.metric), metric_column(b, args.metric), args.iters, args.seed)
    _emit(dict(res.to_json(str(args.a), str(args.b)), metric=args.metric), args.out)
    return 0


def cmd_ablate(args) -> int:
    if not args.matrix:
        raise KGPerturbError("only the full matrix is supported; pass --matrix")
    g, data = _load_dataset(args.data)
    rows = run_matrix(_config(args, "gat"), g, data, args.frac, args.split_seed, args.iters, args.parallel)
    out = Path(args.out) if args.out else Path(args.data) / "ablation_results.csv"
    write_results(out, rows)
    _emit({"results": str(out), "rows": len(rows)}, None)
    return 0


def cmd_attn(args) -> int:
    g, _ = _load_dataset(args.data)
    ckpt = ModelCheckpoint.load(args.ckpt)
    model = model_from_checkpoint(ckpt)
    if not isinstance(model, HeteroGATModel):
        raise KGPerturbError("attention traces need a gat checkpoint")
    graph = _checkpoint_graph(ckpt, g)
    if args.drug:
        doc = khop_reasoning_subgraph(model, graph, args.drug, args.k, args.top_m, args.seed)
        out = Path(args.out) if args.out else Path(args.ckpt).with_name(f"reasoning_{args.drug}_k{args.k}.json")
        write_export(out, doc)
        _emit({"export": str(out), "nodes": len(doc["nodes"]), "edges": len(doc["edges"]),
               "source_type_distribution": doc["source_type_distribution"]}, None)
    else:
        dists = attention_summary(model, graph, sample_seed=args.seed)
        out = Path(args.out) if args.out else Path(args.ckpt).with_name("attention_by_source_type.csv")
        write_aggregate_csv(out, dists)
        _emit({"aggregate": str(out), **dists}, None)
    return 0


def _version() -> str:
    return f"kgperturb {__version__} (python {platform.python_version()}, numpy {np.__version__})"


class _DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Appends defaults unless the help text already describes one or there is none to show."""

    def _get_help_string(self, action):
        if action.default is None or "(default:" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _DefaultsFormatter
    parser = argparse.ArgumentParser(prog="kgperturb", description=__doc__)
    parser.add_argument("--version", action="version", version=_version())
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate the synthetic benchmark", formatter_class=fmt)
    d = SynthParams()
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=d.seed, help="generator seed")
    p.add_argument("--n-drugs", type=int, default=d.n_drugs, help="number of drugs")
    p.add_argument("--n-proteins", type=int, default=d.n_proteins, help="number of proteins")
    p.add_argument("--n-pathways", type=int, default=d.n_pathways, help="number of pathways")
    p.add_argument("--n-cells", type=int, default=d.n_cells, help="number of cell lines")
    p.add_argument("--n-genes", type=int, default=d.n_genes, help="genes per expression profile")
    p.add_argument("--families", type=int, default=d.scaffold_families, help="scaffold families")
    p.add_argument("--noise-sd", type=float, default=d.noise_sd, help="observation noise")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="scaffold or random drug split with leakage audit", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--mode", choices=("scaffold", "random"), default="scaffold", help="split kind")
    p.add_argument("--frac", type=float, default=0.8, help="target train fraction")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--out", default=None, help="split JSON path (default: DATA/split.json)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one model", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", required=True, help="split JSON")
    p.add_argument("--model", choices=("mlp", "mlp_targets", "gat"), default="gat", help="model kind")
    p.add_argument("--ablation", choices=("none", "edge_shuffle", "edge_rewire", "node_randomize"), default="none",
                   help="graph ablation applied before training (gat only)")
    p.add_argument("--out", default="run", help="output directory for checkpoint.dgck and history.csv")
    _train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-sample test metrics for a checkpoint", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", required=True, help="split JSON")
    p.add_argument("--out", default=None, help="metric CSV (default: metrics.csv next to the checkpoint)")
    p.add_argument("--seed", type=int, default=None, help="neighbour-sampling seed (default: the checkpoint's)")
    p.add_argument("--batch", type=int, default=None, help="evaluation batch size (default: the checkpoint's)")
    p.add_argument("--deg-k", type=int, default=50, help="top-k genes for DEG correlation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bootstrap", help="paired bootstrap of two metric tables", formatter_class=fmt)
    p.add_argument("--a", required=True, help="metric CSV of model A")
    p.add_argument("--b", required=True, help="metric CSV of model B")
    p.add_argument("--iters", type=int, default=1000, help="bootstrap resamples")
    p.add_argument("--seed", type=int, default=0, help="resampling seed")
    p.add_argument("--metric", choices=("deg", "pearson"), default="deg", help="metric column")
    p.add_argument("--out", default=None, help="optional JSON output path")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("ablate", help="model x split x ablation matrix", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--matrix", action="store_true", help="run all ten conditions")
    p.add_argument("--frac", type=float, default=0.8, help="train fraction for both splits")
    p.add_argument("--split-seed", type=int, default=None, help="split seed (default: --seed)")
    p.add_argument("--iters", type=int, default=1000, help="bootstrap resamples")
    p.add_argument("--parallel", action="store_true", help="run conditions in worker processes")
    p.add_argument("--out", default=None, help="results CSV (default: DATA/ablation_results.csv)")
    _train_options(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("attn", help="attention aggregate or per-drug reasoning subgraph", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="gat checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--drug", default=None, help="drug id for a reasoning-subgraph export")
    p.add_argument("--k", type=int, choices=(1, 2), default=2, help="hops")
    p.add_argument("--top-m", type=int, default=5, help="in-edges kept per expanded node")
    p.add_argument("--seed", type=int, default=0, help="neighbour-sampling seed")
    p.add_argument("--out", default=None, help="output path")
    p.set_defaults(func=cmd_attn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (KGPerturbError, OSError, ValueError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
