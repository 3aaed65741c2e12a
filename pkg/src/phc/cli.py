"""Command-line entry point.

Commands: train, eval, gradcheck, inspect, gen. Every failure exits nonzero
with a single ``error: ...`` line on stderr. The PHC_LOG environment
variable (debug/info/warning) controls verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import algebra
from .autodiff import grad_check
from .checkpoint import load_tensors
from .config import RunConfig, load_config, save_config
from .data import (
    SYNTHETIC_KINDS,
    collate,
    gen_synthetic,
    load_dataset,
    split_dataset,
    write_jsonl,
)
from .graph import FeatureSpec, PhcModel, count_parameters
from .metrics import metric_name, task_metric
from .training import Trainer, load_model_state, total_loss

logger = logging.getLogger(__name__)

GRADCHECK_TOL = 1e-4


def _setup_logging() -> None:
    level = os.environ.get("PHC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _build_model(cfg: RunConfig, node_spec: FeatureSpec, edge_spec: FeatureSpec,
                 logit_width: int) -> PhcModel:
    return PhcModel(cfg.model, node_spec, edge_spec, logit_width,
                    cfg.data.task, seed=cfg.seed)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _schema_meta(schema) -> dict[str, np.ndarray]:
    return {
        "meta.schema.node_cat": np.array(schema.node.cat_sizes, dtype=np.float64),
        "meta.schema.node_cont": np.array([schema.node.cont_dim], dtype=np.float64),
        "meta.schema.edge_cat": np.array(schema.edge.cat_sizes, dtype=np.float64),
        "meta.schema.edge_cont": np.array([schema.edge.cont_dim], dtype=np.float64),
        "meta.schema.logit_width": np.array([schema.logit_width], dtype=np.float64),
    }


def _specs_from_meta(tensors) -> tuple[FeatureSpec, FeatureSpec, int]:
    node = FeatureSpec(tuple(int(v) for v in tensors["meta.schema.node_cat"]),
                       int(tensors["meta.schema.node_cont"][0]))
    edge = FeatureSpec(tuple(int(v) for v in tensors["meta.schema.edge_cat"]),
                       int(tensors["meta.schema.edge_cont"][0]))
    return node, edge, int(tensors["meta.schema.logit_width"][0])


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    graphs, schema = load_dataset(cfg.data.path, cfg.data.task)
    logger.info("loaded %s: %s", cfg.data.path, schema.summary())
    train_graphs, val_graphs, _ = split_dataset(graphs, cfg.data.splits, cfg.seed)
    if not train_graphs:
        raise ValueError("training split is empty")

    model = _build_model(cfg, schema.node, schema.edge, schema.logit_width)
    logger.info("model has %d trainable parameters", count_parameters(model))

    resume_path = out_dir / "last.ckpt"
    resume = resume_path.exists()
    trainer = Trainer(model, train_graphs, val_graphs, cfg.training, cfg.seed,
                      log_path=out_dir / "log.csv", resume_log=resume)
    trainer.extra_meta = _schema_meta(schema)
    if resume:
        trainer.load_checkpoint(resume_path)
        print(f"resumed from {resume_path} at epoch {trainer.epoch}")

    save_config(cfg, out_dir / "config.txt")
    history = trainer.fit(out_dir=out_dir)
    last = history[-1] if history else {}
    print(f"trained {trainer.epoch} epochs; "
          f"final train_loss={last.get('train_loss', float('nan')):.6g} "
          f"train_metric={last.get('train_metric', float('nan')):.6g} "
          f"val_metric={last.get('val_metric', float('nan')):.6g}")
    print(f"artifacts in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    tensors = load_tensors(args.checkpoint)
    node_spec, edge_spec, logit_width = _specs_from_meta(tensors)
    model = _build_model(cfg, node_spec, edge_spec, logit_width)
    load_model_state(model, tensors)

    graphs, schema = load_dataset(args.data, cfg.data.task)
    if len(schema.node.cat_sizes) != len(node_spec.cat_sizes) or any(
            d > m for d, m in zip(schema.node.cat_sizes, node_spec.cat_sizes)):
        raise ValueError("dataset node features do not fit the checkpoint schema")
    if len(schema.edge.cat_sizes) != len(edge_spec.cat_sizes) or any(
            d > m for d, m in zip(schema.edge.cat_sizes, edge_spec.cat_sizes)):
        raise ValueError("dataset edge features do not fit the checkpoint schema")
    if (schema.node.cont_dim, schema.edge.cont_dim) != \
            (node_spec.cont_dim, edge_spec.cont_dim):
        raise ValueError("dataset continuous features do not fit the checkpoint schema")

    trainer = Trainer(model, [], [], cfg.training, cfg.seed)
    logits, targets = trainer.predict(graphs)
    value = task_metric(cfg.data.task, logits, targets)
    print(f"{metric_name(cfg.data.task)} {value!r}")
    if cfg.data.task == "binary":
        from .metrics import average_precision, masked_mean_metric
        ap = masked_mean_metric(average_precision, logits, targets)
        print(f"average_precision {ap!r}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def bundled_graph_record() -> dict:
    """Fixed 8-node test graph: a ring with two chords."""
    edges = [[i, (i + 1) % 8] for i in range(8)] + [[0, 4], [2, 6]]
    return {
        "nodes": [[i % 3] for i in range(8)],
        "edges": edges,
        "edge_feats": [[j % 2] for j in range(len(edges))],
        "target": 1.0,
    }


def _gradcheck_targets(task: str, logit_width: int, num_rows: int) -> np.ndarray:
    rows = num_rows if task == "node-multiclass" else 1
    if task in ("multiclass", "node-multiclass"):
        return np.arange(rows, dtype=np.float64) % logit_width
    base = np.linspace(0.0, 1.0, logit_width)
    if task in ("binary", "multilabel-binary"):
        base = np.round(base)
    return np.tile(base, (rows, 1))


def run_gradcheck(cfg: RunConfig) -> float:
    from .data import _parse_graph

    quiet_model = dataclasses.replace(cfg.model, mp_dropout=0.0, dn_dropout=0.0)
    cfg = dataclasses.replace(cfg, model=quiet_model)
    graph = _parse_graph(bundled_graph_record(), cfg.data.task, 1)
    batch = collate([graph], cfg.data.task)

    if cfg.data.task in ("multiclass", "node-multiclass"):
        logit_width = 3
    elif cfg.data.task == "multilabel-binary":
        logit_width = 2
    else:
        logit_width = 1
    targets = _gradcheck_targets(cfg.data.task, logit_width, batch.num_nodes)

    model = _build_model(cfg, FeatureSpec((3,), 0), FeatureSpec((2,), 0),
                         logit_width)
    params = [t for _, t in model.trainable_parameters()]

    def loss():
        logits = model.forward(batch, training=True)
        return total_loss(logits, targets, model, cfg.training)

    return grad_check(loss, params, h=1e-6)


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    err = run_gradcheck(cfg)
    ok = err < GRADCHECK_TOL
    print(f"max rel err = {err:.3e} (tol {GRADCHECK_TOL:g}): "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------

def _phm_groups(tensors) -> dict[str, int]:
    """Map layer prefix -> n from checkpoint parameter names."""
    groups: dict[str, int] = {}
    for name in tensors:
        if not name.startswith("param.") or ".weights." not in name:
            continue
        prefix, _, idx = name[len("param."):].rpartition(".weights.")
        groups[prefix] = max(groups.get(prefix, 0), int(idx) + 1)
    return groups


def cmd_inspect(args) -> int:
    tensors = load_tensors(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = _phm_groups(tensors)
    if not groups:
        raise ValueError("checkpoint contains no hypercomplex layers")

    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("layer,item,rows,cols,nonzeros,sparsity\n")
        for prefix in sorted(groups):
            n = groups[prefix]
            weights = [tensors[f"param.{prefix}.weights.{i}"] for i in range(n)]
            contribs = [tensors[f"param.{prefix}.contributions.{i}"]
                        for i in range(n)]
            cs = algebra.ContributionSet(n, contribs)
            u = algebra.assemble(cs, weights)
            flat = prefix.replace(".", "-")
            algebra.matrix_to_csv(u, out_dir / f"U_{flat}.csv")
            fh.write(f"{prefix},U,{u.shape[0]},{u.shape[1]},"
                     f"{int(np.count_nonzero(u))},{algebra.sparsity(u):.17g}\n")
            for i, c in enumerate(contribs):
                algebra.matrix_to_csv(c, out_dir / f"C{i}_{flat}.csv")
                fh.write(f"{prefix},C{i},{c.shape[0]},{c.shape[1]},"
                         f"{int(np.count_nonzero(c))},{algebra.sparsity(c):.17g}\n")
    print(f"inspected {len(groups)} layers; summary in {summary_path}")
    return 0


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    records = gen_synthetic(args.kind, args.size, args.seed)
    write_jsonl(records, args.out)
    print(f"wrote {len(records)} graphs to {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phc", description="Hypercomplex graph network toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check on a bundled graph")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect",
                       help="export assembled weight matrices and sparsity")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", required=True, choices=SYNTHETIC_KINDS)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # single-line machine-parsable failure
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
