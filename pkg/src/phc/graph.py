"""Graph data model and the message-passing network.

Edges are directed; undirected graphs carry both orientations in the edge
list. Messages flow from the source column to the destination column, so a
node aggregates over its incoming edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import (
    ComponentBatchNorm,
    PhmLinear,
    RealTransform,
    from_components,
    hc_dropout,
    to_components,
)
from .rng import derive_rng

AGGREGATORS = ("sum", "mean", "min", "max", "softmax")
SKIP_MODES = ("initial", "previous")
GRAPH_TASKS = ("binary", "multilabel-binary", "multiclass", "regression-mae")
NODE_TASKS = ("node-multiclass",)
TASKS = GRAPH_TASKS + NODE_TASKS


@dataclass(frozen=True)
class FeatureSpec:
    """Shape of raw node or edge features: categorical vocabularies plus an
    optional continuous block."""

    cat_sizes: tuple[int, ...] = ()
    cont_dim: int = 0

    @property
    def empty(self) -> bool:
        return not self.cat_sizes and self.cont_dim == 0


@dataclass
class GraphBatch:
    """One or more graphs packed into flat arrays.

    ``edge_index`` holds directed (src, dst) rows and must contain both
    orientations of every undirected edge. ``graph_id`` maps each node to
    its graph. Graph-level targets have one row per graph; node-level
    targets have one entry per node.
    """

    num_nodes: int
    num_edges: int
    num_graphs: int
    edge_index: np.ndarray
    graph_id: np.ndarray
    node_cat: list[np.ndarray] = field(default_factory=list)
    node_cont: np.ndarray | None = None
    edge_cat: list[np.ndarray] = field(default_factory=list)
    edge_cont: np.ndarray | None = None
    targets: np.ndarray | None = None

    def validate(self) -> None:
        ei = self.edge_index
        if ei.shape != (self.num_edges, 2):
            raise ValueError(f"edge_index shape {ei.shape} != ({self.num_edges}, 2)")
        if self.num_edges and (ei.min() < 0 or ei.max() >= self.num_nodes):
            raise ValueError("edge endpoint out of range")
        if self.graph_id.shape != (self.num_nodes,):
            raise ValueError("graph_id must have one entry per node")
        if self.num_nodes and (self.graph_id.min() < 0
                               or self.graph_id.max() >= self.num_graphs):
            raise ValueError("graph_id out of range")
        fwd = {(int(u), int(v)) for u, v in ei}
        if any((v, u) not in fwd for u, v in fwd):
            raise ValueError("edge list is missing reverse orientations")


class FeatureEncoder:
    """Embeds raw features to width k: lookup tables for categorical fields
    (summed across fields) plus a dense affine map for continuous blocks."""

    def __init__(self, spec: FeatureSpec, width: int, *, seed: int = 0,
                 key: str = "node"):
        self.spec = spec
        self.width = width
        self.tables = []
        for i, vocab in enumerate(spec.cat_sizes):
            rng = derive_rng(seed, "encoder", key, "table", i)
            limit = np.sqrt(3.0 / width)
            self.tables.append(Tensor(rng.uniform(-limit, limit, (vocab, width)),
                                      requires_grad=True))
        if spec.cont_dim > 0:
            rng = derive_rng(seed, "encoder", key, "dense")
            limit = np.sqrt(6.0 / (spec.cont_dim + width))
            self.dense_w = Tensor(rng.uniform(-limit, limit, (spec.cont_dim, width)),
                                  requires_grad=True)
            self.dense_b = Tensor(np.zeros(width), requires_grad=True)
        else:
            self.dense_w = None
            self.dense_b = None

    def forward(self, cat: list[np.ndarray], cont: np.ndarray | None,
                num_rows: int) -> Tensor:
        out = None
        for table, idx in zip(self.tables, cat):
            emb = ad.gather_rows(table, idx)
            out = emb if out is None else out + emb
        if self.dense_w is not None:
            proj = ad.matmul(Tensor(cont), self.dense_w) + self.dense_b
            out = proj if out is None else out + proj
        if out is None:
            out = Tensor(np.zeros((num_rows, self.width)))
        return out

    def named_tensors(self, prefix: str = ""):
        for i, t in enumerate(self.tables):
            yield f"{prefix}table.{i}", t
        if self.dense_w is not None:
            yield f"{prefix}dense_w", self.dense_w
            yield f"{prefix}dense_b", self.dense_b


def aggregate(h: Tensor, e: Tensor | None, edge_index: np.ndarray, kind: str,
              num_nodes: int, tau: Tensor | None = None) -> Tensor:
    """Reduce per-edge values z = h[src] + e into per-node messages.

    The softmax kind weighs each incoming edge by a channelwise softmax of
    tau * z over the destination's in-neighborhood; tau = 0 recovers the
    mean and large tau approaches the max. Nodes without incoming edges
    receive a zero message for every kind.
    """
    if kind not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {kind!r}")
    src = edge_index[:, 0]
    dst = edge_index[:, 1]
    z = ad.gather_rows(h, src)
    if e is not None:
        z = z + e
    if kind == "sum":
        return ad.segment_sum(z, dst, num_nodes)
    if kind == "mean":
        return ad.segment_mean(z, dst, num_nodes)
    if kind == "min":
        return ad.segment_min(z, dst, num_nodes)
    if kind == "max":
        return ad.segment_max(z, dst, num_nodes)
    if tau is None:
        raise ValueError("softmax aggregation needs a temperature")
    logits = tau * z
    # Constant per-destination shift; softmax is invariant to it, so
    # detaching keeps gradients exact while preventing overflow.
    width = z.shape[1] if z.ndim == 2 else 1
    shift = np.full((num_nodes, width), -np.inf)
    if len(dst):
        np.maximum.at(shift, dst, logits.data)
    shift[~np.isfinite(shift).all(axis=1)] = 0.0
    expz = ad.exp(logits - Tensor(shift[dst]))
    denom = ad.segment_sum(expz, dst, num_nodes)
    alpha = expz / ad.gather_rows(denom, dst)
    return ad.segment_sum(alpha * z, dst, num_nodes)


class MessagePassingLayer:
    """One round of aggregate-and-update with a hypercomplex MLP.

    The update MLP applies 1 or 2 PhmLinear blocks, each followed by
    component batch normalization (optional), relu, and dropout.
    """

    def __init__(self, n: int, width: int, *, mlp_layers: int = 2,
                 aggregator: str = "sum", dropout: float = 0.0,
                 dropout_mode: str = "component", batchnorm: bool = True,
                 weight_scheme: str = "phc-normal",
                 contribution_scheme: str = "auto",
                 trainable_contributions: bool = True,
                 seed: int = 0, phm_index_base: int = 0):
        self.n = n
        self.width = width
        self.aggregator = aggregator
        self.dropout = dropout
        self.dropout_mode = dropout_mode
        self.phms = []
        self.bns = []
        for j in range(mlp_layers):
            self.phms.append(PhmLinear(
                n, width, width, weight_scheme=weight_scheme,
                contribution_scheme=contribution_scheme,
                trainable_contributions=trainable_contributions,
                seed=seed, layer_index=phm_index_base + j))
            self.bns.append(ComponentBatchNorm(n, width // n) if batchnorm else None)
        self.tau = Tensor(np.ones(1), requires_grad=True) \
            if aggregator == "softmax" else None

    def forward(self, h_prev: Tensor, e_emb: Tensor | None,
                edge_index: np.ndarray, num_nodes: int, *,
                training: bool, rng=None) -> Tensor:
        msg = aggregate(h_prev, e_emb, edge_index, self.aggregator,
                        num_nodes, self.tau)
        x = h_prev + msg
        for phm, bn in zip(self.phms, self.bns):
            x = phm.forward(x)
            x3 = to_components(x, self.n)
            if bn is not None:
                x3 = bn.forward(x3, training)
            x3 = ad.relu(x3)
            x3 = hc_dropout(x3, self.dropout, self.dropout_mode, rng, training)
            x = from_components(x3)
        return x

    def named_tensors(self, prefix: str = ""):
        for j, phm in enumerate(self.phms):
            yield from phm.named_tensors(f"{prefix}phm.{j}.")
        for j, bn in enumerate(self.bns):
            if bn is not None:
                yield from bn.named_tensors(f"{prefix}bn.{j}.")
        if self.tau is not None:
            yield f"{prefix}tau", self.tau

    def named_buffers(self, prefix: str = ""):
        for j, bn in enumerate(self.bns):
            if bn is not None:
                yield from bn.named_buffers(f"{prefix}bn.{j}.")


def skip_connect(h_anchor: Tensor, h_tilde: Tensor, mode: str = "previous") -> Tensor:
    if mode not in SKIP_MODES:
        raise ValueError(f"unknown skip mode {mode!r}")
    if h_anchor.shape != h_tilde.shape:
        raise ValueError(f"skip shapes differ: {h_anchor.shape} vs {h_tilde.shape}")
    return h_anchor + h_tilde


class PhcModel:
    """Encoder, L message-passing layers with skip connections, gated
    pooling, and a 2-layer hypercomplex head producing task logits.

    Node-level tasks skip pooling and the head MLP and map the final node
    embeddings straight to logits.
    """

    def __init__(self, model_cfg, node_spec: FeatureSpec, edge_spec: FeatureSpec,
                 logit_width: int, task: str, seed: int = 0):
        cfg = model_cfg
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        for w in (cfg.width, *cfg.downstream):
            if w % cfg.n:
                raise ValueError(f"width {w} not divisible by n={cfg.n}")
        self.cfg = cfg
        self.task = task
        self.logit_width = logit_width
        self.node_level = task in NODE_TASKS
        n, width = cfg.n, cfg.width
        self.n = n
        self.m = width // n

        self.node_encoder = FeatureEncoder(node_spec, width, seed=seed, key="node")
        self.edge_encoders = []
        self.mp_layers = []
        mlp_layers = 2 if cfg.mp_mlp else 1
        trainable_c = not cfg.frozen_contributions
        phm_index = 0
        for l in range(cfg.mp_layers):
            enc = None if edge_spec.empty else FeatureEncoder(
                edge_spec, width, seed=seed, key=f"edge.{l}")
            self.edge_encoders.append(enc)
            self.mp_layers.append(MessagePassingLayer(
                n, width, mlp_layers=mlp_layers, aggregator=cfg.aggregator,
                dropout=cfg.mp_dropout, dropout_mode=cfg.dropout_mode,
                batchnorm=cfg.batchnorm, weight_scheme=cfg.weight_scheme,
                contribution_scheme=cfg.contribution_scheme,
                trainable_contributions=trainable_c,
                seed=seed, phm_index_base=phm_index))
            phm_index += mlp_layers

        if self.node_level:
            self.pool = None
            self.down = []
            self.head = RealTransform(width, logit_width, seed=seed, key="head")
        else:
            self.pool = RealTransform(width, self.m, seed=seed, key="pool")
            w1, w2 = cfg.downstream
            self.down = [
                PhmLinear(n, width, w1, weight_scheme=cfg.weight_scheme,
                          contribution_scheme=cfg.contribution_scheme,
                          trainable_contributions=trainable_c,
                          seed=seed, layer_index=phm_index),
                PhmLinear(n, w1, w2, weight_scheme=cfg.weight_scheme,
                          contribution_scheme=cfg.contribution_scheme,
                          trainable_contributions=trainable_c,
                          seed=seed, layer_index=phm_index + 1),
            ]
            self.head = RealTransform(w2, logit_width, seed=seed, key="head")

    def phm_layers(self) -> list[PhmLinear]:
        out = []
        for layer in self.mp_layers:
            out.extend(layer.phms)
        out.extend(self.down)
        return out

    def encode_nodes(self, batch: GraphBatch) -> Tensor:
        return self.node_encoder.forward(batch.node_cat, batch.node_cont,
                                         batch.num_nodes)

    def node_embeddings(self, batch: GraphBatch, *, training: bool = False,
                        rng=None) -> Tensor:
        h0 = self.encode_nodes(batch)
        h = h0
        for layer, enc in zip(self.mp_layers, self.edge_encoders):
            e_emb = None if enc is None else enc.forward(
                batch.edge_cat, batch.edge_cont, batch.num_edges)
            h_tilde = layer.forward(h, e_emb, batch.edge_index, batch.num_nodes,
                                    training=training, rng=rng)
            anchor = h0 if self.cfg.skip == "initial" else h
            h = skip_connect(anchor, h_tilde, self.cfg.skip)
        return h

    def pool_graphs(self, h_last: Tensor, batch: GraphBatch) -> Tensor:
        gate = ad.sigmoid(self.pool.forward(h_last))
        h3 = to_components(h_last, self.n)
        gated = h3 * ad.reshape(gate, (batch.num_nodes, 1, self.m))
        flat = from_components(gated)
        return ad.segment_sum(flat, batch.graph_id, batch.num_graphs)

    def forward(self, batch: GraphBatch, *, training: bool = False,
                rng=None) -> Tensor:
        h_last = self.node_embeddings(batch, training=training, rng=rng)
        if self.node_level:
            return self.head.forward(h_last)
        hg = self.pool_graphs(h_last, batch)
        x = self.down[0].forward(hg)
        x3 = ad.relu(to_components(x, self.n))
        x3 = hc_dropout(x3, self.cfg.dn_dropout, self.cfg.dropout_mode,
                        rng, training)
        x = from_components(x3)
        x = self.down[1].forward(x)
        return self.head.forward(x)

    def named_tensors(self, prefix: str = ""):
        yield from self.node_encoder.named_tensors(f"{prefix}node_encoder.")
        for l, enc in enumerate(self.edge_encoders):
            if enc is not None:
                yield from enc.named_tensors(f"{prefix}mp.{l}.edge_encoder.")
        for l, layer in enumerate(self.mp_layers):
            yield from layer.named_tensors(f"{prefix}mp.{l}.")
        if self.pool is not None:
            yield from self.pool.named_tensors(f"{prefix}pool.")
        for j, phm in enumerate(self.down):
            yield from phm.named_tensors(f"{prefix}down.{j}.")
        yield from self.head.named_tensors(f"{prefix}head.")

    def named_buffers(self, prefix: str = ""):
        for l, layer in enumerate(self.mp_layers):
            yield from layer.named_buffers(f"{prefix}mp.{l}.")

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, t) for name, t in self.named_tensors() if t.requires_grad]


def count_parameters(model) -> int:
    """Exact number of trainable scalars, zero for an empty container."""
    if model is None:
        return 0
    return sum(t.size for _, t in model.named_tensors() if t.requires_grad)
