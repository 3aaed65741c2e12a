"""Shared builders for graph-level tests and the primitive gradcheck table."""

import numpy as np
import pytest

import phc.autodiff as ad
from phc.autodiff import Tensor
from phc.config import ModelConfig
from phc.graph import GraphBatch


def make_batch(num_nodes, undirected_edges, node_labels=None, edge_labels=None,
               graph_id=None, targets=None, num_graphs=None):
    """Build a GraphBatch from undirected edge pairs (both orientations are
    materialized, matching the dataset loader)."""
    directed = []
    dir_labels = []
    for j, (u, v) in enumerate(undirected_edges):
        directed.append((u, v))
        dir_labels.append(edge_labels[j] if edge_labels is not None else 0)
        if u != v:
            directed.append((v, u))
            dir_labels.append(edge_labels[j] if edge_labels is not None else 0)
    edge_index = (np.array(directed, dtype=np.int64) if directed
                  else np.zeros((0, 2), dtype=np.int64))
    if graph_id is None:
        graph_id = np.zeros(num_nodes, dtype=np.int64)
    else:
        graph_id = np.asarray(graph_id, dtype=np.int64)
    if num_graphs is None:
        num_graphs = int(graph_id.max()) + 1 if num_nodes else 1
    if node_labels is None:
        node_labels = [0] * num_nodes
    batch = GraphBatch(
        num_nodes=num_nodes,
        num_edges=len(edge_index),
        num_graphs=num_graphs,
        edge_index=edge_index,
        graph_id=graph_id,
        node_cat=[np.asarray(node_labels, dtype=np.int64)],
        edge_cat=[np.asarray(dir_labels, dtype=np.int64)] if directed else [],
        targets=np.asarray(targets, dtype=np.float64) if targets is not None else None,
    )
    batch.validate()
    return batch


def tiny_model_config(**overrides):
    base = dict(n=2, mp_layers=2, width=8, mp_mlp=True, aggregator="sum",
                skip="previous", mp_dropout=0.0, dn_dropout=0.0,
                batchnorm=True, downstream=(8, 8))
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def smooth_input(rng, shape, low=0.2, high=1.5):
    """Random values bounded away from relu/abs kinks."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


PRIMITIVE_NAMES = (
    "add", "sub", "mul", "div", "neg", "power", "abs", "exp", "log",
    "sqrt", "relu", "sigmoid", "softplus", "matmul", "transpose", "kron",
    "reshape", "concat", "sum", "mean", "gather", "segment_sum",
    "segment_mean", "segment_min", "segment_max",
)


def primitive_gradcheck_case(name):
    """Scalar-valued composition exercising one primitive, plus the tensors
    whose gradients should be finite-difference checked."""
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    a = Tensor(smooth_input(rng, (3, 4)), requires_grad=True)
    b = Tensor(smooth_input(rng, (3, 4)), requires_grad=True)
    small = Tensor(smooth_input(rng, (2, 2)), requires_grad=True)
    tall = Tensor(smooth_input(rng, (4, 2)), requires_grad=True)
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(4, 4)) * 0.2
    seg = np.array([0, 0, 2])

    cases = {
        "add": (lambda: ((a + b) * w[:3, :]).sum(), [a, b]),
        "sub": (lambda: ((a - b) * w[:3, :]).sum(), [a, b]),
        "mul": (lambda: (a * b).sum(), [a, b]),
        "div": (lambda: (a / pos).sum(), [a, pos]),
        "neg": (lambda: ((-a) * w[:3, :]).sum(), [a]),
        "power": (lambda: ad.power(pos, 1.7).sum(), [pos]),
        "abs": (lambda: ad.absolute(a).sum(), [a]),
        "exp": (lambda: ad.exp(a).sum(), [a]),
        "log": (lambda: ad.log(pos).sum(), [pos]),
        "sqrt": (lambda: ad.sqrt(pos).sum(), [pos]),
        "relu": (lambda: ad.relu(a).sum(), [a]),
        "sigmoid": (lambda: ad.sigmoid(a).sum(), [a]),
        "softplus": (lambda: ad.softplus(a).sum(), [a]),
        "matmul": (lambda: ad.matmul(a, tall).sum(), [a, tall]),
        "transpose": (lambda: (ad.transpose(a) * ad.transpose(b)).sum(), [a, b]),
        "kron": (lambda: (ad.kron(small, b) * 0.5).sum(), [small, b]),
        "reshape": (lambda: (ad.reshape(a, (4, 3)) * w[:, :3]).sum(), [a]),
        "concat": (lambda: (ad.concat([a, b], axis=0) * 0.7).sum(), [a, b]),
        "sum": (lambda: (a.sum(axis=0) * w[0, :]).sum(), [a]),
        "mean": (lambda: (a.mean(axis=1) * w[:3, 0]).sum(), [a]),
        "gather": (lambda: (ad.gather_rows(a, np.array([0, 2, 2, 1])) * w).sum(), [a]),
        "segment_sum": (lambda: (ad.segment_sum(a, seg, 3) * b).sum(), [a]),
        "segment_mean": (lambda: (ad.segment_mean(a, seg, 3) * b).sum(), [a]),
        "segment_min": (lambda: (ad.segment_min(a, seg, 3) * b).sum(), [a]),
        "segment_max": (lambda: (ad.segment_max(a, seg, 3) * b).sum(), [a]),
    }
    return cases[name]
