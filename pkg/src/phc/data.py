"""Dataset ingestion, batching, and synthetic graph generators.

On disk a dataset is JSON Lines, one graph per line:

    {"nodes": [[0], [3], ...],        per-node feature lists
     "edges": [[0, 1], [1, 2]],       undirected pairs
     "edge_feats": [[0], [1]],        optional, parallel to edges
     "target": 2}                     number or list

A feature list of integers is a tuple of categorical fields; a list of
floats is a continuous vector. Undirected edges are expanded to both
orientations when loading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph import FeatureSpec, GraphBatch, NODE_TASKS
from .rng import derive_rng

SYNTHETIC_KINDS = ("ring-regression", "triangle-count", "component-parity")


@dataclass
class Graph:
    num_nodes: int
    edge_index: np.ndarray
    node_cat: list[np.ndarray]
    node_cont: np.ndarray | None
    edge_cat: list[np.ndarray]
    edge_cont: np.ndarray | None
    target: np.ndarray


@dataclass
class DatasetSchema:
    node: FeatureSpec
    edge: FeatureSpec
    target_width: int
    logit_width: int
    num_graphs: int
    task: str

    def summary(self) -> str:
        parts = [
            f"graphs={self.num_graphs}",
            f"task={self.task}",
            f"node_cat={list(self.node.cat_sizes)}",
            f"node_cont={self.node.cont_dim}",
            f"edge_cat={list(self.edge.cat_sizes)}",
            f"edge_cont={self.edge.cont_dim}",
            f"logit_width={self.logit_width}",
        ]
        return " ".join(parts)


def _classify_features(rows, what: str, lineno: int):
    """Split per-row feature lists into categorical columns or a float block."""
    if not rows:
        return [], None, (0, 0)
    width = len(rows[0])
    for r in rows:
        if not isinstance(r, list) or len(r) != width:
            raise ValueError(f"line {lineno}: ragged {what} feature lists")
    if width == 0:
        return [], None, (0, 0)
    is_int = all(isinstance(v, int) and not isinstance(v, bool)
                 for r in rows for v in r)
    if is_int:
        cols = [np.array([r[i] for r in rows], dtype=np.int64)
                for i in range(width)]
        for c in cols:
            if c.min() < 0:
                raise ValueError(f"line {lineno}: negative categorical {what} index")
        return cols, None, (width, 0)
    cont = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(cont)):
        raise ValueError(f"line {lineno}: non-finite continuous {what} feature")
    return [], cont, (0, width)


def _parse_graph(record: dict, task: str, lineno: int) -> Graph:
    if not isinstance(record, dict):
        raise ValueError(f"line {lineno}: expected a JSON object")
    nodes = record.get("nodes")
    if not isinstance(nodes, list) or not nodes:
        raise ValueError(f"line {lineno}: 'nodes' must be a non-empty list")
    num_nodes = len(nodes)
    node_cat, node_cont, _ = _classify_features(nodes, "node", lineno)

    edges = record.get("edges", [])
    if not isinstance(edges, list):
        raise ValueError(f"line {lineno}: 'edges' must be a list")
    directed: list[tuple[int, int]] = []
    dup: list[int] = []
    for j, pair in enumerate(edges):
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(v, int) for v in pair)):
            raise ValueError(f"line {lineno}: edge {j} is not an [u, v] pair")
        u, v = pair
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise ValueError(
                f"line {lineno}: edge {j} endpoint out of range for {num_nodes} nodes")
        directed.append((u, v))
        dup.append(j)
        if u != v:
            directed.append((v, u))
            dup.append(j)
    edge_index = (np.array(directed, dtype=np.int64) if directed
                  else np.zeros((0, 2), dtype=np.int64))

    feats = record.get("edge_feats")
    if feats is not None:
        if not isinstance(feats, list) or len(feats) != len(edges):
            raise ValueError(f"line {lineno}: 'edge_feats' must parallel 'edges'")
        expanded = [feats[j] for j in dup]
        edge_cat, edge_cont, _ = _classify_features(expanded, "edge", lineno)
    else:
        edge_cat, edge_cont = [], None

    target = record.get("target")
    if target is None:
        raise ValueError(f"line {lineno}: missing 'target'")
    tarr = np.atleast_1d(np.array(target, dtype=np.float64))
    if tarr.ndim != 1:
        raise ValueError(f"line {lineno}: 'target' must be a number or flat list")
    if task in NODE_TASKS and len(tarr) != num_nodes:
        raise ValueError(f"line {lineno}: node task needs one target per node")
    return Graph(num_nodes, edge_index, node_cat, node_cont,
                 edge_cat, edge_cont, tarr)


def _feature_spec(graphs: list[Graph], what: str) -> FeatureSpec:
    first = graphs[0]
    cats = first.node_cat if what == "node" else first.edge_cat
    cont = first.node_cont if what == "node" else first.edge_cont
    num_fields = len(cats)
    cont_dim = 0 if cont is None else cont.shape[1]
    sizes = [0] * num_fields
    for g in graphs:
        gc = g.node_cat if what == "node" else g.edge_cat
        gq = g.node_cont if what == "node" else g.edge_cont
        rows = g.num_nodes if what == "node" else len(g.edge_index)
        if rows == 0:
            continue
        if len(gc) != num_fields or (0 if gq is None else gq.shape[1]) != cont_dim:
            raise ValueError(f"inconsistent {what} feature layout across graphs")
        for i, col in enumerate(gc):
            sizes[i] = max(sizes[i], int(col.max()) + 1)
    return FeatureSpec(tuple(sizes), cont_dim)


def build_schema(graphs: list[Graph], task: str) -> DatasetSchema:
    node_spec = _feature_spec(graphs, "node")
    edge_spec = _feature_spec(graphs, "edge")
    widths = {len(g.target) for g in graphs}
    if task not in NODE_TASKS and len(widths) != 1:
        raise ValueError(f"targets have inconsistent widths: {sorted(widths)}")
    target_width = widths.pop() if task not in NODE_TASKS else 1
    if task in ("multiclass",) + NODE_TASKS:
        hi = max(int(v) for g in graphs for v in g.target)
        logit_width = hi + 1
    else:
        logit_width = target_width
    return DatasetSchema(node_spec, edge_spec, target_width, logit_width,
                         len(graphs), task)


def load_dataset(path, task: str) -> tuple[list[Graph], DatasetSchema]:
    graphs: list[Graph] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            graphs.append(_parse_graph(record, task, lineno))
    if not graphs:
        raise ValueError(f"{path}: empty dataset")
    return graphs, build_schema(graphs, task)


def split_dataset(graphs: list[Graph], fractions, seed: int):
    """Deterministic shuffled split into train/validation/test lists."""
    order = derive_rng(seed, "split").permutation(len(graphs))
    n_train = int(round(fractions[0] * len(graphs)))
    n_val = int(round(fractions[1] * len(graphs)))
    n_train = min(n_train, len(graphs))
    n_val = min(n_val, len(graphs) - n_train)
    idx_train = order[:n_train]
    idx_val = order[n_train:n_train + n_val]
    idx_test = order[n_train + n_val:]
    pick = lambda idx: [graphs[i] for i in idx]
    return pick(idx_train), pick(idx_val), pick(idx_test)


def collate(graphs: list[Graph], task: str) -> GraphBatch:
    """Pack graphs into one batch with offset node indices."""
    if not graphs:
        raise ValueError("cannot collate an empty list of graphs")
    num_nodes = sum(g.num_nodes for g in graphs)
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
    edge_blocks = []
    graph_id = np.empty(num_nodes, dtype=np.int64)
    pos = 0
    for gi, g in enumerate(graphs):
        graph_id[pos:pos + g.num_nodes] = gi
        pos += g.num_nodes
        if len(g.edge_index):
            edge_blocks.append(g.edge_index + offsets[gi])
    edge_index = (np.concatenate(edge_blocks, axis=0) if edge_blocks
                  else np.zeros((0, 2), dtype=np.int64))

    num_fields = len(graphs[0].node_cat)
    node_cat = [np.concatenate([g.node_cat[i] for g in graphs])
                for i in range(num_fields)]
    node_cont = (np.concatenate([g.node_cont for g in graphs], axis=0)
                 if graphs[0].node_cont is not None else None)

    edge_graphs = [g for g in graphs if len(g.edge_index)]
    if edge_graphs and edge_graphs[0].edge_cat:
        ef = len(edge_graphs[0].edge_cat)
        edge_cat = [np.concatenate([g.edge_cat[i] for g in edge_graphs])
                    for i in range(ef)]
    else:
        edge_cat = []
    edge_cont = (np.concatenate([g.edge_cont for g in edge_graphs], axis=0)
                 if edge_graphs and edge_graphs[0].edge_cont is not None else None)

    if task in NODE_TASKS:
        targets = np.concatenate([g.target for g in graphs])
    else:
        targets = np.stack([g.target for g in graphs], axis=0)

    batch = GraphBatch(
        num_nodes=num_nodes, num_edges=len(edge_index), num_graphs=len(graphs),
        edge_index=edge_index, graph_id=graph_id,
        node_cat=node_cat, node_cont=node_cont,
        edge_cat=edge_cat, edge_cont=edge_cont, targets=targets)
    batch.validate()
    return batch


# ---------------------------------------------------------------------------
# Synthetic generators: small graphs with exactly known targets.
# ---------------------------------------------------------------------------

def _count_triangles(num_nodes: int, edges: set[tuple[int, int]]) -> int:
    adj = np.zeros((num_nodes, num_nodes), dtype=bool)
    for u, v in edges:
        adj[u, v] = adj[v, u] = True
    count = 0
    for a in range(num_nodes):
        for b in range(a + 1, num_nodes):
            if not adj[a, b]:
                continue
            for c in range(b + 1, num_nodes):
                if adj[a, c] and adj[b, c]:
                    count += 1
    return count


def _count_components(num_nodes: int, edges: set[tuple[int, int]]) -> int:
    parent = list(range(num_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
    return len({find(x) for x in range(num_nodes)})


def _degree_labels(num_nodes: int, edges: set[tuple[int, int]]) -> list[list[int]]:
    deg = [0] * num_nodes
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    return [[min(d, 9)] for d in deg]


def _record(num_nodes: int, edges: set[tuple[int, int]], target) -> dict:
    ordered = sorted(edges)
    return {
        "nodes": _degree_labels(num_nodes, edges),
        "edges": [list(e) for e in ordered],
        "edge_feats": [[0] for _ in ordered],
        "target": target,
    }


def _random_tree_edges(nodes: list[int], rng) -> set[tuple[int, int]]:
    edges = set()
    for i in range(1, len(nodes)):
        j = int(rng.integers(0, i))
        a, b = nodes[j], nodes[i]
        edges.add((min(a, b), max(a, b)))
    return edges


def gen_synthetic(kind: str, size: int, seed: int) -> list[dict]:
    """Generate ``size`` random graphs of 6 to 20 nodes with exact targets."""
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if size < 1:
        raise ValueError("size must be at least 1")
    rng = derive_rng(seed, "synthetic", kind)
    records = []
    for _ in range(size):
        v = int(rng.integers(6, 21))
        if kind == "ring-regression":
            edges = {(i, i + 1) for i in range(v - 1)} | {(0, v - 1)}
            records.append(_record(v, edges, float(v)))
        elif kind == "triangle-count":
            t = int(rng.integers(0, min(4, v // 3) + 1))
            edges: set[tuple[int, int]] = set()
            for i in range(t):
                a, b, c = 3 * i, 3 * i + 1, 3 * i + 2
                edges |= {(a, b), (b, c), (a, c)}
            # Attach every remaining node to a uniformly chosen earlier one.
            for i in range(max(3 * t, 1), v):
                j = int(rng.integers(0, i))
                edges.add((j, i))
            if rng.random() < 0.3:
                a = int(rng.integers(0, v))
                b = int(rng.integers(0, v))
                if a != b:
                    edges.add((min(a, b), max(a, b)))
            records.append(_record(v, edges, _count_triangles(v, edges)))
        else:
            max_parts = min(3, v // 2)
            c = int(rng.integers(1, max_parts + 1))
            sizes = [2] * c
            for _ in range(v - 2 * c):
                sizes[int(rng.integers(0, c))] += 1
            edges = set()
            base = 0
            for s in sizes:
                members = list(range(base, base + s))
                edges |= _random_tree_edges(members, rng)
                if s >= 3 and rng.random() < 0.3:
                    a, b = rng.choice(s, size=2, replace=False)
                    edges.add((min(members[a], members[b]),
                               max(members[a], members[b])))
                base += s
            assert _count_components(v, edges) == c
            records.append(_record(v, edges, c % 2))
    return records


def write_jsonl(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
