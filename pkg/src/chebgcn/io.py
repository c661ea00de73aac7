"""File formats: whitespace edge lists, node feature CSVs, and meta-data CSVs.

Floats are written with ``repr`` so that a write/read round trip reproduces
the exact same float64 values.
"""

import csv
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import PopulationGraph

MISSING_TOKENS = {"", "na", "nan", "none"}


class FileFormatError(ValueError):
    """An input file does not match the expected format."""


def write_edge_list(path, adjacency) -> None:
    """Write the upper triangle of a symmetric adjacency as ``i j w`` lines."""
    if sp.issparse(adjacency):
        coo = sp.coo_array(adjacency)
        rows, cols, vals = coo.row, coo.col, coo.data
    else:
        rows, cols = np.nonzero(adjacency)
        vals = np.asarray(adjacency)[rows, cols]
    keep = rows < cols
    order = np.lexsort((cols[keep], rows[keep]))
    rows, cols, vals = rows[keep][order], cols[keep][order], vals[keep][order]
    with open(path, "w") as fh:
        for i, j, w in zip(rows, cols, vals):
            fh.write(f"{i} {j} {float(w)!r}\n")


def read_edge_list(path, n_nodes: int) -> np.ndarray:
    """Read ``i j w`` lines into a dense symmetric (n_nodes, n_nodes) array."""
    adj = np.zeros((n_nodes, n_nodes))
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FileFormatError(
                    f"{path}:{lineno}: expected 'i j w', got {line!r}"
                )
            try:
                i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from None
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise FileFormatError(
                    f"{path}:{lineno}: node index out of range for {n_nodes} nodes"
                )
            if i == j:
                raise FileFormatError(f"{path}:{lineno}: self-loops are not allowed")
            adj[i, j] = w
            adj[j, i] = w
    return adj


def write_features_csv(path, graph: PopulationGraph) -> None:
    """Write node features, labels, and split tags as ``node,f0,...,label,split``.

    Every node must belong to exactly one of the train/test masks so the
    split column loses no information.
    """
    in_either = graph.train_mask | graph.test_mask
    if not bool(in_either.all()):
        raise ValueError("every node needs a split tag: train and test masks must cover all nodes")
    header = ["node"] + [f"f{i}" for i in range(graph.n_features)] + ["label", "split"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(graph.n_nodes):
            split = "train" if graph.train_mask[i] else "test"
            row = [i] + [repr(float(v)) for v in graph.features[i]]
            row += [int(graph.labels[i]), split]
            writer.writerow(row)


def read_features_csv(path):
    """Read a features CSV back into (features, labels, train_mask, test_mask)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "node" or header[-2:] != ["label", "split"]:
            raise FileFormatError(
                f"{path}: header must be node,<features...>,label,split, got {header}"
            )
        n_feats = len(header) - 3
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FileFormatError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                node = int(row[0])
                feats = [float(v) for v in row[1 : 1 + n_feats]]
                label = int(row[1 + n_feats])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from None
            split = row[-1].strip().lower()
            if split not in ("train", "test"):
                raise FileFormatError(f"{path}:{lineno}: split must be train or test")
            if node in rows:
                raise FileFormatError(f"{path}:{lineno}: duplicate node {node}")
            rows[node] = (feats, label, split)
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise FileFormatError(f"{path}: node ids must cover 0..{n - 1} exactly")
    features = np.array([rows[i][0] for i in range(n)])
    labels = np.array([rows[i][1] for i in range(n)], dtype=np.int64)
    train = np.array([rows[i][2] == "train" for i in range(n)])
    return features, labels, train, ~train


def save_graph(graph: PopulationGraph, features_path, edges_path) -> None:
    write_features_csv(features_path, graph)
    write_edge_list(edges_path, graph.adjacency)


def load_graph(features_path, edges_path, storage: str = "auto") -> PopulationGraph:
    """Assemble a :class:`PopulationGraph` from a features CSV and an edge list."""
    features, labels, train, test = read_features_csv(features_path)
    adjacency = read_edge_list(edges_path, n_nodes=features.shape[0])
    return PopulationGraph(
        adjacency=adjacency,
        features=features,
        labels=labels,
        train_mask=train,
        test_mask=test,
        storage=storage,
    )


def read_meta_csv(path):
    """Read per-node meta-data columns from ``node,<name>,...`` CSV.

    Returns a dict mapping column name to ``(values, missing)`` where
    ``values`` is float64 and ``missing`` is a boolean mask. Empty cells and
    the tokens na/nan/none (any case) count as missing; a missing value is
    stored as 0.0 under the mask. Columns with any non-numeric entry are
    treated as categorical and coded by sorted distinct value, from 0.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "node":
            raise FileFormatError(f"{path}: header must be node,<name>[,<name>...]")
        names = header[1:]
        if len(set(names)) != len(names):
            raise FileFormatError(f"{path}: duplicate meta-data column names")
        cells = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FileFormatError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                node = int(row[0])
            except ValueError:
                raise FileFormatError(f"{path}:{lineno}: bad node id {row[0]!r}") from None
            if node in cells:
                raise FileFormatError(f"{path}:{lineno}: duplicate node {node}")
            cells[node] = [v.strip() for v in row[1:]]
    n = len(cells)
    if sorted(cells) != list(range(n)):
        raise FileFormatError(f"{path}: node ids must cover 0..{n - 1} exactly")

    out = {}
    for col, name in enumerate(names):
        raw = [cells[i][col] for i in range(n)]
        missing = np.array([v.lower() in MISSING_TOKENS for v in raw])
        values = np.zeros(n)
        present = [(i, v) for i, v in enumerate(raw) if not missing[i]]
        numeric = True
        for _, v in present:
            try:
                float(v)
            except ValueError:
                numeric = False
                break
        if numeric:
            for i, v in present:
                values[i] = float(v)
        else:
            codes = {v: c for c, v in enumerate(sorted({v for _, v in present}))}
            for i, v in present:
                values[i] = codes[v]
        out[name] = (values, missing)
    return out
