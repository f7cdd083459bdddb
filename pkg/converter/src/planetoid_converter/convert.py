"""Convert a citation-network bundle (ind.NAME.* files) to the neutral
four-file dataset directory.

Bundle layout: eight files per dataset name. x/tx/allx are pickled scipy
sparse feature matrices, y/ty/ally their one-hot label arrays, graph a
pickled adjacency dict, and test.index a text file giving the graph
positions of the tx rows (shuffled in some distributions). The converter
reorders the test block, symmetrizes/dedupes the graph, drops self-loops,
and writes graph.tsv / features.tsv / labels.tsv / split.json.
"""

from __future__ import annotations

import json
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SUFFIXES = ("x", "y", "tx", "ty", "allx", "ally", "graph", "test.index")

KNOWN_NAMES = ("cora", "citeseer", "pubmed", "nell")


class BundleError(ValueError):
    """Missing or inconsistent distribution files."""


@dataclass
class ConversionSummary:
    name: str
    num_nodes: int
    num_edges: int
    raw_edge_entries: int
    num_features: int
    num_classes: int
    train_size: int
    val_size: int
    test_size: int
    dropped_self_loops: int
    missing_test_indices: int
    zero_feature_rows: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _load_pickle(path: Path):
    with open(path, "rb") as fh:
        # latin1 handles bundles written by python 2
        return pickle.load(fh, encoding="latin1")


def _read_bundle(input_dir: Path, name: str) -> dict:
    objects = {}
    for suffix in SUFFIXES:
        path = input_dir / f"ind.{name}.{suffix}"
        if not path.exists():
            raise BundleError(f"missing bundle file: {path}")
        if suffix == "test.index":
            objects[suffix] = [int(line) for line in path.read_text().split()]
        else:
            objects[suffix] = _load_pickle(path)
    return objects


def _dense(mat) -> np.ndarray:
    if sp.issparse(mat):
        return np.asarray(mat.todense(), dtype=float)
    return np.asarray(mat, dtype=float)


def convert(input_dir: str | Path, name: str, output_dir: str | Path) -> ConversionSummary:
    """Assemble the full node ordering and write the neutral directory.

    Test indices absent from the index file (a known citeseer quirk) get
    zero feature rows, label 0, and are excluded from the test split.
    """
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    if name not in KNOWN_NAMES:
        raise BundleError(f"unknown dataset name {name!r}; expected one of {KNOWN_NAMES}")
    bundle = _read_bundle(input_dir, name)

    x = _dense(bundle["x"])
    y = np.asarray(bundle["y"])
    tx = _dense(bundle["tx"])
    ty = np.asarray(bundle["ty"])
    allx = _dense(bundle["allx"])
    ally = np.asarray(bundle["ally"])
    graph = bundle["graph"]
    test_index = bundle["test.index"]

    if x.shape[1] != allx.shape[1] or tx.shape[1] != allx.shape[1]:
        raise BundleError(
            f"feature widths disagree: x {x.shape}, tx {tx.shape}, allx {allx.shape}"
        )
    if y.shape[0] != x.shape[0] or ty.shape[0] != tx.shape[0] or ally.shape[0] != allx.shape[0]:
        raise BundleError("label row counts disagree with feature row counts")
    if len(test_index) != tx.shape[0]:
        raise BundleError(
            f"test.index lists {len(test_index)} rows but tx has {tx.shape[0]}"
        )

    n_allx = allx.shape[0]
    num_features = allx.shape[1]
    num_classes = ally.shape[1]

    sorted_test = sorted(test_index)
    lo, hi = sorted_test[0], sorted_test[-1]
    if lo < n_allx:
        raise BundleError(
            f"test index {lo} overlaps the allx block of {n_allx} rows"
        )
    block_nodes = hi + 1
    max_graph_node = max(graph.keys()) if graph else -1
    num_nodes = max(block_nodes, max_graph_node + 1)

    features = np.zeros((num_nodes, num_features))
    labels_onehot = np.zeros((num_nodes, num_classes))
    features[:n_allx] = allx
    labels_onehot[:n_allx] = ally
    for row, idx in enumerate(test_index):
        features[idx] = tx[row]
        labels_onehot[idx] = ty[row]

    present = set(test_index)
    missing = [i for i in range(lo, hi + 1) if i not in present]
    zero_rows = len(missing) + max(0, num_nodes - block_nodes)

    labels = labels_onehot.argmax(axis=1)

    raw_entries = 0
    dropped_loops = 0
    edge_set = set()
    for u, neighbors in sorted(graph.items()):
        for v in neighbors:
            raw_entries += 1
            u_i, v_i = int(u), int(v)
            if u_i == v_i:
                dropped_loops += 1
                continue
            if not (0 <= u_i < num_nodes and 0 <= v_i < num_nodes):
                raise BundleError(f"graph edge ({u_i}, {v_i}) out of range")
            edge_set.add((min(u_i, v_i), max(u_i, v_i)))
    edges = sorted(edge_set)

    n_train = y.shape[0]
    val_size = min(500, n_allx - n_train)
    split = {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + val_size)),
        "test": [i for i in sorted_test if i in present],
    }

    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / "graph.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, v in edges:
            fh.write(f"{u}\t{v}\n")
    with open(output_dir / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for row in features:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    with open(output_dir / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for label in labels:
            fh.write(f"{int(label)}\n")
    with open(output_dir / "split.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(split, fh)
        fh.write("\n")

    return ConversionSummary(
        name=name,
        num_nodes=num_nodes,
        num_edges=len(edges),
        raw_edge_entries=raw_entries,
        num_features=num_features,
        num_classes=num_classes,
        train_size=len(split["train"]),
        val_size=len(split["val"]),
        test_size=len(split["test"]),
        dropped_self_loops=dropped_loops,
        missing_test_indices=len(missing),
        zero_feature_rows=zero_rows,
    )
