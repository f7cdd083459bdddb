"""On-disk dataset format, split generation, and synthetic block-model graphs.

A dataset directory holds four files, all UTF-8 with LF endings:
  graph.tsv     one undirected edge per line, "u<TAB>v", 0-based, listed once
  features.tsv  one node per line, tab-separated decimal floats
  labels.tsv    one integer class index per line
  split.json    {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cgnn.graph import Graph, GraphError


class DataError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    split: dict[str, list[int]]

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def validate(self) -> None:
        n = self.graph.num_nodes
        if self.features.shape[0] != n:
            raise DataError(
                f"features have {self.features.shape[0]} rows for {n} nodes"
            )
        if self.labels.shape != (n,):
            raise DataError(f"labels have shape {self.labels.shape}, expected ({n},)")
        if self.labels.size and self.labels.min() < 0:
            raise DataError("negative label")
        if self.num_classes < 2:
            raise DataError("need at least 2 classes")
        seen: dict[int, str] = {}
        for name in ("train", "val", "test"):
            if name not in self.split:
                raise DataError(f"split is missing {name!r}")
            for idx in self.split[name]:
                if not (0 <= idx < n):
                    raise DataError(f"split index {idx} out of range in {name!r}")
                if idx in seen:
                    raise DataError(
                        f"split overlap: node {idx} appears in both "
                        f"{seen[idx]!r} and {name!r}"
                    )
                seen[idx] = name

    def mask(self, name: str) -> np.ndarray:
        return np.asarray(self.split[name], dtype=np.int64)


def _parse_int(token: str, where: str):
    try:
        return int(token)
    except ValueError as exc:
        raise DataError(f"{where}: expected an integer, got {token!r}") from exc


def load_dataset(dir_path: str | Path) -> Dataset:
    """Read and validate a dataset directory; symmetrizes/dedupes graph.tsv edges."""
    root = Path(dir_path)
    for fname in ("graph.tsv", "features.tsv", "labels.tsv", "split.json"):
        if not (root / fname).exists():
            raise DataError(f"missing dataset file: {root / fname}")

    features_rows = []
    width = None
    with open(root / "features.tsv", "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                raise DataError(
                    f"features.tsv:{lineno}: non-numeric value"
                ) from exc
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(
                    f"features.tsv:{lineno}: expected {width} columns, got {len(row)}"
                )
            features_rows.append(row)
    features = np.asarray(features_rows, dtype=float)
    n = features.shape[0]

    labels = []
    with open(root / "labels.tsv", "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            labels.append(_parse_int(line, f"labels.tsv:{lineno}"))
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != n:
        raise DataError(f"labels.tsv has {labels.shape[0]} rows for {n} feature rows")

    edges = []
    with open(root / "graph.tsv", "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"graph.tsv:{lineno}: expected 'u<TAB>v', got {line!r}")
            u = _parse_int(parts[0], f"graph.tsv:{lineno}")
            v = _parse_int(parts[1], f"graph.tsv:{lineno}")
            if u == v:
                raise DataError(f"graph.tsv:{lineno}: self-loop at node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise DataError(f"graph.tsv:{lineno}: edge ({u}, {v}) out of range")
            edges.append((u, v))
    try:
        graph = Graph.from_edges(n, edges)
    except GraphError as exc:
        raise DataError(str(exc)) from exc

    with open(root / "split.json", "r", encoding="utf-8") as fh:
        try:
            raw_split = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"split.json: {exc}") from exc
    if not isinstance(raw_split, dict):
        raise DataError("split.json must hold an object")
    split = {}
    for name in ("train", "val", "test"):
        if name not in raw_split:
            raise DataError(f"split.json is missing {name!r}")
        split[name] = [int(i) for i in raw_split[name]]

    ds = Dataset(graph=graph, features=features, labels=labels, split=split)
    ds.validate()
    if labels.max() >= ds.num_classes:
        raise DataError("label out of range")
    return ds


def save_dataset(ds: Dataset, dir_path: str | Path) -> None:
    """Write the four-file directory format; floats as shortest round-trip decimals."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "graph.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, v in ds.graph.edges:
            fh.write(f"{u}\t{v}\n")
    with open(root / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for row in ds.features:
            fh.write("\t".join(repr(float(x)) for x in row) + "\n")
    with open(root / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for y in ds.labels:
            fh.write(f"{int(y)}\n")
    with open(root / "split.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({k: [int(i) for i in v] for k, v in ds.split.items()}, fh)
        fh.write("\n")


def make_fixed_split(
    labels: np.ndarray, per_class: int, val_size: int, test_size: int, seed: int
) -> dict[str, list[int]]:
    """per_class seeded training nodes per class, then val_size validation and
    test_size test nodes drawn from the remainder."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train: list[int] = []
    for c in range(int(labels.max()) + 1):
        pool = np.flatnonzero(labels == c)
        if pool.size < per_class:
            raise DataError(
                f"class {c} has {pool.size} nodes, need {per_class} for training"
            )
        chosen = rng.choice(pool, size=per_class, replace=False)
        train.extend(sorted(int(i) for i in chosen))
    rest = np.setdiff1d(np.arange(labels.size), np.asarray(train, dtype=np.int64))
    if rest.size < val_size + test_size:
        raise DataError(
            f"{rest.size} nodes remain after training selection, "
            f"need {val_size + test_size} for val+test"
        )
    perm = rng.permutation(rest)
    val = [int(i) for i in perm[:val_size]]
    test = [int(i) for i in perm[val_size : val_size + test_size]]
    return {"train": train, "val": val, "test": test}


@dataclass
class SbmSpec:
    """Stochastic block model with class-correlated features."""

    blocks: int
    nodes_per_block: int
    p_in: float
    p_out: float
    feature_dim: int
    signal: float
    seed: int

    def validate(self) -> None:
        if self.blocks < 1 or self.nodes_per_block < 1:
            raise DataError("need at least one block and one node per block")
        for name, p in (("p_in", self.p_in), ("p_out", self.p_out)):
            if not (0.0 <= p <= 1.0):
                raise DataError(f"{name} must lie in [0, 1], got {p}")
        if not (0.0 <= self.signal <= 1.0):
            raise DataError(f"signal must lie in [0, 1], got {self.signal}")
        if self.feature_dim < 1:
            raise DataError("feature_dim must be positive")


# Desk-scale acceptance instance: assortative 4-community graph whose structure
# carries more class information than the noisy features do.
ACCEPTANCE_SBM = SbmSpec(
    blocks=4,
    nodes_per_block=100,
    p_in=0.05,
    p_out=0.005,
    feature_dim=16,
    signal=0.3,
    seed=7,
)


def generate_sbm(spec: SbmSpec) -> Dataset:
    """Sample a block-model dataset: graph, noisy class-direction features,
    and a default split (20 per class train, 25% val, remainder test).

    Blocks smaller than 40 nodes shrink the per-class training count to half
    a block so tiny instances still split cleanly.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.blocks * spec.nodes_per_block
    labels = np.repeat(np.arange(spec.blocks), spec.nodes_per_block)

    edges = []
    for u in range(n):
        if u + 1 < n:
            probs = np.where(labels[u + 1 :] == labels[u], spec.p_in, spec.p_out)
            hits = np.flatnonzero(rng.random(n - u - 1) < probs)
            edges.extend((u, int(u + 1 + k)) for k in hits)

    directions = rng.standard_normal((spec.blocks, spec.feature_dim))
    noise = rng.standard_normal((n, spec.feature_dim))
    features = spec.signal * directions[labels] + (1.0 - spec.signal) * noise

    per_class = min(20, max(1, spec.nodes_per_block // 2))
    val_size = n // 4
    test_size = n - per_class * spec.blocks - val_size
    split = make_fixed_split(labels, per_class, val_size, test_size, seed=spec.seed)

    graph = Graph(num_nodes=n, edges=edges)
    ds = Dataset(graph=graph, features=features, labels=labels.astype(np.int64), split=split)
    ds.validate()
    return ds
