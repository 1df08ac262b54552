"""Graph data model, manifest ingestion/export, SBM generation and splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numeric import SparseMatrix


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    ``adjacency`` is the symmetric 0/1 matrix without self-loops.  ``labels``
    is ``None`` for unlabeled graphs.
    """

    features: np.ndarray
    adjacency: SparseMatrix
    labels: np.ndarray | None = None
    num_classes: int | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DataError("features must be a 2-D array")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        n = x.shape[0]
        if self.adjacency.shape != (n, n):
            raise DataError(f"adjacency shape {self.adjacency.shape} does not match {n} nodes")
        a = self.adjacency.csr
        if (a != a.T).nnz:
            raise DataError("adjacency must be symmetric")
        if a.diagonal().any():
            raise DataError("adjacency must not store self-loops")
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (n,):
                raise DataError("need exactly one label per node")
            k = self.num_classes if self.num_classes is not None else int(y.max(initial=-1)) + 1
            if len(y) and (y.min() < 0 or y.max() >= k):
                raise DataError("labels outside [0, num_classes)")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)
            object.__setattr__(self, "num_classes", int(k))

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edges(self) -> np.ndarray:
        """Undirected edge list as an (E, 2) array with ``src < dst``, sorted."""
        upper = sp.triu(self.adjacency.csr, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def with_edges(self, edges: np.ndarray) -> Graph:
        return Graph(self.features, adjacency_from_edges(edges, self.num_nodes),
                     self.labels, self.num_classes)

    def with_features(self, features: np.ndarray) -> Graph:
        return Graph(features, self.adjacency, self.labels, self.num_classes)


def adjacency_from_edges(edges, num_nodes: int) -> SparseMatrix:
    """Symmetric, deduplicated 0/1 adjacency; self-loops are dropped."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) and (e.min() < 0 or e.max() >= num_nodes):
        raise DataError(f"edge endpoint out of range [0, {num_nodes})")
    e = e[e[:, 0] != e[:, 1]]
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(num_nodes, num_nodes)).tocsr()
    a.sum_duplicates()
    a.data[:] = 1.0
    return SparseMatrix.from_scipy(a)


def normalize_adjacency(g: Graph) -> SparseMatrix:
    """Symmetric GCN propagation matrix D^-1/2 (A + I) D^-1/2."""
    a = (g.adjacency.csr + sp.identity(g.num_nodes, format="csr")).tocoo()
    deg = np.asarray(a.sum(axis=1)).reshape(-1)
    # 1/sqrt(d_i d_j) rather than a product of two roots: equal degrees give exactly 1/d
    vals = 1.0 / np.sqrt(deg[a.row] * deg[a.col])
    return SparseMatrix.from_scipy(sp.csr_matrix((vals, (a.row, a.col)), shape=a.shape))


def row_normalize(x: np.ndarray) -> np.ndarray:
    s = np.abs(x).sum(axis=1, keepdims=True)
    s[s == 0] = 1.0
    return x / s


# ------------------------------------------------------------------ manifest

def _read_edges(path: Path, num_nodes: int) -> np.ndarray:
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'src<TAB>dst'")
            try:
                src, dst = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer node index") from None
            if not (0 <= src < num_nodes and 0 <= dst < num_nodes):
                raise DataError(f"{path}:{lineno}: node index out of range [0, {num_nodes})")
            edges.append((src, dst))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def _read_features(path: Path, num_nodes: int, dim: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(parts)}")
            try:
                row = [float(v) for v in parts]
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable feature value") from None
            if not all(math.isfinite(v) for v in row):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
            rows.append(row)
    if len(rows) != num_nodes:
        raise DataError(f"{path}: {len(rows)} feature rows for {num_nodes} nodes")
    return np.array(rows, dtype=np.float64).reshape(num_nodes, dim)


def _read_labels(path: Path, num_nodes: int) -> np.ndarray:
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                y = int(line)
            except ValueError:
                raise DataError(f"{path}:{lineno}: label is not an integer") from None
            if y < 0:
                raise DataError(f"{path}:{lineno}: negative label")
            labels.append(y)
    if len(labels) != num_nodes:
        raise DataError(f"{path}: {len(labels)} labels for {num_nodes} nodes")
    return np.array(labels, dtype=np.int64)


def load_dataset(manifest_path, row_normalize_features: bool = False) -> Graph:
    """Read a dataset manifest; relative paths resolve against its directory."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        meta = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from None
    for key in ("edges", "features", "num_nodes", "feature_dim"):
        if key not in meta:
            raise DataError(f"{manifest_path}: missing key {key!r}")
    base = manifest_path.parent
    paths = {}
    for key in ("edges", "features", "labels"):
        if meta.get(key) is None:
            continue
        p = base / meta[key]
        if not p.is_file():
            raise DataError(f"{key} file not found: {p}")
        paths[key] = p
    n, f = int(meta["num_nodes"]), int(meta["feature_dim"])
    edges = _read_edges(paths["edges"], n)
    x = _read_features(paths["features"], n, f)
    if row_normalize_features:
        x = row_normalize(x)
    y = _read_labels(paths["labels"], n) if "labels" in paths else None
    return Graph(x, adjacency_from_edges(edges, n), y)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_dataset(g: Graph, out_dir, name: str = "graph") -> Path:
    """Write ``g`` in manifest format; returns the manifest path.

    One line per undirected edge (``src < dst``), 17 significant digits for
    features, so a reload reproduces the graph exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges_file, feat_file, label_file = f"{name}.edges.tsv", f"{name}.features.csv", f"{name}.labels.txt"
    with open(out / edges_file, "w") as fh:
        for s, d in g.edges():
            fh.write(f"{s}\t{d}\n")
    with open(out / feat_file, "w") as fh:
        for row in g.features:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    if g.labels is not None:
        with open(out / label_file, "w") as fh:
            fh.writelines(f"{y}\n" for y in g.labels)
    manifest = {
        "edges": edges_file,
        "features": feat_file,
        "labels": label_file if g.labels is not None else None,
        "num_nodes": g.num_nodes,
        "feature_dim": g.feature_dim,
    }
    path = out / f"{name}.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ----------------------------------------------------------------------- SBM

@dataclass(frozen=True)
class SbmSpec:
    block_sizes: tuple[int, ...]
    p_in: float
    p_out: float
    feature_dim: int
    mu: float = 4.0
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))
        if not self.block_sizes or min(self.block_sizes) <= 0:
            raise ValueError("block sizes must be positive")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        if self.feature_dim < len(self.block_sizes):
            raise ValueError("feature_dim must be at least the number of blocks (orthogonal means)")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


def sbm_generate(spec: SbmSpec) -> Graph:
    """Planted-partition graph with block-dependent Gaussian features."""
    rng = np.random.default_rng(spec.seed)
    labels = np.repeat(np.arange(len(spec.block_sizes)), spec.block_sizes)
    n = len(labels)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, spec.p_in, spec.p_out)
    draw = rng.random((n, n))
    iu, ju = np.triu_indices(n, k=1)
    keep = draw[iu, ju] < prob[iu, ju]
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    q, _ = np.linalg.qr(rng.standard_normal((spec.feature_dim, len(spec.block_sizes))))
    means = spec.mu * q.T
    x = means[labels] + spec.sigma * rng.standard_normal((n, spec.feature_dim))
    return Graph(x, adjacency_from_edges(edges, n), labels, len(spec.block_sizes))


# --------------------------------------------------------------------- splits

@dataclass(frozen=True, eq=False)
class SplitMasks:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    seed: int
    ratio: tuple = field(default=(1, 1, 8))

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.valid), len(self.test)


def make_split(g: Graph, ratio=(1, 1, 8), seed: int = 0) -> SplitMasks:
    """Random permutation sliced train/valid/test; floor each, remainder to test."""
    if g.labels is None:
        raise DataError("splits need a labeled graph")
    if len(ratio) != 3 or min(ratio) <= 0:
        raise ValueError("ratio must have three positive components")
    n = g.num_nodes
    total = float(sum(ratio))
    n_train = int(math.floor(n * ratio[0] / total + 1e-9))
    n_valid = int(math.floor(n * ratio[1] / total + 1e-9))
    perm = np.random.default_rng(seed).permutation(n)
    return SplitMasks(
        train=np.sort(perm[:n_train]),
        valid=np.sort(perm[n_train:n_train + n_valid]),
        test=np.sort(perm[n_train + n_valid:]),
        seed=seed,
        ratio=tuple(ratio),
    )
