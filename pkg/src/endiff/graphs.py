"""Undirected graph container, normalizations, kNN construction, synthetic data.

File formats (plain text, one record per line):
  features  whitespace-separated floats, one node per line
  labels    one integer per line, -1 marks unlabeled
  edges     "u v" integer pair, 0-indexed; directed input is symmetrized
  split     one of train/val/test per line
Cora adapter: content lines "id f1 ... fD class_name"; cites lines
"cited citing".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError
from .numerics import as_matrix

ADJACENCY_MODES = ("sym", "row", "gin", "identity", "all_one")


@dataclass(frozen=True)
class Graph:
    n: int
    edges: tuple[tuple[int, int], ...]
    degrees: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        seen = set()
        deg = [0] * self.n
        for u, v in self.edges:
            if u == v:
                raise ParameterError(f"self-loop ({u},{v}) not allowed")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ParameterError(f"edge ({u},{v}) out of range for n={self.n}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ParameterError(f"duplicate edge ({u},{v})")
            seen.add(key)
            deg[u] += 1
            deg[v] += 1
        object.__setattr__(self, "degrees", tuple(deg))

    @staticmethod
    def from_edge_list(n: int, edges) -> "Graph":
        """Build a graph from possibly directed/duplicated pairs."""
        dedup = sorted({(min(u, v), max(u, v)) for u, v in edges if u != v})
        return Graph(n=n, edges=tuple(dedup))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for u, v in self.edges:
            a[u, v] = 1.0
            a[v, u] = 1.0
        return a


@dataclass
class Dataset:
    features: np.ndarray  # N x D
    labels: np.ndarray  # N, int, -1 = unlabeled
    split: np.ndarray  # N, str in {train, val, test}
    graph: Graph | None = None

    def __post_init__(self):
        self.features = as_matrix(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=object)
        n = self.features.shape[0]
        if self.labels.shape[0] != n or self.split.shape[0] != n:
            raise ParameterError("features/labels/split lengths disagree")
        if self.graph is not None and self.graph.n != n:
            raise ParameterError("graph node count disagrees with features")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        labeled = self.labels[self.labels >= 0]
        return int(labeled.max()) + 1 if labeled.size else 0

    def mask(self, tag: str) -> np.ndarray:
        return self.split == tag


def normalized_adjacency(g: Graph, mode: str) -> np.ndarray:
    """Coupling matrix for the static families.

    sym: D^-1/2 A D^-1/2, row: D^-1 A, gin: A + I, identity: I,
    all_one: ones / N. Isolated nodes get zero off-diagonal rows in the
    degree-normalized modes.
    """
    if mode not in ADJACENCY_MODES:
        raise ParameterError(f"unknown adjacency mode {mode!r}")
    n = g.n
    if mode == "identity":
        return np.eye(n)
    if mode == "all_one":
        return np.full((n, n), 1.0 / n)
    a = g.adjacency()
    if mode == "gin":
        return a + np.eye(n)
    deg = np.asarray(g.degrees, dtype=np.float64)
    if mode == "row":
        inv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
        return inv[:, None] * a
    inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros(n), where=deg > 0)
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def er_graph(n: int, p: float, seed: int) -> Graph:
    """Erdos-Renyi G(n, p), deterministic per seed."""
    if n < 1 or not (0.0 <= p <= 1.0):
        raise ParameterError(f"need n >= 1 and p in [0, 1], got n={n}, p={p}")
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)
             if rng.random() < p]
    return Graph.from_edge_list(n, edges)


def is_connected(g: Graph) -> bool:
    if g.n <= 1:
        return True
    adj: list[list[int]] = [[] for _ in range(g.n)]
    for u, v in g.edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = {0}
    frontier = [0]
    while frontier:
        u = frontier.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                frontier.append(v)
    return len(seen) == g.n


def knn_graph(features: np.ndarray, k: int) -> Graph:
    """Symmetrized k-nearest-neighbor graph over Euclidean distances.

    Ties are broken toward the smaller node index, which makes the result
    deterministic for duplicated points.
    """
    x = as_matrix(features)
    n = x.shape[0]
    if not (1 <= k < n):
        raise ParameterError(f"k must satisfy 1 <= k < N, got k={k}, N={n}")
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, np.inf)
    edges = []
    for i in range(n):
        # argsort is stable, so equal distances resolve to lower indices
        nearest = np.argsort(d2[i], kind="stable")[:k]
        edges.extend((i, int(j)) for j in nearest)
    return Graph.from_edge_list(n, edges)


def sbm_generate(
    blocks: int,
    per_block: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    feat_shift: float,
    seed: int,
) -> Dataset:
    """Stochastic-block-model dataset with shifted-Gaussian features.

    Features are unit-variance Gaussian noise plus a per-block mean offset
    of magnitude feat_shift along axis (block index mod feat_dim). Split is
    a stratified 10/10/80 train/val/test shuffle, deterministic per seed.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ParameterError(f"need 0 <= p_out <= p_in <= 1, got {p_in}, {p_out}")
    if blocks < 1 or per_block < 1 or feat_dim < 1:
        raise ParameterError("blocks, per_block and feat_dim must be >= 1")
    rng = np.random.default_rng(seed)
    n = blocks * per_block
    labels = np.repeat(np.arange(blocks), per_block)
    feats = rng.standard_normal((n, feat_dim))
    for b in range(blocks):
        feats[labels == b, b % feat_dim] += feat_shift
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            p = p_in if labels[i] == labels[j] else p_out
            if p > 0.0 and rng.random() < p:
                edges.append((i, j))
    graph = Graph.from_edge_list(n, edges)
    split = np.empty(n, dtype=object)
    for b in range(blocks):
        idx = rng.permutation(np.flatnonzero(labels == b))
        n_train = max(1, round(0.1 * idx.size))
        n_val = max(1, round(0.1 * idx.size))
        split[idx[:n_train]] = "train"
        split[idx[n_train : n_train + n_val]] = "val"
        split[idx[n_train + n_val :]] = "test"
    return Dataset(features=feats, labels=labels, split=split, graph=graph)


def _read_lines(path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh if line.strip()]
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_dataset(features_path, labels_path, edges_path=None, split_path=None) -> Dataset:
    """Load a dataset from the plain-text formats described at module top."""
    feat_lines = _read_lines(features_path)
    feats = []
    for ln, line in enumerate(feat_lines, 1):
        try:
            feats.append([float(tok) for tok in line.split()])
        except ValueError:
            raise FormatError(f"{features_path}:{ln}: bad float") from None
        if len(feats[-1]) != len(feats[0]):
            raise FormatError(f"{features_path}:{ln}: inconsistent column count")
    features = np.array(feats)
    n = features.shape[0]

    label_lines = _read_lines(labels_path)
    if len(label_lines) != n:
        raise FormatError(f"{labels_path}: expected {n} rows, got {len(label_lines)}")
    labels = np.empty(n, dtype=np.int64)
    for ln, line in enumerate(label_lines, 1):
        try:
            labels[ln - 1] = int(line.strip())
        except ValueError:
            raise FormatError(f"{labels_path}:{ln}: bad label") from None

    graph = None
    if edges_path is not None:
        pairs = []
        for ln, line in enumerate(_read_lines(edges_path), 1):
            toks = line.split()
            if len(toks) != 2:
                raise FormatError(f"{edges_path}:{ln}: expected 'u v'")
            try:
                u, v = int(toks[0]), int(toks[1])
            except ValueError:
                raise FormatError(f"{edges_path}:{ln}: bad node id") from None
            if not (0 <= u < n and 0 <= v < n):
                raise FormatError(f"{edges_path}:{ln}: node id out of range")
            if u != v:
                pairs.append((u, v))
        graph = Graph.from_edge_list(n, pairs)

    if split_path is not None:
        split_lines = _read_lines(split_path)
        if len(split_lines) != n:
            raise FormatError(
                f"{split_path}: expected {n} rows, got {len(split_lines)}"
            )
        split = np.empty(n, dtype=object)
        for ln, line in enumerate(split_lines, 1):
            tag = line.strip()
            if tag not in ("train", "val", "test"):
                raise FormatError(f"{split_path}:{ln}: bad split tag {tag!r}")
            split[ln - 1] = tag
    else:
        split = np.full(n, "test", dtype=object)

    return Dataset(features=features, labels=labels, split=split, graph=graph)


def load_cora(content_path, cites_path, per_class_train: int = 20,
              n_val: int = 500, n_test: int = 1000, seed: int = 0) -> Dataset:
    """Cora-format adapter: class indices by first appearance, node order by
    content file; the split takes per_class_train labeled nodes per class,
    then n_val / n_test from the remainder in a seeded shuffle."""
    ids: dict[str, int] = {}
    feats = []
    class_ids: dict[str, int] = {}
    labels = []
    for ln, line in enumerate(_read_lines(content_path), 1):
        toks = line.split()
        if len(toks) < 3:
            raise FormatError(f"{content_path}:{ln}: too few columns")
        node_id, *values, cls = toks
        if node_id in ids:
            raise FormatError(f"{content_path}:{ln}: duplicate id {node_id}")
        ids[node_id] = len(ids)
        try:
            feats.append([float(v) for v in values])
        except ValueError:
            raise FormatError(f"{content_path}:{ln}: bad feature") from None
        labels.append(class_ids.setdefault(cls, len(class_ids)))
    n = len(ids)
    pairs = []
    for ln, line in enumerate(_read_lines(cites_path), 1):
        toks = line.split()
        if len(toks) != 2:
            raise FormatError(f"{cites_path}:{ln}: expected 'cited citing'")
        a, b = toks
        if a in ids and b in ids and a != b:
            pairs.append((ids[a], ids[b]))
    graph = Graph.from_edge_list(n, pairs)
    labels = np.asarray(labels, dtype=np.int64)

    rng = np.random.default_rng(seed)
    split = np.full(n, "none", dtype=object)  # nodes outside the protocol stay unused
    for c in range(labels.max() + 1):
        members = np.flatnonzero(labels == c)
        split[members[:per_class_train]] = "train"
    rest = rng.permutation(np.flatnonzero(split != "train"))
    split[rest[:n_val]] = "val"
    split[rest[n_val : n_val + n_test]] = "test"
    return Dataset(features=np.array(feats), labels=labels, split=split, graph=graph)
