"""
Labeled graph utilities.
Undirected node-labeled graphs on a compact sparse adjacency, induced subgraphs,
k-hop neighborhoods and TUDataset-format reading and writing.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _csgraph_components

from shared_utils import ArgumentError, DATASET_DEFAULTS, FormatError

logger = logging.getLogger(__name__)


# TUDataset file suffixes
TU_EDGES = '_A.txt'
TU_INDICATOR = '_graph_indicator.txt'
TU_LABELS = '_node_labels.txt'
TU_META = '_meta.json'


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True, eq=False)
class LabeledGraph:
    """
    Undirected node-labeled graph.

    The adjacency is a symmetric CSR matrix with sorted column indices, so
    `neighbors(v)` always iterates in ascending id order. Instances are
    immutable; build them with `make_graph` or the helpers below.
    """
    labels: np.ndarray
    adjacency: sp.csr_matrix

    @property
    def node_count(self):
        return int(self.labels.shape[0])

    @property
    def edge_count(self):
        return int(self.adjacency.nnz // 2)

    def neighbors(self, v):
        """Sorted neighbor ids of node v."""
        start, end = self.adjacency.indptr[v], self.adjacency.indptr[v + 1]
        return self.adjacency.indices[start:end]

    @cached_property
    def degrees(self):
        return np.diff(self.adjacency.indptr).astype(np.int64)

    @cached_property
    def neighbor_sets(self):
        """Python sets per node, for the oracle's constant-time edge tests."""
        return [frozenset(self.neighbors(v).tolist()) for v in range(self.node_count)]

    @cached_property
    def edges(self):
        """Edge array of shape (m, 2) with u < v, sorted lexicographically."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        pairs = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]

    def label_multiset(self, alphabet_size=None):
        """Count of each label id (the multiset of node labels)."""
        size = alphabet_size if alphabet_size is not None else int(self.labels.max(initial=-1)) + 1
        return np.bincount(self.labels, minlength=size)

    def __eq__(self, other):
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        return (np.array_equal(self.labels, other.labels)
                and np.array_equal(self.edges, other.edges))

    def __hash__(self):
        return hash((self.labels.tobytes(), self.edges.tobytes()))

    def __repr__(self):
        return f"LabeledGraph(nodes={self.node_count}, edges={self.edge_count})"


@dataclass
class GraphDataset:
    """
    Ordered corpus of graphs sharing one dense label alphabet.

    label_map[i] is the original (file) label value of dense label id i.
    """
    graphs: list
    label_alphabet_size: int
    name: str
    label_map: list = field(default_factory=list)

    def __post_init__(self):
        if not self.label_map:
            self.label_map = list(range(self.label_alphabet_size))
        for i, g in enumerate(self.graphs):
            if g.node_count and int(g.labels.max()) >= self.label_alphabet_size:
                raise ArgumentError(
                    f"Graph {i} uses label {int(g.labels.max())} outside alphabet "
                    f"of size {self.label_alphabet_size}")

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, index):
        return self.graphs[index]

    def subset(self, indices, name=None):
        """New dataset holding the graphs at `indices`, same alphabet."""
        return GraphDataset([self.graphs[i] for i in indices], self.label_alphabet_size,
                            name or self.name, list(self.label_map))


# =============================================================================
# CONSTRUCTION
# =============================================================================

def _freeze(array):
    array.setflags(write=False)
    return array


def _canonical(labels, adjacency):
    """Wrap arrays into an immutable LabeledGraph with a canonical CSR layout."""
    adjacency = sp.csr_matrix(adjacency, dtype=np.int8, copy=True)
    adjacency.sum_duplicates()
    adjacency.data[:] = 1
    adjacency.eliminate_zeros()
    adjacency.sort_indices()
    return LabeledGraph(labels=_freeze(np.asarray(labels, dtype=np.int64).copy()),
                        adjacency=adjacency)


def make_graph(labels, edges=()):
    """
    Build a graph from per-node labels and an undirected edge list.

    Args:
        labels: sequence of non-negative integer label ids, one per node
        edges: iterable of (u, v) pairs; duplicates and either orientation accepted

    Returns:
        LabeledGraph with symmetric, deduplicated, sorted adjacency
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = labels.shape[0]
    if n and labels.min() < 0:
        raise ArgumentError("Node labels must be non-negative")
    pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if pairs.size:
        if pairs.min() < 0 or pairs.max() >= n:
            raise ArgumentError(f"Edge endpoint outside 0..{n - 1}")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ArgumentError("Self-loops are not allowed")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    adjacency = sp.coo_matrix((np.ones(rows.shape[0], dtype=np.int8), (rows, cols)), shape=(n, n))
    return _canonical(labels, adjacency)


def permute_graph(g, perm):
    """
    Relabel nodes: old node v becomes node perm[v].

    Args:
        g: LabeledGraph
        perm: permutation array of length g.node_count

    Returns:
        Isomorphic LabeledGraph with permuted ids
    """
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(g.node_count)):
        raise ArgumentError("perm must be a permutation of the node ids")
    labels = np.empty_like(g.labels)
    labels[perm] = g.labels
    return make_graph(labels, perm[g.edges])


def to_networkx(g):
    """Convert to a networkx Graph with a 'label' node attribute."""
    G = nx.Graph()
    for v, label in enumerate(g.labels.tolist()):
        G.add_node(v, label=label)
    G.add_edges_from(g.edges.tolist())
    return G


def from_networkx(G):
    """Convert a networkx Graph with integer 'label' attributes (nodes relabeled in sorted order)."""
    nodes = sorted(G.nodes())
    index = {v: i for i, v in enumerate(nodes)}
    labels = [G.nodes[v]['label'] for v in nodes]
    return make_graph(labels, [(index[u], index[v]) for u, v in G.edges() if u != v])


# =============================================================================
# SUBGRAPHS
# =============================================================================

def _validated_nodes(g, nodes):
    ids = np.unique(np.asarray(list(nodes), dtype=np.int64))
    if ids.size == 0:
        raise ArgumentError("Node set must be nonempty")
    if ids[0] < 0 or ids[-1] >= g.node_count:
        raise ArgumentError(f"Node id outside 0..{g.node_count - 1}")
    return ids


def induced_subgraph(g, nodes):
    """
    Subgraph induced by a node set.

    Args:
        g: LabeledGraph
        nodes: nonempty iterable of valid node ids

    Returns:
        LabeledGraph on len(nodes) nodes, relabeled 0..k-1 in ascending original-id order
    """
    ids = _validated_nodes(g, nodes)
    sub = g.adjacency[ids][:, ids]
    return _canonical(g.labels[ids], sub)


def hop_distances(g, root, k):
    """
    Breadth-first distances from root, cut off at depth k.

    Returns:
        dict {node_id: distance} for every node within k hops
    """
    if not 0 <= root < g.node_count:
        raise ArgumentError(f"Root {root} outside 0..{g.node_count - 1}")
    if k < 0:
        raise ArgumentError(f"k must be >= 0, got {k}")
    distances = {int(root): 0}
    frontier = np.array([root], dtype=np.int64)
    indptr, indices = g.adjacency.indptr, g.adjacency.indices
    for depth in range(1, k + 1):
        if frontier.size == 0:
            break
        reached = np.unique(np.concatenate([indices[indptr[v]:indptr[v + 1]] for v in frontier]))
        fresh = [int(v) for v in reached if int(v) not in distances]
        for v in fresh:
            distances[v] = depth
        frontier = np.asarray(fresh, dtype=np.int64)
    return distances


def k_hop_neighborhood(g, root, k):
    """
    Induced subgraph on all nodes within k hops of root.

    Args:
        g: LabeledGraph
        root: center node id
        k: hop radius (k=0 gives the root alone)

    Returns:
        (LabeledGraph, center) where center is root's id in the returned graph
    """
    nodes = sorted(hop_distances(g, root, k))
    center = nodes.index(int(root))
    return induced_subgraph(g, nodes), center


def connected_components(g):
    """Node-id arrays of each connected component, ordered by smallest member."""
    if g.node_count == 0:
        return []
    count, membership = _csgraph_components(g.adjacency, directed=False)
    components = [np.flatnonzero(membership == c) for c in range(count)]
    components.sort(key=lambda ids: ids[0])
    return components


def is_connected(g):
    return g.node_count > 0 and len(connected_components(g)) == 1


# =============================================================================
# TUDATASET I/O
# =============================================================================

def _read_int_table(path, columns):
    """Read a comma/whitespace separated integer table; raise FormatError on any problem."""
    if not path.is_file():
        raise FormatError(f"Missing file: {path}")
    rows = []
    with path.open() as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            parts = [p for p in text.replace(',', ' ').split() if p]
            if len(parts) != columns:
                raise FormatError(f"{path.name}:{line_no}: expected {columns} value(s), got '{text}'")
            try:
                rows.append([int(p) for p in parts])
            except ValueError as e:
                raise FormatError(f"{path.name}:{line_no}: not an integer in '{text}'") from e
    return np.asarray(rows, dtype=np.int64).reshape(-1, columns)


def _read_meta(root, name):
    path = root / f"{name}{TU_META}"
    if not path.is_file():
        return {}
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path.name}: {e}") from e
    if not isinstance(meta, dict):
        raise FormatError(f"{path.name}: expected a JSON object")
    return meta


def load_tu_dataset(dir_path, name, min_component_size=None, label_map=None):
    """
    Load a TUDataset-format corpus.

    A `<name>_meta.json` written by `write_tu_dataset` supplies the alphabet
    and the component minimum when the caller leaves them unset.

    Args:
        dir_path: directory holding <name>_A.txt, <name>_graph_indicator.txt, <name>_node_labels.txt
        name: dataset name (file prefix)
        min_component_size: connected components smaller than this are dropped
            (default: the meta file's value, else the dataset default of 3)
        label_map: fixed original label values of the alphabet; by default the
            meta file's alphabet, else the sorted set of values found in the file

    Returns:
        GraphDataset with 0-based node ids per graph and a dense label alphabet
    """
    root = Path(dir_path)
    meta = _read_meta(root, name)
    if min_component_size is None:
        min_component_size = int(meta.get('min_component_size', DATASET_DEFAULTS['min_component_size']))
    if label_map is None:
        label_map = meta.get('label_map')
    edges = _read_int_table(root / f"{name}{TU_EDGES}", 2)
    indicator = _read_int_table(root / f"{name}{TU_INDICATOR}", 1)[:, 0]
    raw_labels = _read_int_table(root / f"{name}{TU_LABELS}", 1)[:, 0]

    n = indicator.shape[0]
    if n == 0:
        raise FormatError(f"{name}: graph indicator is empty")
    if raw_labels.shape[0] != n:
        raise FormatError(f"{name}: {raw_labels.shape[0]} node labels for {n} nodes")
    steps = np.diff(indicator)
    if indicator[0] != 1 or np.any((steps != 0) & (steps != 1)):
        raise FormatError(f"{name}: graph ids must be non-decreasing contiguous integers starting at 1")
    if edges.size and (edges.min() < 1 or edges.max() > n):
        raise FormatError(f"{name}: edge references a node outside 1..{n}")

    if label_map is None:
        label_map = np.unique(raw_labels)
    else:
        label_map = np.asarray(label_map, dtype=np.int64)
        unknown = np.setdiff1d(raw_labels, label_map)
        if unknown.size:
            raise FormatError(f"{name}: label value(s) {unknown.tolist()} outside the given alphabet")
    order = np.argsort(label_map, kind='stable')
    dense_labels = order[np.searchsorted(label_map[order], raw_labels)]

    edges = edges - 1
    if edges.size and np.any(indicator[edges[:, 0]] != indicator[edges[:, 1]]):
        raise FormatError(f"{name}: edge joins nodes of different graphs")
    loops = edges[:, 0] == edges[:, 1]
    if np.any(loops):
        logger.warning("%s: dropping %d self-loop line(s)", name, int(loops.sum()))
        edges = edges[~loops]

    starts = np.flatnonzero(np.r_[True, steps != 0])
    ends = np.r_[starts[1:], n]
    edge_graph = indicator[edges[:, 0]] - 1 if edges.size else np.empty(0, dtype=np.int64)
    graphs = []
    dropped = 0
    for gid, (start, end) in enumerate(zip(starts, ends)):
        local = edges[edge_graph == gid] - start
        whole = make_graph(dense_labels[start:end], local)
        for component in connected_components(whole):
            if component.shape[0] >= min_component_size:
                graphs.append(whole if component.shape[0] == whole.node_count
                              else induced_subgraph(whole, component))
            else:
                dropped += 1
    if dropped:
        logger.info("%s: dropped %d component(s) below %d nodes", name, dropped, min_component_size)

    return GraphDataset(graphs=graphs, label_alphabet_size=int(label_map.shape[0]),
                        name=name, label_map=label_map.tolist())


def write_tu_dataset(ds, dir_path, name=None):
    """
    Write a GraphDataset in TUDataset format (both edge orientations, original label values).

    The full alphabet goes to `<name>_meta.json` with a component minimum of 1,
    so a default `load_tu_dataset` gives back the same dataset.

    Returns:
        Path of the directory written
    """
    name = name or ds.name
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    edge_lines, indicator_lines, label_lines = [], [], []
    offset = 0
    for gid, g in enumerate(ds.graphs, start=1):
        adjacency = g.adjacency.tocoo()
        order = np.lexsort((adjacency.col, adjacency.row))
        for u, v in zip(adjacency.row[order], adjacency.col[order]):
            edge_lines.append(f"{u + offset + 1}, {v + offset + 1}")
        indicator_lines.extend([str(gid)] * g.node_count)
        label_lines.extend(str(ds.label_map[label]) for label in g.labels.tolist())
        offset += g.node_count
    for suffix, lines in ((TU_EDGES, edge_lines), (TU_INDICATOR, indicator_lines),
                          (TU_LABELS, label_lines)):
        (root / f"{name}{suffix}").write_text(''.join(line + '\n' for line in lines))
    meta = {'label_map': [int(v) for v in ds.label_map], 'min_component_size': 1}
    (root / f"{name}{TU_META}").write_text(json.dumps(meta, sort_keys=True) + '\n')
    return root


def read_graph_json(path):
    """
    Read one graph from JSON: {"labels": [int, ...], "edges": [[u, v], ...]}.

    Raises:
        FormatError: unreadable file, bad JSON or an invalid graph
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
        return make_graph(payload['labels'], [tuple(e) for e in payload.get('edges', [])])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"Could not read graph from {path}: {e}") from e


def write_graph_json(g, path):
    path = Path(path)
    path.write_text(json.dumps({'labels': g.labels.tolist(), 'edges': g.edges.tolist()}) + '\n')
    return path
