"""
Exact subgraph-isomorphism oracle.
A VF2-style backtracking matcher with label/degree pruning, the containment
check of a node mapping, brute-force enumeration for small instances, and the
pair-list CSV used to store ground-truth labels.
"""

import csv
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from shared_utils import ArgumentError, FormatError

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 1.0

PAIR_CSV_HEADER = ['query_graph_index', 'data_graph_index', 'label']
UNKNOWN = 'unknown'


# =============================================================================
# TYPES
# =============================================================================

class Verdict(Enum):
    MATCH = 'match'
    NO_MATCH = 'nomatch'
    TIMEOUT = 'timeout'


@dataclass(frozen=True)
class NodeMapping:
    """Injective map query-node-id -> data-node-id."""
    pairs: dict = field(default_factory=dict)

    @classmethod
    def from_targets(cls, targets):
        """Mapping v -> targets[v] over query nodes 0..len(targets)-1."""
        return cls({v: int(t) for v, t in enumerate(targets)})

    def targets(self, query_size):
        """Data node of every query node as an array; raise if not total."""
        missing = [v for v in range(query_size) if v not in self.pairs]
        if missing:
            raise ArgumentError(f"Mapping is not total: query node(s) {missing} unmapped")
        return np.array([self.pairs[v] for v in range(query_size)], dtype=np.int64)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class OracleOutcome:
    verdict: Verdict
    mapping: NodeMapping = None
    elapsed: float = 0.0
    nodes_explored: int = 0

    @property
    def label(self):
        """Ground-truth label: 1, 0 or None for unknown."""
        if self.verdict is Verdict.MATCH:
            return 1
        if self.verdict is Verdict.NO_MATCH:
            return 0
        return None


class _SearchTimeout(Exception):
    pass


# =============================================================================
# CONTAINMENT CHECKS
# =============================================================================

def label_multiset_contained(q, d):
    """True iff every label occurs in d at least as often as in q."""
    size = max(int(q.labels.max(initial=-1)), int(d.labels.max(initial=-1))) + 1
    return bool(np.all(q.label_multiset(size) <= d.label_multiset(size)))


def verify_mapping(q, d, m):
    """
    Check that a node mapping embeds q into d.

    The image rows/columns of d's adjacency must contain q's adjacency: every
    entry of the selected data submatrix minus A_Q lies in {0, 1}.

    Args:
        q: query LabeledGraph
        d: data LabeledGraph
        m: NodeMapping total over q's nodes

    Returns:
        True iff m is injective, label-preserving and edge-preserving
    """
    image = m.targets(q.node_count)
    if image.size and (image.min() < 0 or image.max() >= d.node_count):
        raise ArgumentError(f"Mapping references a data node outside 0..{d.node_count - 1}")
    if len(set(image.tolist())) != image.shape[0]:
        return False
    if not np.array_equal(d.labels[image], q.labels):
        return False
    selected = d.adjacency[image][:, image].toarray().astype(np.int64)
    diff = selected - q.adjacency.toarray().astype(np.int64)
    return bool(np.all((diff == 0) | (diff == 1)))


# =============================================================================
# MATCHER
# =============================================================================

def _matching_order(q, d):
    """
    Connected, rarest-label-first ordering of query nodes.

    Returns:
        (order, parent) where parent[u] is an earlier-ordered neighbor of u or -1
    """
    label_freq = d.label_multiset(int(max(q.labels.max(initial=0), d.labels.max(initial=0))) + 1)
    remaining = set(range(q.node_count))
    order, parent = [], {}
    links = np.zeros(q.node_count, dtype=np.int64)
    while remaining:
        frontier = [u for u in remaining if links[u] > 0]
        pool = frontier if frontier else remaining
        u = min(pool, key=lambda v: (label_freq[q.labels[v]], -links[v], -q.degrees[v], v))
        placed = [w for w in q.neighbors(u).tolist() if w not in remaining]
        parent[u] = min(placed) if placed else -1
        order.append(u)
        remaining.discard(u)
        for w in q.neighbors(u).tolist():
            links[w] += 1
    return order, parent


def find_subgraph_isomorphism(q, d, timeout=DEFAULT_TIMEOUT):
    """
    Search for one label- and edge-preserving injection of q into d.

    Args:
        q: query LabeledGraph
        d: data LabeledGraph
        timeout: wall-clock budget in seconds

    Returns:
        OracleOutcome with Match(mapping), NoMatch (search exhausted) or Timeout
    """
    if timeout <= 0:
        raise ArgumentError(f"timeout must be > 0, got {timeout}")
    start = time.perf_counter()

    if (q.node_count > d.node_count or q.edge_count > d.edge_count
            or not label_multiset_contained(q, d)):
        return OracleOutcome(Verdict.NO_MATCH, elapsed=time.perf_counter() - start)

    order, parent = _matching_order(q, d)
    q_sets, d_sets = q.neighbor_sets, d.neighbor_sets
    q_labels, d_labels = q.labels.tolist(), d.labels.tolist()
    q_deg, d_deg = q.degrees.tolist(), d.degrees.tolist()
    earlier = {u: [w for w in q.neighbors(u).tolist() if order.index(w) < order.index(u)]
               for u in order}
    by_label = {}
    for v, label in enumerate(d_labels):
        by_label.setdefault(label, []).append(v)

    core = {}
    used = set()
    explored = 0
    deadline = start + timeout

    def candidates(u):
        p = parent[u]
        pool = d.neighbors(core[p]).tolist() if p >= 0 else by_label.get(q_labels[u], [])
        for c in pool:
            if c in used or d_labels[c] != q_labels[u] or d_deg[c] < q_deg[u]:
                continue
            if all(core[w] in d_sets[c] for w in earlier[u]):
                # look-ahead: enough free data neighbors for the unmapped query neighbors
                open_q = sum(1 for w in q_sets[u] if w not in core)
                open_d = sum(1 for w in d_sets[c] if w not in used)
                if open_d >= open_q:
                    yield c

    def extend(depth):
        nonlocal explored
        if depth == len(order):
            return True
        u = order[depth]
        for c in candidates(u):
            explored += 1
            if time.perf_counter() > deadline:
                raise _SearchTimeout()
            core[u] = c
            used.add(c)
            if extend(depth + 1):
                return True
            del core[u]
            used.discard(c)
        return False

    try:
        found = extend(0)
    except _SearchTimeout:
        return OracleOutcome(Verdict.TIMEOUT, elapsed=time.perf_counter() - start,
                             nodes_explored=explored)
    elapsed = time.perf_counter() - start
    if found:
        return OracleOutcome(Verdict.MATCH, NodeMapping(dict(sorted(core.items()))),
                             elapsed, explored)
    return OracleOutcome(Verdict.NO_MATCH, elapsed=elapsed, nodes_explored=explored)


def brute_force_isomorphism(q, d):
    """
    Exhaustive enumeration of all injections (small graphs only).

    Returns:
        NodeMapping of the first embedding in lexicographic order, or None
    """
    q_edges = q.edges.tolist()
    d_sets = d.neighbor_sets
    q_labels, d_labels = q.labels.tolist(), d.labels.tolist()
    for image in itertools.permutations(range(d.node_count), q.node_count):
        if any(d_labels[t] != q_labels[v] for v, t in enumerate(image)):
            continue
        if all(image[v] in d_sets[image[u]] for u, v in q_edges):
            return NodeMapping.from_targets(image)
    return None


def label_pairs(pairs, timeout=DEFAULT_TIMEOUT, threads=1):
    """
    Ground-truth labels for a list of (query, data) graph pairs.

    Args:
        pairs: list of (LabeledGraph, LabeledGraph)
        timeout: per-pair oracle budget in seconds
        threads: worker count; results keep input order

    Returns:
        list of 1, 0 or None (timeout -> unknown)
    """
    def label_one(pair):
        return find_subgraph_isomorphism(pair[0], pair[1], timeout).label

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            labels = list(pool.map(label_one, pairs))
    else:
        labels = [label_one(pair) for pair in pairs]
    unknown = sum(label is None for label in labels)
    if unknown:
        logger.warning("%d of %d pair(s) timed out and are labeled unknown", unknown, len(labels))
    return labels


# =============================================================================
# PAIR-LIST CSV
# =============================================================================

def write_pair_csv(path, rows):
    """
    Write rows of (query_index, data_index, label) with label in {1, 0, None}.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(PAIR_CSV_HEADER)
        for q_idx, d_idx, label in rows:
            writer.writerow([q_idx, d_idx, UNKNOWN if label is None else int(label)])
    return path


def read_pair_csv(path):
    """Read a pair-list CSV back into (query_index, data_index, label) tuples."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"Missing pair file: {path}")
    rows = []
    with path.open(newline='') as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != PAIR_CSV_HEADER:
            raise FormatError(f"{path.name}: expected header {','.join(PAIR_CSV_HEADER)}")
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            try:
                q_idx, d_idx, label = record
                label = None if label == UNKNOWN else int(label)
                if label not in (0, 1, None):
                    raise ValueError(label)
                rows.append((int(q_idx), int(d_idx), label))
            except ValueError as e:
                raise FormatError(f"{path.name}:{line_no}: bad row {record}") from e
    return rows
