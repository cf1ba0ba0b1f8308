"""
Random-walk sampling utilities.
Builds query/data graphs by frontier-edge random walks, labeled (D, Q+, Q-)
triplets for training, offline labeled pair sets, nested query chains for
ranking, train/val/test splits, and a synthetic corpus generator.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from graph_utils import GraphDataset, induced_subgraph, load_tu_dataset, make_graph, write_tu_dataset
from oracle_utils import (NodeMapping, Verdict, find_subgraph_isomorphism, read_pair_csv,
                          verify_mapping, write_pair_csv)
from shared_utils import (ArgumentError, ConfigError, DEFAULT_SEED, FormatError,
                          SAMPLER_DEFAULTS, merge_defaults)

logger = logging.getLogger(__name__)

POSITIVE = 'positive_by_construction'
NEGATIVE = 'negative_verified'

TEST_FRACTION = 0.2
VAL_FRACTION = 0.2


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class SamplerConfig:
    data_walk_range: tuple = tuple(SAMPLER_DEFAULTS['data_walk_range'])
    query_fraction_range: tuple = tuple(SAMPLER_DEFAULTS['query_fraction_range'])
    negative_retry_cap: int = SAMPLER_DEFAULTS['negative_retry_cap']
    oracle_timeout: float = SAMPLER_DEFAULTS['oracle_timeout']
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        lo, hi = self.data_walk_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"data_walk_range must satisfy 1 <= min <= max, got {list(self.data_walk_range)}")
        lo, hi = self.query_fraction_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(
                f"query_fraction_range must satisfy 0 < min <= max <= 1, got {list(self.query_fraction_range)}")
        if self.negative_retry_cap < 1:
            raise ConfigError(f"negative_retry_cap must be >= 1, got {self.negative_retry_cap}")
        if self.oracle_timeout <= 0:
            raise ConfigError(f"oracle_timeout must be > 0, got {self.oracle_timeout}")

    @classmethod
    def from_dict(cls, values, seed=DEFAULT_SEED):
        merged = merge_defaults(SAMPLER_DEFAULTS, values, 'sampler')
        return cls(data_walk_range=tuple(merged['data_walk_range']),
                   query_fraction_range=tuple(merged['query_fraction_range']),
                   negative_retry_cap=int(merged['negative_retry_cap']),
                   oracle_timeout=float(merged['oracle_timeout']),
                   seed=int(seed))


@dataclass(frozen=True)
class PairExample:
    query: object
    data: object
    label: int
    provenance: str


@dataclass
class TripletBatch:
    """(data, positive query, negative query) triplets plus the slots that failed."""
    triplets: list = field(default_factory=list)
    requested: int = 0

    @property
    def failures(self):
        return self.requested - len(self.triplets)

    @property
    def failure_rate(self):
        return self.failures / self.requested if self.requested else 0.0

    def __len__(self):
        return len(self.triplets)


# =============================================================================
# RANDOM WALKS
# =============================================================================

def random_walk_nodes(g, n, rng):
    """
    Node set visited by a frontier-edge random walk.

    Starts at a uniform node, then repeatedly adds the far end of a uniformly
    chosen (visited, unvisited) edge until n nodes are visited or the frontier
    is empty.

    Returns:
        sorted int64 array of visited node ids
    """
    if n < 1:
        raise ArgumentError(f"Walk size must be >= 1, got {n}")
    if g.node_count == 0:
        raise ArgumentError("Cannot walk on an empty graph")
    start = int(rng.integers(g.node_count))
    visited = {start}
    frontier = g.neighbors(start).tolist()
    while len(visited) < n and frontier:
        i = int(rng.integers(len(frontier)))
        w = frontier[i]
        frontier[i] = frontier[-1]
        frontier.pop()
        if w in visited:
            continue
        visited.add(w)
        frontier.extend(x for x in g.neighbors(w).tolist() if x not in visited)
    return np.array(sorted(visited), dtype=np.int64)


def random_walk_sample(g, n, rng):
    """Induced subgraph on the nodes of a random walk of (at most) n nodes; always connected."""
    return induced_subgraph(g, random_walk_nodes(g, n, rng))


def _query_size(d, cfg, rng):
    lo, hi = cfg.query_fraction_range
    return max(1, int(round(rng.uniform(lo, hi) * d.node_count)))


def sample_positive(d, cfg, rng):
    """
    Query walked inside d, matching d by construction.

    The size is a fraction of |V_d| drawn from cfg.query_fraction_range (rounded, at least 1).
    """
    nodes = random_walk_nodes(d, _query_size(d, cfg, rng), rng)
    q = induced_subgraph(d, nodes)
    assert verify_mapping(q, d, NodeMapping.from_targets(nodes)), "walk sample failed verification"
    return q


def sample_negative(d, corpus, cfg, rng, exclude=None, candidates=None):
    """
    Query walked inside a different corpus graph that the oracle proves does not match d.

    Args:
        d: data LabeledGraph
        corpus: GraphDataset (or list of graphs) to draw candidates from
        cfg: SamplerConfig
        rng: numpy Generator
        exclude: corpus index d was drawn from, never used as a source
        candidates: corpus indices allowed as sources (default: all)

    Returns:
        LabeledGraph, or None after cfg.negative_retry_cap rejected candidates
    """
    pool = range(len(corpus)) if candidates is None else candidates
    sources = [int(i) for i in pool if i != exclude]
    if not sources:
        logger.debug("No source graph other than %s for a negative", exclude)
        return None
    n = _query_size(d, cfg, rng)
    for _ in range(cfg.negative_retry_cap):
        source = corpus[sources[int(rng.integers(len(sources)))]]
        candidate = random_walk_sample(source, n, rng)
        outcome = find_subgraph_isomorphism(candidate, d, cfg.oracle_timeout)
        # timeouts are rejected, never labeled
        if outcome.verdict is Verdict.NO_MATCH:
            return candidate
    logger.debug("No negative found after %d candidate(s)", cfg.negative_retry_cap)
    return None


# =============================================================================
# TRIPLETS AND PAIR SETS
# =============================================================================

def sample_triplet(corpus, indices, cfg, rng):
    """
    One (D, Q+, Q-) triplet: D walked inside a corpus graph chosen from `indices`.

    Returns:
        (data, positive, negative), or None when no negative was found
    """
    source = int(indices[int(rng.integers(len(indices)))])
    lo, hi = cfg.data_walk_range
    d = random_walk_sample(corpus[source], int(rng.integers(lo, hi + 1)), rng)
    positive = sample_positive(d, cfg, rng)
    negative = sample_negative(d, corpus, cfg, rng, exclude=source, candidates=indices)
    if negative is None:
        return None
    return d, positive, negative


def sample_triplet_batch(corpus, indices, cfg, batch_size, seed, threads=1):
    """
    A batch of triplets, one child RNG stream per slot.

    Args:
        corpus: GraphDataset
        indices: corpus indices data graphs may be drawn from
        cfg: SamplerConfig
        batch_size: number of slots
        seed: int, sequence of ints or np.random.SeedSequence for this batch
        threads: worker count; slot order is kept

    Returns:
        TripletBatch (failed slots are skipped)
    """
    if len(indices) == 0:
        raise ArgumentError("No corpus graphs to sample data graphs from")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(batch_size)

    def one(stream):
        return sample_triplet(corpus, indices, cfg, np.random.default_rng(stream))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, streams))
    else:
        results = [one(stream) for stream in streams]
    batch = TripletBatch([t for t in results if t is not None], batch_size)
    if batch.failures:
        logger.warning("Skipped %d of %d triplet(s): no negative found", batch.failures, batch_size)
    return batch


def build_pair_set(corpus, indices, num_triplets, cfg, seed, threads=1):
    """
    Offline labeled pairs: each triplet contributes (Q+, D, 1) then (Q-, D, 0).

    Returns:
        list of PairExample
    """
    batch = sample_triplet_batch(corpus, indices, cfg, num_triplets, seed, threads)
    pairs = []
    for d, positive, negative in batch.triplets:
        pairs.append(PairExample(positive, d, 1, POSITIVE))
        pairs.append(PairExample(negative, d, 0, NEGATIVE))
    return pairs


def write_pair_set(pairs, out_dir, split, label_alphabet_size, label_map):
    """
    Write a pair set as two TUDataset corpora and a pair CSV.

    Data graphs shared by consecutive pairs are written once.

    Returns:
        path of the pair CSV
    """
    out_dir = Path(out_dir)
    queries, data, rows = [], [], []
    for pair in pairs:
        if not data or data[-1] is not pair.data:
            data.append(pair.data)
        queries.append(pair.query)
        rows.append((len(queries) - 1, len(data) - 1, pair.label))
    for suffix, graphs in (('queries', queries), ('data', data)):
        name = f"{split}_{suffix}"
        write_tu_dataset(GraphDataset(graphs, label_alphabet_size, name, list(label_map)),
                         out_dir / name, name)
    path = write_pair_csv(out_dir / f"{split}_pairs.csv", rows)
    logger.info("Wrote %d %s pair(s) to %s", len(rows), split, out_dir)
    return path


def load_pair_set(sample_dir, split, label_map):
    """
    Read a pair set written by write_pair_set, keeping the corpus label alphabet.

    Pairs labeled unknown are dropped.

    Returns:
        list of (query_index, data_index, PairExample)
    """
    sample_dir = Path(sample_dir)
    corpora = {}
    for suffix in ('queries', 'data'):
        name = f"{split}_{suffix}"
        corpora[suffix] = load_tu_dataset(sample_dir / name, name, min_component_size=1,
                                          label_map=label_map)
    pairs = []
    for q_idx, d_idx, label in read_pair_csv(sample_dir / f"{split}_pairs.csv"):
        if label is None:
            continue
        if q_idx >= len(corpora['queries']) or d_idx >= len(corpora['data']):
            raise FormatError(f"{split}_pairs.csv references graph ({q_idx}, {d_idx}) outside the corpora")
        provenance = POSITIVE if label == 1 else NEGATIVE
        pairs.append((q_idx, d_idx, PairExample(corpora['queries'][q_idx], corpora['data'][d_idx],
                                                label, provenance)))
    return pairs


# =============================================================================
# SPLITS AND CHAINS
# =============================================================================

def _held_out(count, fraction):
    # small corpora still get one held-out graph
    size = int(np.floor(count * fraction))
    return max(size, 1) if count >= 3 else size


def build_split(ds, seed):
    """
    Shuffled train/val/test partition of graph indices.

    80/20 train/test, then 20% of train becomes validation; sizes are floored
    (at least one held-out graph once there are 3+ graphs) and the remainder
    goes to train.

    Args:
        ds: GraphDataset or a graph count
        seed: shuffle seed

    Returns:
        (train, val, test) sorted lists of indices
    """
    n = ds if isinstance(ds, (int, np.integer)) else len(ds)
    order = np.random.default_rng(seed).permutation(n).tolist()
    n_test = _held_out(n, TEST_FRACTION)
    n_val = _held_out(n - n_test, VAL_FRACTION)
    test = sorted(order[:n_test])
    val = sorted(order[n_test:n_test + n_val])
    train = sorted(order[n_test + n_val:])
    return train, val, test


def build_nested_chain(d, length, cfg, rng):
    """
    Nested queries Q1 > Q2 > ... with strictly decreasing node counts.

    Q1 is a walk inside d (at least `length` nodes when d allows) and each
    later member is a walk inside its predecessor, so every member matches d
    and all earlier members. Ground-truth rank is node count descending.

    Returns:
        list of LabeledGraph, shorter than `length` when d is too small
    """
    if length < 1:
        raise ArgumentError(f"Chain length must be >= 1, got {length}")
    actual = min(length, d.node_count)
    if actual < length:
        logger.warning("Graph with %d node(s) supports a chain of %d, not %d",
                       d.node_count, actual, length)
    n = min(d.node_count, max(actual, _query_size(d, cfg, rng)))
    chain = [random_walk_sample(d, n, rng)]
    for i in range(1, actual):
        remaining = actual - i - 1
        size = int(rng.integers(remaining + 1, chain[-1].node_count))
        chain.append(random_walk_sample(chain[-1], size, rng))
    return chain


# =============================================================================
# SYNTHETIC CORPUS
# =============================================================================

def synthetic_graph(num_nodes, labels, extra_edge_fraction, rng):
    """Random labeled tree plus round(fraction * n) extra random edges; always connected."""
    edges = set()
    for v in range(1, num_nodes):
        u = int(rng.integers(v))
        edges.add((u, v))
    for _ in range(int(round(extra_edge_fraction * num_nodes))):
        u, v = sorted(rng.integers(num_nodes, size=2).tolist())
        if u != v:
            edges.add((u, v))
    node_labels = rng.choice(np.asarray(labels, dtype=np.int64), size=num_nodes)
    return make_graph(node_labels, sorted(edges))


def generate_synthetic_corpus(num_graphs, num_labels, node_range, extra_edge_fraction=0.3,
                              separable=False, seed=DEFAULT_SEED, name='synthetic'):
    """
    Seeded corpus of connected labeled graphs.

    With separable=True, even-indexed graphs draw labels from the lower half of
    the alphabet and odd-indexed graphs from the upper half, so graphs from
    different halves never match.

    Returns:
        GraphDataset
    """
    if num_graphs < 1 or num_labels < 1:
        raise ArgumentError(f"Need at least one graph and one label, got {num_graphs}, {num_labels}")
    if separable and num_labels < 2:
        raise ArgumentError("A separable corpus needs at least 2 labels")
    lo, hi = node_range
    if not 1 <= lo <= hi:
        raise ArgumentError(f"node_range must satisfy 1 <= min <= max, got {list(node_range)}")
    rng = np.random.default_rng(seed)
    half = num_labels // 2
    groups = [list(range(half)), list(range(half, num_labels))] if separable else [list(range(num_labels))]
    graphs = [synthetic_graph(int(rng.integers(lo, hi + 1)), groups[i % len(groups)],
                              extra_edge_fraction, rng)
              for i in range(num_graphs)]
    return GraphDataset(graphs, num_labels, name)
