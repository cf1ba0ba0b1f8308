"""
Large-graph neighborhood index.
Embeds the k-hop neighborhood of every node of one big graph into a table,
persists it in the binary container, and decides whether a query matches
anywhere in the graph: max over nodes of psi(query, neighborhood) > tau.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from encoder_utils import encode_graph, read_container, write_container
from graph_utils import k_hop_neighborhood
from measure_utils import score_arrays
from shared_utils import ArgumentError, FormatError

logger = logging.getLogger(__name__)


@dataclass
class NeighborhoodIndex:
    table: np.ndarray
    k: int
    checkpoint_hash: str = ''

    @property
    def node_count(self):
        return self.table.shape[0]


def build_index(g, params, cfg, k=None, threads=1, checkpoint_hash=''):
    """
    Embedding of N^k(v) for every node v of g.

    Args:
        k: hop radius, defaults to the encoder depth

    Returns:
        NeighborhoodIndex with a (|V|, d) table in node order
    """
    k = cfg.num_layers if k is None else int(k)
    if k < 1:
        raise ArgumentError(f"Index radius k must be >= 1, got {k}")

    def one(v):
        neighborhood, _ = k_hop_neighborhood(g, v, k)
        return encode_graph(neighborhood, params, cfg, inference=True).value

    nodes = range(g.node_count)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, nodes))
    else:
        rows = [one(v) for v in nodes]
    logger.info("Indexed %d node neighborhood(s) at k=%d", len(rows), k)
    return NeighborhoodIndex(np.stack(rows), k, checkpoint_hash)


def save_index(path, index):
    header = {'kind': 'index', 'k': index.k, 'checkpoint_hash': index.checkpoint_hash}
    return write_container(path, {'table': index.table}, header)


def load_index(path):
    arrays, header = read_container(path)
    if header.get('kind') != 'index' or 'table' not in arrays:
        raise FormatError(f"{path}: not an index")
    return NeighborhoodIndex(arrays['table'], int(header['k']), header.get('checkpoint_hash', ''))


def match_queries(query_embs, index, tau, reduction='aggregate'):
    """
    Per-query best node and decision against the index.

    Returns:
        (max psi per query, argmax node per query (lowest id on ties), decisions 1/0)
    """
    q = np.atleast_2d(np.asarray(query_embs, dtype=np.float64))
    if q.shape[1] != index.table.shape[1]:
        raise ArgumentError(f"Query embedding dim {q.shape[1]} != index dim {index.table.shape[1]}")
    psi = score_arrays(q[:, None, :], index.table[None, :, :], reduction)['psi']
    best_node = np.argmax(psi, axis=1)
    best = psi[np.arange(q.shape[0]), best_node]
    return best, best_node, (best > tau).astype(np.int64)
