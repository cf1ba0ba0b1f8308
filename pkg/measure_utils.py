"""
Containment similarity measure.
Hinge distance, compliance = exp(-hinge), the similarity dominance ratio
(intersection mass over data mass minus normalized excess mass) and their
product psi. Plain numpy versions for scoring and Tensor versions for training.
"""

from dataclasses import dataclass

import numpy as np

from shared_utils import ArgumentError, DIVISOR_FLOOR, NumericDomainError
from tensor_utils import (Tensor, divide, elementwise_max, elementwise_min, exp, multiply,
                          negate, positive_part, row_mean, row_sum, subtract)

SCORE_MODES = ('psi', 'sdr_only', 'compliance_only', 'hinge')


@dataclass(frozen=True)
class ScoreBreakdown:
    hinge: float
    compliance: float
    inter_mass: float
    data_mass: float
    convex_mass: float
    sdr: float
    psi: float

    def score(self, mode='psi'):
        """Scalar used for ranking under a scorer mode (higher = more contained)."""
        if mode == 'psi':
            return self.psi
        if mode == 'sdr_only':
            return self.sdr
        if mode == 'compliance_only':
            return self.compliance
        if mode == 'hinge':
            return -self.hinge
        raise ArgumentError(f"Unknown score mode: {mode}")


def _pair(q_emb, d_emb):
    q = np.asarray(q_emb, dtype=np.float64)
    d = np.asarray(d_emb, dtype=np.float64)
    if q.shape != d.shape:
        raise ArgumentError(f"Embedding shapes differ: {q.shape} vs {d.shape}")
    return q, d


def _check_floor(*arrays):
    for array in arrays:
        if np.any(array < DIVISOR_FLOOR):
            raise NumericDomainError(f"Embedding coordinate below {DIVISOR_FLOOR}; clamp upstream")


# =============================================================================
# SCALAR MEASURE
# =============================================================================

def hinge_distance(q_emb, d_emb):
    """Total containment violation: sum over dimensions of max(0, q - d)."""
    q, d = _pair(q_emb, d_emb)
    return float(np.maximum(q - d, 0.0).sum(axis=-1))


def compliance(q_emb, d_emb):
    """exp(-hinge), in (0, 1]; 1 exactly when q <= d elementwise."""
    return float(np.exp(-hinge_distance(q_emb, d_emb)))


def sdr(q_emb, d_emb, reduction='aggregate'):
    """
    Similarity dominance ratio, in (-1, 1].

    Args:
        q_emb, d_emb: positive embedding vectors of equal length
        reduction: 'aggregate' (mass form) or 'elementwise' (per-dimension ratio, then mean)

    Returns:
        float
    """
    q, d = _pair(q_emb, d_emb)
    return float(score_arrays(q, d, reduction)['sdr'])


def psi(q_emb, d_emb, reduction='aggregate'):
    """
    Full score breakdown; psi = compliance * sdr.

    Returns:
        ScoreBreakdown
    """
    q, d = _pair(q_emb, d_emb)
    scores = score_arrays(q, d, reduction)
    return ScoreBreakdown(**{key: float(value) for key, value in scores.items()})


# =============================================================================
# VECTORISED SCORING
# =============================================================================

def score_arrays(q_embs, d_embs, reduction='aggregate'):
    """
    Score many pairs at once.

    Args:
        q_embs, d_embs: arrays of shape (..., d), broadcast against each other

    Returns:
        dict of arrays keyed like ScoreBreakdown's fields
    """
    q, d = np.broadcast_arrays(np.asarray(q_embs, dtype=np.float64),
                               np.asarray(d_embs, dtype=np.float64))
    _check_floor(q, d)
    hinge = np.maximum(q - d, 0.0).sum(axis=-1)
    comp = np.exp(-hinge)
    inter, convex = np.minimum(q, d), np.maximum(q, d)
    inter_mass, data_mass, convex_mass = inter.sum(axis=-1), d.sum(axis=-1), convex.sum(axis=-1)
    if reduction == 'aggregate':
        ratio = inter_mass / data_mass - (convex_mass - data_mass) / convex_mass
    elif reduction == 'elementwise':
        ratio = np.mean(inter / d - (convex - d) / convex, axis=-1)
    else:
        raise ArgumentError(f"Unknown sdr reduction: {reduction}")
    return {'hinge': hinge, 'compliance': comp, 'inter_mass': inter_mass,
            'data_mass': data_mass, 'convex_mass': convex_mass, 'sdr': ratio,
            'psi': comp * ratio}


def score_pairs(q_embs, d_embs, mode='psi', reduction='aggregate'):
    """Vector of ranking scores for many pairs under one scorer mode."""
    if mode not in SCORE_MODES:
        raise ArgumentError(f"Unknown score mode: {mode}")
    scores = score_arrays(q_embs, d_embs, reduction)
    if mode == 'psi':
        return scores['psi']
    if mode == 'sdr_only':
        return scores['sdr']
    if mode == 'compliance_only':
        return scores['compliance']
    return -scores['hinge']


def node_pair_scores(q_nodes, d_nodes, reduction='aggregate'):
    """
    Node-level measure between every query node and every data node.

    Args:
        q_nodes, d_nodes: NodeEmbeddings (clamped summaries) or (n, d) arrays

    Returns:
        dict of (|V_Q|, |V_D|) arrays: hinge, compliance, sdr, psi
    """
    q = q_nodes.summary.value if hasattr(q_nodes, 'summary') else np.asarray(q_nodes)
    d = d_nodes.summary.value if hasattr(d_nodes, 'summary') else np.asarray(d_nodes)
    if q.ndim != 2 or d.ndim != 2 or q.shape[1] != d.shape[1]:
        raise ArgumentError(f"Node summaries must be (n, d) with equal d, got {q.shape} and {d.shape}")
    return score_arrays(q[:, None, :], d[None, :, :], reduction)


def breakdown_matrix(scores):
    """Expand node_pair_scores output into a |V_Q| x |V_D| nested list of ScoreBreakdown."""
    rows, cols = scores['psi'].shape
    return [[ScoreBreakdown(**{key: float(scores[key][i, j]) for key in scores})
             for j in range(cols)] for i in range(rows)]


# =============================================================================
# DIFFERENTIABLE MEASURE
# =============================================================================

def psi_tensor(q_vec, d_vec, reduction='aggregate'):
    """
    psi on Tensors, recorded for backward.

    Args:
        q_vec, d_vec: Tensors of shape (d,), clamped positive

    Returns:
        dict of scalar Tensors: hinge, compliance, sdr, psi
    """
    if q_vec.shape != d_vec.shape:
        raise ArgumentError(f"Embedding shapes differ: {q_vec.shape} vs {d_vec.shape}")
    hinge = row_sum(positive_part(subtract(q_vec, d_vec)))
    comp = exp(negate(hinge))
    inter = elementwise_min(q_vec, d_vec)
    convex = elementwise_max(q_vec, d_vec)
    if reduction == 'aggregate':
        data_mass = row_sum(d_vec)
        convex_mass = row_sum(convex)
        ratio = subtract(divide(row_sum(inter), data_mass),
                         divide(subtract(convex_mass, data_mass), convex_mass))
    elif reduction == 'elementwise':
        ratio = row_mean(subtract(divide(inter, d_vec), divide(subtract(convex, d_vec), convex)))
    else:
        raise ArgumentError(f"Unknown sdr reduction: {reduction}")
    return {'hinge': hinge, 'compliance': comp, 'sdr': ratio, 'psi': multiply(comp, ratio)}


def score_tensor(q_vec, d_vec, mode='psi', reduction='aggregate'):
    """Differentiable scalar score under a scorer mode."""
    parts = psi_tensor(q_vec, d_vec, reduction)
    if mode == 'psi':
        return parts['psi']
    if mode == 'sdr_only':
        return parts['sdr']
    if mode == 'compliance_only':
        return parts['compliance']
    if mode == 'hinge':
        return negate(parts['hinge'])
    raise ArgumentError(f"Unknown score mode: {mode}")


def as_vector(embedding):
    """Accept a GraphEmbedding, Tensor or array and return a Tensor."""
    if hasattr(embedding, 'vector'):
        return embedding.vector
    return embedding if isinstance(embedding, Tensor) else Tensor(embedding)
