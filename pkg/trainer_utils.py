"""
Training and evaluation utilities.
MSE training on on-the-fly triplet batches with warm-up, early stopping and
resumable state; threshold calibration; AUROC, accuracy, Spearman rho, Hit@K
and query-size breakdowns.
"""

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from encoder_utils import (EncoderConfig, encode_batch, encode_graph, encode_nodes, init_params,
                           read_container, save_checkpoint, write_container)
from measure_utils import node_pair_scores, score_arrays, score_pairs, score_tensor
from oracle_utils import Verdict, find_subgraph_isomorphism
from sampler_utils import build_nested_chain, sample_triplet_batch
from shared_utils import (ArgumentError, ConfigError, DEFAULT_SEED, FormatError, SamplerError,
                          TRAIN_DEFAULTS, merge_defaults)
from tensor_utils import AdamState, Tensor, adam_step, backward, multiply, row_mean, stack, subtract

logger = logging.getLogger(__name__)

LOG_HEADER = ['epoch', 'loss', 'val_auroc']
RANK_MODES = ('psi', 'sdr_only', 'compliance_only')
ALIGN_SCORES = {'psi': 'psi', 'sdr_only': 'sdr', 'compliance_only': 'compliance'}
HISTOGRAM_EDGES = np.linspace(-1.0, 1.0, 21)


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    lr: float = TRAIN_DEFAULTS['lr']
    beta1: float = TRAIN_DEFAULTS['beta1']
    beta2: float = TRAIN_DEFAULTS['beta2']
    eps: float = TRAIN_DEFAULTS['eps']
    batch_size: int = TRAIN_DEFAULTS['batch_size']
    iters_per_epoch: int = TRAIN_DEFAULTS['iters_per_epoch']
    warmup_epochs: int = TRAIN_DEFAULTS['warmup_epochs']
    patience: int = TRAIN_DEFAULTS['patience']
    target_pos: float = TRAIN_DEFAULTS['target_pos']
    target_neg: float = TRAIN_DEFAULTS['target_neg']
    max_epochs: int = TRAIN_DEFAULTS['max_epochs']
    max_duration: float = TRAIN_DEFAULTS['max_duration']
    max_failure_rate: float = TRAIN_DEFAULTS['max_failure_rate']
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        for name in ('target_pos', 'target_neg'):
            value = getattr(self, name)
            if not -1.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [-1, 1], got {value}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.iters_per_epoch < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, iters_per_epoch and max_epochs must be >= 1")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.max_duration is not None and self.max_duration <= 0:
            raise ConfigError(f"max_duration must be positive, got {self.max_duration}")
        if not 0.0 <= self.max_failure_rate <= 1.0:
            raise ConfigError(f"max_failure_rate must lie in [0, 1], got {self.max_failure_rate}")

    @classmethod
    def from_dict(cls, values, seed=DEFAULT_SEED):
        return cls(**merge_defaults(TRAIN_DEFAULTS, values, 'train'), seed=int(seed))


@dataclass(frozen=True)
class Threshold:
    tau: float
    accuracy: float

    def to_dict(self):
        return asdict(self)


@dataclass
class MetricsReport:
    auroc: float = None
    accuracy: float = None
    tau: float = None
    pair_count: int = 0
    positives: int = 0
    negatives: int = 0
    spearman_rho: dict = field(default_factory=dict)
    hit_at_k: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    size_buckets: list = field(default_factory=list)
    elapsed: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    params: object
    best_val_auroc: float
    epochs_run: int
    stop_reason: str
    log: list = field(default_factory=list)
    encoder_cfg: object = None
    resumed_from: int = 0


@dataclass
class RankingResult:
    scores: np.ndarray
    order: list
    rho: float
    degenerate: bool


# =============================================================================
# LOSS
# =============================================================================

def mse_loss(scores, targets):
    """Mean squared difference between predicted scores and target labels, as a scalar Tensor."""
    predicted = stack(scores) if isinstance(scores, (list, tuple)) else scores
    targets = np.asarray(targets, dtype=np.float64)
    if predicted.shape != targets.shape or targets.size == 0:
        raise ArgumentError(f"scores {predicted.shape} and targets {targets.shape} must match and be nonempty")
    diff = subtract(predicted, Tensor(targets))
    return row_mean(multiply(diff, diff))


def batch_loss(batch, params, encoder_cfg, train_cfg):
    """psi of (D, Q+) against target_pos and of (D, Q-) against target_neg, averaged over the batch."""
    scores, targets = [], []
    for d, positive, negative in batch.triplets:
        d_vec = encode_graph(d, params, encoder_cfg).vector
        for q, target in ((positive, train_cfg.target_pos), (negative, train_cfg.target_neg)):
            q_vec = encode_graph(q, params, encoder_cfg).vector
            scores.append(score_tensor(q_vec, d_vec, 'psi', encoder_cfg.sdr_reduction))
            targets.append(target)
    return mse_loss(scores, targets)


# =============================================================================
# METRICS
# =============================================================================

def auroc(pos_scores, neg_scores):
    """
    Mann-Whitney AUROC: mean over (p, n) pairs of [p > n] + 0.5 [p = n].

    Average ranks over the pooled scores give the tie credit.
    """
    pos = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise ArgumentError("auroc needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def predict(scores, threshold):
    """1 where score > tau, else 0."""
    tau = threshold.tau if isinstance(threshold, Threshold) else float(threshold)
    return (np.asarray(scores, dtype=np.float64) > tau).astype(np.int64)


def accuracy(scores, labels, threshold):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ArgumentError("accuracy needs at least one labeled score")
    return float(np.mean(predict(scores, threshold) == labels))


def calibrate_threshold(scores, labels):
    """
    Pick tau maximizing accuracy of score > tau on labeled validation scores.

    Candidates are the midpoints between adjacent distinct scores plus the two
    extremes (just below the lowest score, and the highest score); the
    smallest tau wins ties.

    Args:
        scores: validation scores
        labels: 1/0 labels, same length

    Returns:
        Threshold
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if scores.size == 0 or scores.shape != labels.shape:
        raise ArgumentError("calibrate_threshold needs equally long, nonempty scores and labels")
    distinct = np.unique(scores)
    low = max(np.nextafter(distinct[0], -np.inf), np.nextafter(-1.0, 0.0))
    candidates = np.concatenate([[low], (distinct[:-1] + distinct[1:]) / 2.0, [distinct[-1]]])

    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    correct_pos = pos.size - np.searchsorted(pos, candidates, side='right')
    correct_neg = np.searchsorted(neg, candidates, side='right')
    accuracies = (correct_pos + correct_neg) / scores.size
    best = int(np.argmax(accuracies))
    return Threshold(tau=float(candidates[best]), accuracy=float(accuracies[best]))


def spearman_rho(predicted_scores, ground_rank):
    """
    rho = 1 - 6 sum(d^2) / (n (n^2 - 1)) over average ranks.

    Returns 1.0 for fewer than two items.
    """
    predicted = np.asarray(predicted_scores, dtype=np.float64).reshape(-1)
    ground = np.asarray(ground_rank, dtype=np.float64).reshape(-1)
    if predicted.shape != ground.shape:
        raise ArgumentError(f"Length mismatch: {predicted.size} vs {ground.size}")
    n = predicted.size
    if n < 2:
        return 1.0
    d = rankdata(predicted) - rankdata(ground)
    rho = 1.0 - 6.0 * float(np.sum(d * d)) / (n * (n * n - 1))
    return float(np.clip(rho, -1.0, 1.0))


def hit_at_k(pair, mapping, node_scores, k):
    """
    Fraction of query nodes whose mapped data node is among the k best-scored data nodes.

    Data nodes are ranked by score descending, lowest id first on ties.

    Args:
        pair: PairExample (or None) used to check the score matrix shape
        mapping: NodeMapping total over the query's nodes
        node_scores: (|V_Q|, |V_D|) score matrix
        k: cutoff, >= 1

    Returns:
        float in [0, 1]
    """
    scores = np.asarray(node_scores, dtype=np.float64)
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if pair is not None and scores.shape != (pair.query.node_count, pair.data.node_count):
        raise ArgumentError(f"Score matrix {scores.shape} does not fit the pair")
    targets = mapping.targets(scores.shape[0])
    rows = np.arange(scores.shape[0])
    truth = scores[rows, targets][:, None]
    ids = np.arange(scores.shape[1])[None, :]
    ahead = (scores > truth) | ((scores == truth) & (ids < targets[:, None]))
    return float(np.mean(ahead.sum(axis=1) < k))


def _histogram(values):
    counts, _ = np.histogram(values, bins=HISTOGRAM_EDGES)
    return counts.tolist()


def size_bucket_metrics(scores, labels, sizes, edges, threshold):
    """
    AUROC and accuracy per query-size bucket [edges[i], edges[i+1]) with an open last bucket.

    Buckets missing a class report auroc None.
    """
    scores, labels, sizes = (np.asarray(a) for a in (scores, labels, sizes))
    bounds = list(edges) + [None]
    rows = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        inside = (sizes >= lo) & (sizes < hi if hi is not None else True)
        bucket_scores, bucket_labels = scores[inside], labels[inside]
        has_both = bool(np.any(bucket_labels == 1) and np.any(bucket_labels == 0))
        rows.append({
            'min_nodes': int(lo),
            'max_nodes': None if hi is None else int(hi) - 1,
            'count': int(inside.sum()),
            'auroc': auroc(bucket_scores[bucket_labels == 1], bucket_scores[bucket_labels == 0])
            if has_both else None,
            'accuracy': accuracy(bucket_scores, bucket_labels, threshold) if inside.any() else None,
        })
    return rows


# =============================================================================
# PAIR SCORING
# =============================================================================

def score_pair_set(pairs, params, encoder_cfg, threads=1):
    """
    Inference scores for labeled pairs; each distinct graph object is encoded once.

    Returns:
        dict of arrays: label, hinge, compliance, sdr, psi, query_nodes
    """
    if not pairs:
        raise ArgumentError("Pair set is empty")
    graphs, slot = [], {}
    for pair in pairs:
        for g in (pair.query, pair.data):
            if id(g) not in slot:
                slot[id(g)] = len(graphs)
                graphs.append(g)
    vectors = np.stack([e.value for e in encode_batch(graphs, params, encoder_cfg, threads=threads)])
    q_embs = vectors[[slot[id(p.query)] for p in pairs]]
    d_embs = vectors[[slot[id(p.data)] for p in pairs]]
    scores = score_arrays(q_embs, d_embs, encoder_cfg.sdr_reduction)
    scores['label'] = np.array([p.label for p in pairs], dtype=np.int64)
    scores['query_nodes'] = np.array([p.query.node_count for p in pairs], dtype=np.int64)
    return scores


def validation_auroc(pairs, params, encoder_cfg, threads=1):
    scores = score_pair_set(pairs, params, encoder_cfg, threads)
    return auroc(scores['psi'][scores['label'] == 1], scores['psi'][scores['label'] == 0])


def evaluate_pairs(pairs, params, encoder_cfg, threshold, size_edges=(1, 4, 8, 16), threads=1):
    """
    Metrics of a labeled pair set under a calibrated threshold.

    Returns:
        (MetricsReport, per-pair score dict from score_pair_set)
    """
    start = time.perf_counter()
    scores = score_pair_set(pairs, params, encoder_cfg, threads)
    scored = time.perf_counter()
    psi, labels = scores['psi'], scores['label']
    pos, neg = psi[labels == 1], psi[labels == 0]
    report = MetricsReport(
        auroc=auroc(pos, neg) if pos.size and neg.size else None,
        accuracy=accuracy(psi, labels, threshold),
        tau=threshold.tau,
        pair_count=int(labels.size),
        positives=int(pos.size),
        negatives=int(neg.size),
        histograms={'positive': _histogram(pos), 'negative': _histogram(neg),
                    'edges': HISTOGRAM_EDGES.tolist()},
        size_buckets=size_bucket_metrics(psi, labels, scores['query_nodes'], size_edges, threshold),
        elapsed={'scoring_seconds': scored - start},
    )
    return report, scores


# =============================================================================
# RANKING AND ALIGNMENT
# =============================================================================

def rank_queries(d, chain, params, encoder_cfg, mode='psi'):
    """
    Score every chain member against d and correlate with the nesting order.

    Ground truth: larger queries rank closer to d (node count descending).

    Returns:
        RankingResult; chains shorter than 2 report rho 1.0 with degenerate=True
    """
    if mode not in RANK_MODES:
        raise ArgumentError(f"Unknown ranking mode: {mode}")
    if not chain:
        raise ArgumentError("Chain is empty")
    embs = encode_batch([d] + list(chain), params, encoder_cfg)
    d_vec = embs[0].value
    q_vecs = np.stack([e.value for e in embs[1:]])
    scores = score_pairs(q_vecs, d_vec[None, :], mode, encoder_cfg.sdr_reduction)
    order = np.argsort(-scores, kind='stable').tolist()
    sizes = [q.node_count for q in chain]
    degenerate = len(chain) < 2
    rho = 1.0 if degenerate else spearman_rho(scores, sizes)
    return RankingResult(scores=scores, order=order, rho=rho, degenerate=degenerate)


def _summary(values):
    if not values:
        return {'count': 0, 'median': None, 'min': None, 'max': None}
    array = np.asarray(values, dtype=np.float64)
    return {'count': int(array.size), 'median': float(np.median(array)),
            'min': float(array.min()), 'max': float(array.max())}


def evaluate_rankings(graphs, params, encoder_cfg, sampler_cfg, chain_length, num_chains, seed,
                      modes=RANK_MODES):
    """
    Nested-chain ranking study over `num_chains` graphs (cycled if fewer).

    Returns:
        (summary {mode: {count, median, min, max}}, rows [(graph, mode, rho, length, degenerate)])
    """
    if not graphs:
        raise ArgumentError("No graphs to build chains from")
    streams = np.random.SeedSequence(seed).spawn(num_chains)
    rhos = {mode: [] for mode in modes}
    rows = []
    for i, stream in enumerate(streams):
        g_idx = i % len(graphs)
        chain = build_nested_chain(graphs[g_idx], chain_length, sampler_cfg, np.random.default_rng(stream))
        for mode in modes:
            result = rank_queries(graphs[g_idx], chain, params, encoder_cfg, mode)
            rows.append((g_idx, mode, result.rho, len(chain), result.degenerate))
            if not result.degenerate:
                rhos[mode].append(result.rho)
    return {mode: _summary(values) for mode, values in rhos.items()}, rows


def evaluate_alignment(pairs, params, encoder_cfg, ks=(1, 3), mode='sdr_only', timeout=1.0):
    """
    Average Hit@K of the node-level scorer over positive pairs.

    The oracle's mapping is the ground truth; pairs it cannot match are skipped.

    Returns:
        ({k: mean hit}, number of pairs used, number skipped)
    """
    if mode not in ALIGN_SCORES:
        raise ArgumentError(f"Unknown alignment mode: {mode}")
    hits = {int(k): [] for k in ks}
    skipped = 0
    for pair in pairs:
        if pair.label != 1:
            continue
        outcome = find_subgraph_isomorphism(pair.query, pair.data, timeout)
        if outcome.verdict is not Verdict.MATCH:
            logger.warning("Positive pair has no oracle match (%s); skipping", outcome.verdict.value)
            skipped += 1
            continue
        q_nodes = encode_nodes(pair.query, params, encoder_cfg, inference=True)
        d_nodes = encode_nodes(pair.data, params, encoder_cfg, inference=True)
        matrix = node_pair_scores(q_nodes, d_nodes, encoder_cfg.sdr_reduction)[ALIGN_SCORES[mode]]
        for k in hits:
            hits[k].append(hit_at_k(pair, outcome.mapping, matrix, k))
    used = len(next(iter(hits.values()))) if hits else 0
    return {k: (float(np.mean(v)) if v else None) for k, v in hits.items()}, used, skipped


# =============================================================================
# TRAINING
# =============================================================================

def save_training_state(path, params, encoder_cfg, adam, epoch, best_arrays, best_auroc, since_best):
    """Checkpoint plus optimizer moments and early-stopping bookkeeping, for resuming."""
    arrays = params.store.arrays()
    for name in params.store.names():
        arrays[f'adam.m.{name}'] = adam.m.get(name, np.zeros_like(arrays[name]))
        arrays[f'adam.v.{name}'] = adam.v.get(name, np.zeros_like(arrays[name]))
        if best_arrays is not None:
            arrays[f'best.{name}'] = best_arrays[name]
    header = {'kind': 'training_state', 'encoder': encoder_cfg.to_dict(),
              'label_alphabet_size': params.label_alphabet_size, 'epoch': epoch,
              'adam_step': adam.step, 'best_auroc': best_auroc, 'since_best': since_best}
    return write_container(path, arrays, header)


def load_training_state(path, train_cfg):
    arrays, header = read_container(path)
    if header.get('kind') != 'training_state':
        raise FormatError(f"{path}: not a training state")
    encoder_cfg = EncoderConfig.from_dict(header['encoder'])
    params = init_params(encoder_cfg, header['label_alphabet_size'], seed=0)
    names = params.store.names()
    params.store.load_arrays({name: arrays[name] for name in names})
    adam = AdamState(lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2,
                     eps=train_cfg.eps, step=header['adam_step'])
    adam.m = {name: arrays[f'adam.m.{name}'].copy() for name in names}
    adam.v = {name: arrays[f'adam.v.{name}'].copy() for name in names}
    best = {name: arrays[f'best.{name}'] for name in names} if f'best.{names[0]}' in arrays else None
    return (params, encoder_cfg, adam, header['epoch'], best, header['best_auroc'],
            header['since_best'])


def write_train_log(path, rows):
    """CSV with columns epoch, loss, val_auroc (blank during warm-up)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(LOG_HEADER)
        for epoch, loss, val in rows:
            writer.writerow([epoch, repr(float(loss)), '' if val is None else repr(float(val))])
    return path


def read_train_log(path):
    """Rows of a train log as (epoch, loss, val_auroc or None); empty if the file is missing."""
    path = Path(path)
    if not path.is_file():
        return []
    try:
        with path.open(newline='') as handle:
            return [(int(r['epoch']), float(r['loss']), float(r['val_auroc']) if r['val_auroc'] else None)
                    for r in csv.DictReader(handle)]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed train log: {e}") from e


def train(corpus, train_indices, val_pairs, train_cfg, encoder_cfg, sampler_cfg,
          params=None, state_path=None, resume=False, threads=1, log_path=None):
    """
    MSE training of the encoder on on-the-fly triplet batches.

    After `warmup_epochs`, validation AUROC is computed every epoch; the best
    parameters are kept and training stops after `patience` validations
    without improvement, after `max_epochs`, or once `max_duration` seconds
    have elapsed.

    Args:
        corpus: GraphDataset the triplets are walked from
        train_indices: corpus indices usable for training
        val_pairs: fixed list of labeled PairExample for validation
        train_cfg: TrainConfig
        encoder_cfg: EncoderConfig
        sampler_cfg: SamplerConfig
        params: initial EncoderParams (default: fresh init from train_cfg.seed)
        state_path: where to write the resumable training state after each epoch
        resume: continue from the state at state_path; the encoder config
            stored in the state replaces `encoder_cfg`
        threads: sampler worker count
        log_path: train log CSV rewritten after every epoch, before the state;
            on resume its rows past the restored epoch are dropped

    Returns:
        TrainResult holding the best parameters and the encoder config they fit
    """
    adam = AdamState(lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps)
    first_epoch, best_arrays, best_auroc, since_best, done = 1, None, None, 0, 0
    log = []
    if resume:
        if state_path is None or not Path(state_path).is_file():
            raise ArgumentError(f"No training state to resume from at {state_path}")
        params, restored_cfg, adam, done, best_arrays, best_auroc, since_best = \
            load_training_state(state_path, train_cfg)
        if restored_cfg != encoder_cfg:
            logger.warning("Resuming with the stored encoder config %s, not %s", restored_cfg, encoder_cfg)
        encoder_cfg = restored_cfg
        first_epoch = done + 1
        if log_path is not None:
            log = [row for row in read_train_log(log_path) if row[0] <= done]
        logger.info("Resuming after epoch %d", done)
    elif params is None:
        params = init_params(encoder_cfg, corpus.label_alphabet_size, train_cfg.seed)
    if params.label_alphabet_size != corpus.label_alphabet_size:
        raise ArgumentError(f"Model alphabet {params.label_alphabet_size} != corpus alphabet "
                            f"{corpus.label_alphabet_size}")

    start = time.perf_counter()
    stop_reason, epoch = 'max_epochs', first_epoch - 1
    for epoch in range(first_epoch, train_cfg.max_epochs + 1):
        losses = []
        for it in range(train_cfg.iters_per_epoch):
            batch = sample_triplet_batch(corpus, train_indices, sampler_cfg, train_cfg.batch_size,
                                         np.random.SeedSequence([train_cfg.seed, epoch, it]), threads)
            if batch.failure_rate > train_cfg.max_failure_rate:
                raise SamplerError(
                    f"Epoch {epoch} iteration {it}: {batch.failures} of {batch.requested} triplets "
                    f"failed (limit {train_cfg.max_failure_rate:.0%}); the corpus may lack negatives")
            if not len(batch):
                continue
            loss = batch_loss(batch, params, encoder_cfg, train_cfg)
            backward(loss, params.store)
            adam_step(params.store, adam)
            losses.append(loss.item())
            logger.debug("epoch %d iter %d loss %.6f", epoch, it, losses[-1])

        val = None
        if epoch > train_cfg.warmup_epochs:
            val = validation_auroc(val_pairs, params, encoder_cfg, threads)
            if best_auroc is None or val > best_auroc:
                best_auroc, best_arrays, since_best = val, params.store.arrays(), 0
            else:
                since_best += 1
        mean_loss = float(np.mean(losses)) if losses else float('nan')
        log.append((epoch, mean_loss, val))
        logger.info("epoch %d loss %.6f val_auroc %s", epoch, mean_loss,
                    'n/a' if val is None else f"{val:.4f}")
        if log_path is not None:
            write_train_log(log_path, log)
        if state_path is not None:
            save_training_state(state_path, params, encoder_cfg, adam, epoch, best_arrays,
                                best_auroc, since_best)

        if since_best >= train_cfg.patience:
            stop_reason = 'patience'
            break
        if train_cfg.max_duration is not None and time.perf_counter() - start > train_cfg.max_duration:
            stop_reason = 'max_duration'
            logger.info("Stopping after %.1fs (max_duration %.1fs)", time.perf_counter() - start,
                        train_cfg.max_duration)
            break

    if best_arrays is None:
        # never reached validation: keep the final parameters
        best_auroc = validation_auroc(val_pairs, params, encoder_cfg, threads) if val_pairs else None
    else:
        params.store.load_arrays(best_arrays)
    return TrainResult(params=params, best_val_auroc=best_auroc, epochs_run=epoch,
                       stop_reason=stop_reason, log=log, encoder_cfg=encoder_cfg, resumed_from=done)


def save_model(path, result, encoder_cfg, threshold, label_map=None):
    """Best parameters, the calibrated threshold and the label alphabet in one checkpoint."""
    extra = {'label_map': list(label_map or range(result.params.label_alphabet_size)),
             'tau': threshold.tau, 'calibration_accuracy': threshold.accuracy,
             'best_val_auroc': result.best_val_auroc}
    return save_checkpoint(path, result.params, encoder_cfg, extra)
