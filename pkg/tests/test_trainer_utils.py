import numpy as np
import pytest

from encoder_utils import EncoderConfig, encode_graph, init_params, load_checkpoint
from graph_utils import GraphDataset, make_graph
from oracle_utils import NodeMapping, Verdict, find_subgraph_isomorphism
from sampler_utils import (PairExample, SamplerConfig, build_nested_chain, build_pair_set, build_split,
                           generate_synthetic_corpus, random_walk_sample, sample_positive, sample_triplet_batch)
from shared_utils import ArgumentError, ConfigError, SamplerError
from tensor_utils import AdamState, Tensor, adam_step, backward
from trainer_utils import (Threshold, TrainConfig, TrainResult, accuracy, auroc, batch_loss, calibrate_threshold,
                           evaluate_alignment, evaluate_pairs, evaluate_rankings, hit_at_k, mse_loss, predict,
                           rank_queries, read_train_log, save_model, score_pair_set, size_bucket_metrics, spearman_rho,
                           train, validation_auroc, write_train_log)

SMALL = EncoderConfig(num_layers=2, hidden_dim=8, out_dim=4)
SAMPLER = SamplerConfig(data_walk_range=(4, 8), query_fraction_range=(0.3, 0.6), negative_retry_cap=50)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(16, 4, (6, 10), separable=True, seed=1)


@pytest.fixture(scope="module")
def split(corpus):
    return build_split(corpus, seed=0)


@pytest.fixture(scope="module")
def val_pairs(corpus, split):
    return build_pair_set(corpus, split[1] + split[2], 6, SAMPLER, seed=[7, 1])


def tiny_train_cfg(**overrides):
    values = dict(lr=1e-2, batch_size=3, iters_per_epoch=2, warmup_epochs=0, max_epochs=2, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


# =============================================================================
# LOSS
# =============================================================================

def test_mse_examples():
    assert mse_loss([Tensor(0.5)], [1.0]).item() == pytest.approx(0.25)
    assert mse_loss([Tensor(0.3)], [0.3]).item() == 0.0
    assert mse_loss([Tensor(0.5), Tensor(-0.5)], [1.0, -1.0]).item() == pytest.approx(0.25)


def test_mse_rejects_mismatched_targets():
    with pytest.raises(ArgumentError):
        mse_loss([Tensor(0.5)], [1.0, -1.0])


@pytest.mark.parametrize("values", [
    {'target_pos': 1.5},
    {'target_neg': -1.5},
    {'patience': 0},
    {'lr': -1.0},
    {'max_duration': 0},
    {'max_failure_rate': 2.0},
    {'momentum': 0.9},
])
def test_train_config_rejects_invalid_values(values):
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(values)


# =============================================================================
# METRICS
# =============================================================================

def test_calibrate_separable_scores():
    threshold = calibrate_threshold([0.9, 0.7, 0.2, 0.4], [1, 1, 0, 0])
    assert threshold.tau == pytest.approx(0.55)
    assert threshold.accuracy == 1.0


def test_calibrate_interleaved_scores_picks_smallest_candidate():
    threshold = calibrate_threshold([0.1, 0.2, 0.3, 0.4], [1, 0, 1, 0])
    assert threshold.accuracy == 0.5
    assert threshold.tau < 0.1


def test_calibrate_single_pair_returns_the_midpoint():
    threshold = calibrate_threshold([0.8, 0.3], [1, 0])
    assert threshold.tau == pytest.approx(0.55)
    assert threshold.accuracy == 1.0


def test_calibrated_accuracy_matches_exhaustive_sweep(rng):
    for _ in range(50):
        scores = np.round(rng.uniform(-0.9, 1.0, size=30), 1)
        labels = rng.integers(2, size=30)
        threshold = calibrate_threshold(scores, labels)
        grid = np.concatenate([[-1.0], scores])
        best = max(accuracy(scores, labels, tau) for tau in grid)
        assert threshold.accuracy == pytest.approx(best)
        assert accuracy(scores, labels, threshold) == pytest.approx(threshold.accuracy)


def test_calibrate_rejects_empty_input():
    with pytest.raises(ArgumentError):
        calibrate_threshold([], [])


def test_predict_is_strictly_greater():
    assert predict([0.5, 0.6], Threshold(0.5, 1.0)).tolist() == [0, 1]


@pytest.mark.parametrize("pos, neg, expected", [
    ([0.9, 0.8], [0.1, 0.2], 1.0),
    ([0.8, 0.2], [0.6, 0.4], 0.5),
    ([0.5], [0.5], 0.5),
])
def test_auroc_examples(pos, neg, expected):
    assert auroc(pos, neg) == pytest.approx(expected)


def test_auroc_is_invariant_under_increasing_transforms(rng):
    pos, neg = rng.normal(0.5, 1.0, 40), rng.normal(0.0, 1.0, 60)
    assert auroc(np.exp(3 * pos), np.exp(3 * neg)) == pytest.approx(auroc(pos, neg))


def test_auroc_needs_both_classes():
    with pytest.raises(ArgumentError):
        auroc([0.4], [])


@pytest.mark.parametrize("predicted, truth, expected", [
    ([1, 2, 3], [1, 2, 3], 1.0),
    ([3, 2, 1], [1, 2, 3], -1.0),
    ([1, 2, 3], [1, 3, 2], 0.5),
    ([0.3, 0.7], [2, 1], -1.0),
    ([0.4], [1], 1.0),
])
def test_spearman_examples(predicted, truth, expected):
    assert spearman_rho(predicted, truth) == pytest.approx(expected)


def test_hit_at_k_identity_pair():
    scores = np.eye(4) + 0.1
    assert hit_at_k(None, NodeMapping.from_targets(range(4)), scores, 1) == 1.0


def test_hit_at_k_constant_scores_fall_back_to_node_ids():
    scores = np.ones((4, 4))
    mapping = NodeMapping.from_targets([2, 0, 3, 1])
    assert hit_at_k(None, mapping, scores, 2) == 0.5
    assert hit_at_k(None, mapping, scores, 4) == 1.0


def test_hit_at_k_is_monotone_in_k(rng):
    scores = rng.normal(size=(5, 9))
    mapping = NodeMapping.from_targets(rng.permutation(9)[:5])
    hits = [hit_at_k(None, mapping, scores, k) for k in range(1, 10)]
    assert all(a <= b for a, b in zip(hits, hits[1:]))
    assert hits[-1] == 1.0


def test_hit_at_k_rejects_bad_k():
    with pytest.raises(ArgumentError):
        hit_at_k(None, NodeMapping.from_targets([0]), np.ones((1, 2)), 0)


def test_size_buckets():
    rows = size_bucket_metrics([0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0], [2, 2, 10, 20], [1, 4, 8], 0.5)
    assert [row['count'] for row in rows] == [2, 0, 2]
    assert [row['auroc'] for row in rows] == [1.0, None, 1.0]
    assert rows[1]['accuracy'] is None
    assert rows[2]['max_nodes'] is None


# =============================================================================
# RANKING AND ALIGNMENT
# =============================================================================

def test_rank_single_query_chain_is_degenerate():
    params = init_params(SMALL, 3, seed=1)
    d = make_graph([0, 1, 2, 1], [(0, 1), (1, 2), (2, 3)])
    result = rank_queries(d, [make_graph([1])], params, SMALL)
    assert result.rho == 1.0
    assert result.degenerate
    with pytest.raises(ArgumentError):
        rank_queries(d, [make_graph([1])], params, SMALL, mode='hinge')


def test_rank_scores_follow_the_measure(rng):
    params = init_params(SMALL, 3, seed=1)
    d = make_graph([0, 1, 2, 1, 0, 2], [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
    chain = build_nested_chain(d, 3, SAMPLER, rng)
    result = rank_queries(d, chain, params, SMALL, mode='compliance_only')
    assert len(result.scores) == 3
    assert sorted(result.order) == [0, 1, 2]
    assert np.all(result.scores[result.order[:-1]] >= result.scores[result.order[1:]])
    assert -1.0 <= result.rho <= 1.0


def test_evaluate_rankings_rows_and_summary(corpus):
    params = init_params(SMALL, corpus.label_alphabet_size, seed=2)
    summary, rows = evaluate_rankings(corpus.graphs[:3], params, SMALL, SAMPLER, 4, 5, seed=11)
    assert set(summary) == {'psi', 'sdr_only', 'compliance_only'}
    assert len(rows) == 15
    assert all(s['count'] == 5 for s in summary.values())
    again, _ = evaluate_rankings(corpus.graphs[:3], params, SMALL, SAMPLER, 4, 5, seed=11)
    assert again == summary


def test_alignment_hits_are_fractions(corpus, val_pairs):
    params = init_params(SMALL, corpus.label_alphabet_size, seed=2)
    hits, used, skipped = evaluate_alignment(val_pairs, params, SMALL, ks=(1, 3))
    assert used == sum(p.label for p in val_pairs)
    assert skipped == 0
    assert all(0.0 <= hits[k] <= 1.0 for k in (1, 3))
    assert hits[1] <= hits[3]


# =============================================================================
# TRAINING
# =============================================================================

def test_zero_learning_rate_keeps_initial_params(corpus, split, val_pairs):
    result = train(corpus, split[0], val_pairs, tiny_train_cfg(lr=0.0), SMALL, SAMPLER)
    initial = init_params(SMALL, corpus.label_alphabet_size, seed=3)
    for name, value in initial.store.arrays().items():
        assert np.array_equal(result.params.store[name].value, value)
    assert result.epochs_run == 2
    assert [row[0] for row in result.log] == [1, 2]


def test_training_is_deterministic(corpus, split, val_pairs):
    first = train(corpus, split[0], val_pairs, tiny_train_cfg(), SMALL, SAMPLER)
    second = train(corpus, split[0], val_pairs, tiny_train_cfg(), SMALL, SAMPLER, threads=3)
    assert first.log == second.log
    assert first.best_val_auroc == second.best_val_auroc


def test_loss_on_a_fixed_batch_decreases(corpus, split):
    batch = sample_triplet_batch(corpus, split[0], SAMPLER, 4, seed=5)
    params = init_params(SMALL, corpus.label_alphabet_size, seed=4)
    cfg, adam = tiny_train_cfg(), AdamState(lr=1e-3)
    losses = []
    for _ in range(10):
        loss = batch_loss(batch, params, SMALL, cfg)
        backward(loss, params.store)
        adam_step(params.store, adam)
        losses.append(loss.item())
    assert losses[-1] < losses[0]


def test_resumed_training_matches_an_uninterrupted_run(tmp_path, corpus, split, val_pairs):
    straight = train(corpus, split[0], val_pairs, tiny_train_cfg(max_epochs=3), SMALL, SAMPLER)
    state = tmp_path / "state.bin"
    train(corpus, split[0], val_pairs, tiny_train_cfg(max_epochs=2), SMALL, SAMPLER, state_path=state)
    resumed = train(corpus, split[0], val_pairs, tiny_train_cfg(max_epochs=3), SMALL, SAMPLER,
                    state_path=state, resume=True)
    assert [row[0] for row in resumed.log] == [3]
    assert resumed.log[0] == straight.log[-1]
    for name, value in straight.params.store.arrays().items():
        assert np.array_equal(resumed.params.store[name].value, value)


def test_resume_drops_log_rows_past_the_restored_epoch(tmp_path, corpus, split, val_pairs):
    straight = train(corpus, split[0], val_pairs, tiny_train_cfg(max_epochs=3), SMALL, SAMPLER)
    state, log_path = tmp_path / "state.bin", tmp_path / "train_log.csv"
    train(corpus, split[0], val_pairs, tiny_train_cfg(max_epochs=2), SMALL, SAMPLER,
          state_path=state, log_path=log_path)
    assert [row[0] for row in read_train_log(log_path)] == [1, 2]

    # a run killed after logging epochs the state never reached
    write_train_log(log_path, read_train_log(log_path) + [(3, 9.0, 0.1), (4, 9.0, 0.1)])
    resumed = train(corpus, split[0], val_pairs, tiny_train_cfg(max_epochs=3), SMALL, SAMPLER,
                    state_path=state, resume=True, log_path=log_path)
    assert resumed.resumed_from == 2
    assert read_train_log(log_path) == resumed.log == straight.log


def test_resume_uses_the_stored_encoder_config(tmp_path, corpus, split, val_pairs):
    state = tmp_path / "state.bin"
    train(corpus, split[0], val_pairs, tiny_train_cfg(max_epochs=1), SMALL, SAMPLER, state_path=state)
    other = EncoderConfig(num_layers=3, hidden_dim=6, out_dim=3)
    resumed = train(corpus, split[0], val_pairs, tiny_train_cfg(max_epochs=2), other, SAMPLER,
                    state_path=state, resume=True)
    assert resumed.encoder_cfg == SMALL

    path = save_model(tmp_path / "model.ckpt", resumed, resumed.encoder_cfg, Threshold(0.0, 1.0))
    loaded, cfg, _ = load_checkpoint(path)
    assert cfg == SMALL
    assert encode_graph(corpus[0], loaded, cfg).value.shape == (SMALL.out_dim,)


def test_read_train_log_of_missing_file_is_empty(tmp_path):
    assert read_train_log(tmp_path / "none.csv") == []


def test_resume_without_state_fails(tmp_path, corpus, split, val_pairs):
    with pytest.raises(ArgumentError):
        train(corpus, split[0], val_pairs, tiny_train_cfg(), SMALL, SAMPLER,
              state_path=tmp_path / "missing.bin", resume=True)


def test_corpus_without_negatives_aborts():
    g = make_graph([0] * 5, [(i, i + 1) for i in range(4)])
    corpus = GraphDataset([g] * 4, 1, 'same')
    sampler = SamplerConfig(data_walk_range=(3, 5), negative_retry_cap=2)
    with pytest.raises(SamplerError):
        train(corpus, [0, 1, 2, 3], [], tiny_train_cfg(), SMALL, sampler)


def test_evaluate_and_save_model(tmp_path, corpus, val_pairs):
    params = init_params(SMALL, corpus.label_alphabet_size, seed=6)
    report, scores = evaluate_pairs(val_pairs, params, SMALL, Threshold(0.0, 1.0), size_edges=(1, 3))
    assert report.pair_count == len(val_pairs) == report.positives + report.negatives
    assert sum(report.histograms['positive']) == report.positives
    assert sum(row['count'] for row in report.size_buckets) == report.pair_count
    assert report.auroc == pytest.approx(validation_auroc(val_pairs, params, SMALL))
    assert scores["psi"][0] == pytest.approx(scores["compliance"][0] * scores["sdr"][0])

    result = TrainResult(params=params, best_val_auroc=report.auroc, epochs_run=0, stop_reason='max_epochs')
    path = save_model(tmp_path / "model.ckpt", result, SMALL, Threshold(0.125, 0.75), label_map=[1, 3, 5, 7])
    loaded, cfg, extra = load_checkpoint(path)
    assert extra['tau'] == 0.125
    assert extra['label_map'] == [1, 3, 5, 7]
    assert np.array_equal(encode_graph(corpus[0], loaded, cfg).value, encode_graph(corpus[0], params, SMALL).value)


def test_train_log_format(tmp_path):
    path = write_train_log(tmp_path / "train_log.csv", [(1, 0.5, None), (2, 0.25, 0.75)])
    assert path.read_text() == "epoch,loss,val_auroc\n1,0.5,\n2,0.25,0.75\n"


# =============================================================================
# DESK-SCALE RUNS
# =============================================================================

def opposite_half_pairs(corpus, indices, count, cfg, rng):
    """Positives walked inside D; negatives walked inside a graph from the other label half."""
    lo, hi = cfg.data_walk_range
    pairs = []
    for i in range(count):
        d_idx = int(indices[i % len(indices)])
        d = random_walk_sample(corpus[d_idx], int(rng.integers(lo, hi + 1)), rng)
        pairs.append(PairExample(sample_positive(d, cfg, rng), d, 1, 'positive'))
        others = [j for j in range(len(corpus)) if (j - d_idx) % 2]
        source = corpus[others[int(rng.integers(len(others)))]]
        negative = random_walk_sample(source, pairs[-1].query.node_count, rng)
        assert find_subgraph_isomorphism(negative, d).verdict is Verdict.NO_MATCH
        pairs.append(PairExample(negative, d, 0, 'negative'))
    return pairs


@pytest.mark.slow
def test_separable_corpus_reaches_high_validation_auroc():
    corpus = generate_synthetic_corpus(40, 4, (8, 14), separable=True, seed=21)
    train_idx, val_idx, test_idx = build_split(corpus, seed=21)
    sampler = SamplerConfig(data_walk_range=(6, 12), negative_retry_cap=50)
    val = opposite_half_pairs(corpus, val_idx + test_idx, 24, sampler, np.random.default_rng(21))
    cfg = TrainConfig(lr=1e-2, batch_size=8, iters_per_epoch=10, warmup_epochs=0, max_epochs=5, seed=21)
    encoder = EncoderConfig(num_layers=2, hidden_dim=16, out_dim=8)
    result = train(corpus, train_idx, val, cfg, encoder, sampler)
    assert result.epochs_run <= 5
    assert result.best_val_auroc >= 0.95


@pytest.mark.slow
def test_desk_scale_training_and_ranking_direction():
    corpus = generate_synthetic_corpus(200, 3, (20, 40), seed=5)
    train_idx, val_idx, test_idx = build_split(corpus, seed=5)
    sampler = SamplerConfig()
    val = build_pair_set(corpus, val_idx, 48, sampler, seed=[5, 1])
    test = build_pair_set(corpus, test_idx, 96, sampler, seed=[5, 2])
    cfg = TrainConfig(lr=5e-3, batch_size=16, iters_per_epoch=10, warmup_epochs=1, patience=5,
                      max_epochs=30, max_duration=240.0, seed=5)

    test_auroc, models = {}, {}
    for mode in ('gru', 'sum_ablation'):
        encoder = EncoderConfig(num_layers=3, hidden_dim=32, out_dim=16, combine_mode=mode)
        result = train(corpus, train_idx, val, cfg, encoder, sampler)
        scores = score_pair_set(val, result.params, encoder)
        threshold = calibrate_threshold(scores['psi'], scores['label'])
        report, _ = evaluate_pairs(test, result.params, encoder, threshold)
        test_auroc[mode], models[mode] = report.auroc, (result.params, encoder)
    assert test_auroc['gru'] >= 0.85
    assert test_auroc['gru'] >= test_auroc['sum_ablation']

    params, encoder = models['gru']
    summary, _ = evaluate_rankings([corpus[i] for i in test_idx], params, encoder, sampler, 5, 50, seed=[5, 3])
    assert summary['psi']['median'] > 0.0
    assert summary['sdr_only']['median'] >= summary['compliance_only']['median']
