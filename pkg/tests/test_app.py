import csv
import json

import pytest

import app
from graph_utils import GraphDataset, make_graph, write_graph_json, write_tu_dataset
from oracle_utils import brute_force_isomorphism
from sampler_utils import generate_synthetic_corpus, load_pair_set, random_walk_sample

TINY_CONFIG = {
    'seed': 11,
    'dataset': {'synthetic_graphs': 12, 'synthetic_labels': 6, 'synthetic_nodes': [6, 10]},
    'sampler': {'data_walk_range': [4, 8], 'negative_retry_cap': 50},
    'encoder': {'num_layers': 2, 'hidden_dim': 8, 'out_dim': 4},
    'train': {'batch_size': 3, 'iters_per_epoch': 1, 'warmup_epochs': 0, 'max_epochs': 2},
    'eval': {'val_triplets': 4, 'test_triplets': 4, 'chain_length': 3, 'num_chains': 2, 'hit_k': [1, 2]},
}

ARTIFACTS = ['split.json', 'sample_config.json', 'val_pairs.csv', 'test_pairs.csv', 'model.ckpt',
             'train_log.csv', 'threshold.json', 'metrics.json', 'scores.csv', 'ranking.json',
             'ranking.csv', 'alignment.json', 'scores.csv.meta.json', 'ranking.csv.meta.json',
             'train_log.csv.meta.json']


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


def run_pipeline(config_path, out):
    common = ['--config', str(config_path), '--out', str(out), '-q']
    ckpt = ['--checkpoint', str(out / 'model.ckpt')]
    for argv in (['sample'], ['train'], ['eval'] + ckpt, ['rank'] + ckpt, ['align'] + ckpt):
        assert app.main(argv[:1] + common + argv[1:]) == 0, argv[0]


# =============================================================================
# ORACLE COMMAND
# =============================================================================

def test_oracle_match_prints_mapping(tmp_path, capsys, triangle, k4):
    q = write_graph_json(triangle, tmp_path / "q.json")
    d = write_graph_json(k4, tmp_path / "d.json")
    assert app.main(['oracle', str(q), str(d), '-q']) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "Match"
    assert len(lines) == 4
    assert all(" -> " in line for line in lines[1:])


def test_oracle_no_match(tmp_path, capsys, triangle, square):
    q = write_graph_json(triangle, tmp_path / "q.json")
    d = write_graph_json(square, tmp_path / "d.json")
    assert app.main(['oracle', str(q), str(d), '-q']) == 1
    assert capsys.readouterr().out.strip() == "NoMatch"


def test_oracle_parse_failure(tmp_path, triangle):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    d = write_graph_json(triangle, tmp_path / "d.json")
    assert app.main(['oracle', str(bad), str(d), '-q']) == 3


def test_oracle_timeout(tmp_path, capsys):
    # K7 against a 6-partite graph: no match, but very many K6 partial matches
    clique = make_graph([0] * 7, [(u, v) for u in range(7) for v in range(u + 1, 7)])
    turan = make_graph([0] * 30, [(u, v) for u in range(30) for v in range(u + 1, 30) if u % 6 != v % 6])
    q = write_graph_json(clique, tmp_path / "q.json")
    d = write_graph_json(turan, tmp_path / "d.json")
    assert app.main(['oracle', str(q), str(d), '--timeout-ms', '1', '-q']) == 2
    assert capsys.readouterr().out.strip() == "Timeout"


# =============================================================================
# PIPELINE
# =============================================================================

def test_pipeline_writes_artifacts(tmp_path, config_path):
    out = tmp_path / "run"
    run_pipeline(config_path, out)
    for name in ARTIFACTS:
        assert (out / name).is_file(), name

    metrics = json.loads((out / 'metrics.json').read_text())
    assert metrics['split'] == 'test'
    assert metrics['pair_count'] == metrics['positives'] + metrics['negatives']
    assert metrics['config']['seed'] == 11
    assert len(metrics['checkpoint_hash']) == 40
    assert 'elapsed' not in metrics

    with (out / 'scores.csv').open(newline='') as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == metrics['pair_count']
    assert list(rows[0]) == app.SCORE_COLUMNS

    with (out / 'train_log.csv').open(newline='') as handle:
        assert [row['epoch'] for row in csv.DictReader(handle)] == ['1', '2']

    for table in ('scores.csv', 'ranking.csv', 'train_log.csv'):
        meta = json.loads((out / f"{table}.meta.json").read_text())
        assert meta['version'] == app.__version__
        assert meta['config_hash'] == metrics['config_hash']
        with (out / table).open(newline='') as handle:
            assert meta['row_count'] == len(list(csv.DictReader(handle)))

    ranking = json.loads((out / 'ranking.json').read_text())
    assert set(ranking['spearman_rho']) == {'psi', 'sdr_only', 'compliance_only'}
    alignment = json.loads((out / 'alignment.json').read_text())
    assert set(alignment['hit_at_k']) == {'1', '2'}


@pytest.mark.slow
def test_pipeline_reruns_are_byte_identical(tmp_path, config_path):
    out = tmp_path / "run"
    run_pipeline(config_path, out)
    first = {name: (out / name).read_bytes() for name in ARTIFACTS}
    run_pipeline(config_path, out)
    for name in ARTIFACTS:
        assert (out / name).read_bytes() == first[name], name


def test_index_then_query(tmp_path, config_path, rng):
    out = tmp_path / "run"
    run_pipeline(config_path, out)
    corpus = generate_synthetic_corpus(12, 6, (6, 10), seed=11)
    write_tu_dataset(GraphDataset([corpus[0]], 6, 'graph'), tmp_path / "big")
    queries = [random_walk_sample(corpus[0], 3, rng), random_walk_sample(corpus[1], 4, rng)]
    write_tu_dataset(GraphDataset(queries, 6, 'queries'), tmp_path / "queries")

    common = ['--config', str(config_path), '--out', str(out), '-q', '--checkpoint', str(out / 'model.ckpt'),
              '--queries', str(tmp_path / "queries")]
    assert app.main(['index', '--graph', str(tmp_path / "big"), '--k', '1'] + common) == 0
    decided = (out / 'decisions.csv').read_text()
    assert decided.splitlines()[0] == "query_idx,max_psi,best_node,decision"
    assert len(decided.splitlines()) == 3

    (out / 'decisions.csv').unlink()
    assert app.main(['query'] + common) == 0
    assert (out / 'decisions.csv').read_text() == decided


def write_raw_tu(root, name, edges, indicator, labels):
    root.mkdir(parents=True, exist_ok=True)
    (root / f"{name}_A.txt").write_text(edges)
    (root / f"{name}_graph_indicator.txt").write_text(indicator)
    (root / f"{name}_node_labels.txt").write_text(labels)
    return root


def test_rank_keeps_checkpoint_labels_for_external_graphs(tmp_path, config_path, monkeypatch):
    out = tmp_path / "run"
    run_pipeline(config_path, out)
    # raw labels {1, 2} are a strict subset of the checkpoint's alphabet 0..5
    root = write_raw_tu(tmp_path / "ext", "EXT", "1, 2\n2, 3\n3, 1\n4, 5\n5, 6\n6, 7\n",
                        "1\n1\n1\n2\n2\n2\n2\n", "1\n2\n2\n2\n1\n2\n1\n")
    seen = []
    real = app.evaluate_rankings

    def capture(graphs, *args, **kwargs):
        seen.extend(graphs)
        return real(graphs, *args, **kwargs)

    monkeypatch.setattr(app, 'evaluate_rankings', capture)
    argv = ['rank', '--config', str(config_path), '--out', str(out), '-q',
            '--checkpoint', str(out / 'model.ckpt'), '--graphs', str(root), '--name', 'EXT']
    assert app.main(argv) == 0
    assert [g.labels.tolist() for g in seen] == [[1, 2, 2], [2, 1, 2, 1]]


def test_rank_rejects_labels_outside_checkpoint_alphabet(tmp_path, config_path):
    out = tmp_path / "run"
    run_pipeline(config_path, out)
    root = write_raw_tu(tmp_path / "ext", "EXT", "1, 2\n2, 3\n3, 1\n", "1\n1\n1\n", "1\n9\n2\n")
    argv = ['rank', '--config', str(config_path), '--out', str(out), '-q',
            '--checkpoint', str(out / 'model.ckpt'), '--graphs', str(root), '--name', 'EXT']
    assert app.main(argv) == 1


def test_eval_without_checkpoint_fails(tmp_path, config_path):
    out = tmp_path / "run"
    assert app.main(['sample', '--config', str(config_path), '--out', str(out), '-q']) == 0
    assert app.main(['eval', '--config', str(config_path), '--out', str(out), '-q']) == 1


def test_unknown_config_key_fails(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({'encoder': {'width': 3}}))
    assert app.main(['sample', '--config', str(path), '--out', str(tmp_path), '-q']) == 1


def test_bad_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        app.main(['train', '--no-such-flag'])
    assert info.value.code == 2


@pytest.mark.slow
def test_sampled_labels_agree_with_brute_force(tmp_path, config_path):
    out = tmp_path / "run"
    assert app.main(['sample', '--config', str(config_path), '--out', str(out), '-q']) == 0
    label_map = json.loads((out / 'sample_config.json').read_text())['label_map']
    for split in ('val', 'test'):
        pairs = load_pair_set(out, split, label_map)
        assert pairs
        for _, _, pair in pairs:
            assert (brute_force_isomorphism(pair.query, pair.data) is not None) == (pair.label == 1)
