"""
Main application entry point.
Batch command-line frontend grouping the pipeline into commands:
data (sample), model (train, sweep), evaluation (eval, rank, align),
large graphs (index, query) and the exact oracle.
"""

import argparse
import copy
import csv
import json
import logging
import sys
import time
from pathlib import Path

from encoder_utils import EncoderConfig, embedding_matrix, load_checkpoint
from graph_utils import load_tu_dataset, read_graph_json
from index_utils import build_index, load_index, match_queries, save_index
from oracle_utils import Verdict, find_subgraph_isomorphism
from sampler_utils import (SamplerConfig, build_pair_set, build_split, generate_synthetic_corpus,
                           load_pair_set, write_pair_set)
from shared_utils import (ArgumentError, FormatError, LabError, SamplerError, __version__,
                          artifact_header, content_hash, load_run_config, setup_logging, write_json)
from trainer_utils import (LOG_HEADER, Threshold, TrainConfig, calibrate_threshold, evaluate_alignment,
                           evaluate_pairs, evaluate_rankings, save_model, score_pair_set, train,
                           write_train_log)

logger = logging.getLogger(__name__)

ORACLE_EXIT = {Verdict.MATCH: 0, Verdict.NO_MATCH: 1, Verdict.TIMEOUT: 2}
ORACLE_PARSE_FAILURE = 3

SCORE_COLUMNS = ['q_idx', 'd_idx', 'label', 'psi', 'compliance', 'sdr', 'hinge']


# =============================================================================
# SHARED HELPERS
# =============================================================================

def effective_config(args):
    """Run config from --config plus the flag overrides."""
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.out is not None:
        overrides['paths'] = {'out_dir': args.out}
    if args.timeout_ms is not None:
        if args.timeout_ms <= 0:
            raise ArgumentError(f"--timeout-ms must be positive, got {args.timeout_ms}")
        overrides['sampler'] = {'oracle_timeout': args.timeout_ms / 1000.0}
    return load_run_config(args.config, overrides)


def out_dir(config):
    path = Path(config['paths']['out_dir'])
    path.mkdir(parents=True, exist_ok=True)
    return path


def sample_dir(args, config):
    return Path(getattr(args, 'data', None) or config['paths']['sample_dir'] or config['paths']['out_dir'])


def load_corpus(config):
    """The raw corpus: a TUDataset directory, or the seeded synthetic corpus."""
    ds = config['dataset']
    if ds['dir']:
        return load_tu_dataset(ds['dir'], ds['name'], ds['min_component_size'])
    return generate_synthetic_corpus(ds['synthetic_graphs'], ds['synthetic_labels'], ds['synthetic_nodes'],
                                     ds['synthetic_extra_edges'], ds['separable'], config['seed'], ds['name'])


def read_sample_info(path):
    try:
        info = json.loads((path / 'sample_config.json').read_text())
        split = json.loads((path / 'split.json').read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{path} does not hold a sampled pair set: {e}") from e
    return info, split


def checkpoint_path(args, config):
    path = getattr(args, 'checkpoint', None) or config['paths']['checkpoint']
    if not path:
        raise ArgumentError("No checkpoint given (--checkpoint or paths.checkpoint)")
    return Path(path)


def load_model(args, config):
    path = checkpoint_path(args, config)
    params, encoder_cfg, extra = load_checkpoint(path)
    return params, encoder_cfg, extra, content_hash(path)


def check_alphabet(params, label_map):
    if params.label_alphabet_size != len(label_map):
        raise ArgumentError(f"Checkpoint alphabet size {params.label_alphabet_size} does not match "
                            f"the input's {len(label_map)}")


def stored_threshold(args, extra):
    if getattr(args, 'tau', None) is not None:
        return Threshold(args.tau, float('nan'))
    if 'tau' not in extra:
        raise ArgumentError("Checkpoint holds no calibrated tau; pass --tau")
    return Threshold(extra['tau'], extra.get('calibration_accuracy', float('nan')))


def write_rows(path, header, rows, config):
    """CSV table plus a `<name>.meta.json` sidecar carrying the artifact header."""
    path = Path(path)
    rows = list(rows)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    logger.info("Wrote %s", path)
    write_json(path.with_name(f"{path.name}.meta.json"),
               dict(artifact_header(config), columns=list(header), row_count=len(rows)))
    return path


def _fmt(value):
    return '' if value is None else repr(float(value))


# =============================================================================
# DATA
# =============================================================================

def cmd_sample(args, config):
    """Offline validation and test pair sets with oracle-verified labels."""
    seed = config['seed']
    sampler_cfg = SamplerConfig.from_dict(config['sampler'], seed)
    corpus = load_corpus(config)
    train_idx, val_idx, test_idx = build_split(corpus, seed)
    out = out_dir(config)
    counts = {}
    for split, indices, triplets, stream in (('val', val_idx, config['eval']['val_triplets'], 1),
                                             ('test', test_idx, config['eval']['test_triplets'], 2)):
        if not indices:
            raise SamplerError(f"The {split} split is empty; the corpus has {len(corpus)} graph(s)")
        pairs = build_pair_set(corpus, indices, triplets, sampler_cfg, [seed, stream], args.threads)
        failed = triplets - len(pairs) // 2
        if failed > config['train']['max_failure_rate'] * triplets:
            raise SamplerError(f"{failed} of {triplets} {split} triplet(s) found no negative")
        write_pair_set(pairs, out, split, corpus.label_alphabet_size, corpus.label_map)
        counts[split] = len(pairs)

    header = artifact_header(config)
    write_json(out / 'split.json', dict(header, train=train_idx, val=val_idx, test=test_idx))
    write_json(out / 'sample_config.json', dict(header, dataset=corpus.name, pairs=counts,
                                                label_alphabet_size=corpus.label_alphabet_size,
                                                label_map=corpus.label_map))
    return 0


# =============================================================================
# MODEL
# =============================================================================

def _train_once(config, corpus, split, val_pairs, encoder_cfg, threads, state_path=None, resume=False,
                log_path=None):
    train_cfg = TrainConfig.from_dict(config['train'], config['seed'])
    sampler_cfg = SamplerConfig.from_dict(config['sampler'], config['seed'])
    result = train(corpus, split['train'], val_pairs, train_cfg, encoder_cfg, sampler_cfg,
                   state_path=state_path, resume=resume, threads=threads, log_path=log_path)
    scores = score_pair_set(val_pairs, result.params, result.encoder_cfg, threads)
    threshold = calibrate_threshold(scores['psi'], scores['label'])
    return result, threshold


def cmd_train(args, config):
    """Train, calibrate tau on the validation pairs, write checkpoint, log and threshold."""
    data = sample_dir(args, config)
    info, split = read_sample_info(data)
    corpus = load_corpus(config)
    if corpus.label_map != info['label_map']:
        raise ArgumentError(f"Corpus alphabet {corpus.label_map} does not match the sampled "
                            f"pairs' {info['label_map']}")
    val_pairs = [pair for _, _, pair in load_pair_set(data, 'val', info['label_map'])]
    encoder_cfg = EncoderConfig.from_dict(config['encoder'])
    out = out_dir(config)

    log_path = out / 'train_log.csv'
    result, threshold = _train_once(config, corpus, split, val_pairs, encoder_cfg, args.threads,
                                    state_path=out / 'train_state.bin', resume=args.resume, log_path=log_path)
    model_path = Path(args.checkpoint or out / 'model.ckpt')
    save_model(model_path, result, result.encoder_cfg, threshold, corpus.label_map)
    write_train_log(log_path, result.log)
    write_json(out / 'train_log.csv.meta.json', dict(artifact_header(config), columns=LOG_HEADER,
                                                       row_count=len(result.log)))
    write_json(out / 'threshold.json', dict(artifact_header(config), tau=threshold.tau,
                                            calibration_accuracy=threshold.accuracy,
                                            best_val_auroc=result.best_val_auroc,
                                            epochs_run=result.epochs_run, stop_reason=result.stop_reason))
    logger.info("Best val AUROC %s, tau %.6f (%s)", result.best_val_auroc, threshold.tau, result.stop_reason)
    return 0


def cmd_sweep(args, config):
    """Short training runs over a num_layers x out_dim grid; plot-ready CSV of val/test AUROC."""
    data = sample_dir(args, config)
    info, split = read_sample_info(data)
    corpus = load_corpus(config)
    val_pairs = [pair for _, _, pair in load_pair_set(data, 'val', info['label_map'])]
    test_pairs = [pair for _, _, pair in load_pair_set(data, 'test', info['label_map'])]
    sweep = config['eval']
    rows = []
    for layers in sweep['sweep_layers']:
        for dim in sweep['sweep_dims']:
            run_config = copy.deepcopy(config)
            run_config['encoder'].update(num_layers=layers, out_dim=dim, hidden_dim=2 * dim)
            run_config['train'].update(max_epochs=sweep['sweep_epochs'], warmup_epochs=0)
            encoder_cfg = EncoderConfig.from_dict(run_config['encoder'])
            result, threshold = _train_once(run_config, corpus, split, val_pairs, encoder_cfg, args.threads)
            report, _ = evaluate_pairs(test_pairs, result.params, encoder_cfg, threshold, threads=args.threads)
            rows.append([layers, dim, _fmt(result.best_val_auroc), _fmt(report.auroc)])
            logger.info("num_layers=%d out_dim=%d val %s test %s", layers, dim,
                        result.best_val_auroc, report.auroc)
    write_rows(out_dir(config) / 'sweep.csv', ['num_layers', 'out_dim', 'val_auroc', 'test_auroc'], rows,
               config)
    return 0


# =============================================================================
# EVALUATION
# =============================================================================

def cmd_eval(args, config):
    """Metrics JSON and per-pair score dump for one sampled split."""
    data = sample_dir(args, config)
    info, _ = read_sample_info(data)
    params, encoder_cfg, extra, ckpt_hash = load_model(args, config)
    check_alphabet(params, info['label_map'])
    threshold = stored_threshold(args, extra)
    indexed = load_pair_set(data, args.split, info['label_map'])
    if not indexed:
        raise ArgumentError(f"The {args.split} pair set is empty")

    start = time.perf_counter()
    report, scores = evaluate_pairs([pair for _, _, pair in indexed], params, encoder_cfg, threshold,
                                    config['eval']['query_size_buckets'], args.threads)
    report.elapsed['total_seconds'] = time.perf_counter() - start
    out = out_dir(config)
    metrics = report.to_dict()
    timings = metrics.pop('elapsed')
    write_json(out / 'metrics.json', dict(artifact_header(config), split=args.split,
                                          checkpoint_hash=ckpt_hash, **metrics))
    write_json(out / 'timings.json', dict(artifact_header(config), **timings))
    rows = [[q_idx, d_idx, int(scores['label'][i])] + [_fmt(scores[key][i]) for key in SCORE_COLUMNS[3:]]
            for i, (q_idx, d_idx, _) in enumerate(indexed)]
    write_rows(out / 'scores.csv', SCORE_COLUMNS, rows, config)
    logger.info("AUROC %s, accuracy %.4f at tau %.6f", report.auroc, report.accuracy, threshold.tau)
    return 0


def cmd_rank(args, config):
    """Spearman rho of nested-chain rankings for each scorer mode."""
    params, encoder_cfg, extra, ckpt_hash = load_model(args, config)
    sampler_cfg = SamplerConfig.from_dict(config['sampler'], config['seed'])
    if args.graphs:
        external = load_tu_dataset(args.graphs, args.name, config['dataset']['min_component_size'],
                                   label_map=extra.get('label_map'))
        check_alphabet(params, external.label_map)
        graphs = external.graphs
    else:
        corpus = load_corpus(config)
        _, _, test_idx = build_split(corpus, config['seed'])
        graphs = [corpus[i] for i in test_idx]
    ev = config['eval']
    summary, rows = evaluate_rankings(graphs, params, encoder_cfg, sampler_cfg, ev['chain_length'],
                                      ev['num_chains'], [config['seed'], 3])
    out = out_dir(config)
    write_json(out / 'ranking.json', dict(artifact_header(config), checkpoint_hash=ckpt_hash,
                                          spearman_rho=summary))
    write_rows(out / 'ranking.csv', ['graph', 'mode', 'rho', 'length', 'degenerate'],
               [[g, mode, _fmt(rho), length, int(flag)] for g, mode, rho, length, flag in rows], config)
    return 0


def cmd_align(args, config):
    """Average Hit@K of the node-level scorer over positive pairs."""
    data = sample_dir(args, config)
    info, _ = read_sample_info(data)
    params, encoder_cfg, _, ckpt_hash = load_model(args, config)
    check_alphabet(params, info['label_map'])
    pairs = [pair for _, _, pair in load_pair_set(data, args.split, info['label_map'])]
    mode = args.mode or config['eval']['align_mode']
    hits, used, skipped = evaluate_alignment(pairs, params, encoder_cfg, config['eval']['hit_k'], mode,
                                             config['sampler']['oracle_timeout'])
    write_json(out_dir(config) / 'alignment.json',
               dict(artifact_header(config), checkpoint_hash=ckpt_hash, mode=mode, split=args.split,
                    hit_at_k={str(k): v for k, v in hits.items()}, pairs_used=used, pairs_skipped=skipped))
    return 0


# =============================================================================
# LARGE GRAPHS
# =============================================================================

def _decide(args, config, index, params, encoder_cfg, extra):
    threshold = stored_threshold(args, extra)
    queries = load_tu_dataset(args.queries, args.query_name, min_component_size=1,
                              label_map=extra.get('label_map'))
    check_alphabet(params, queries.label_map)
    embs = embedding_matrix(queries.graphs, params, encoder_cfg, args.threads)
    best, node, decisions = match_queries(embs, index, threshold.tau, encoder_cfg.sdr_reduction)
    write_rows(out_dir(config) / 'decisions.csv', ['query_idx', 'max_psi', 'best_node', 'decision'],
               [[i, _fmt(b), int(v), int(dec)] for i, (b, v, dec) in enumerate(zip(best, node, decisions))],
               config)
    return 0


def cmd_index(args, config):
    """Embed every k-hop neighborhood of a big graph; optionally decide queries right away."""
    params, encoder_cfg, extra, ckpt_hash = load_model(args, config)
    big = load_tu_dataset(args.graph, args.name, min_component_size=1, label_map=extra.get('label_map'))
    if len(big) != 1:
        raise ArgumentError(f"Expected one connected graph in {args.graph}, found {len(big)}")
    check_alphabet(params, big.label_map)
    k = args.k if args.k is not None else config['eval']['index_k']
    index = build_index(big[0], params, encoder_cfg, k, args.threads, ckpt_hash)
    save_index(Path(args.index or out_dir(config) / 'index.bin'), index)
    if args.queries:
        return _decide(args, config, index, params, encoder_cfg, extra)
    return 0


def cmd_query(args, config):
    """Decide queries against a saved index."""
    params, encoder_cfg, extra, ckpt_hash = load_model(args, config)
    index = load_index(args.index or out_dir(config) / 'index.bin')
    if index.checkpoint_hash and index.checkpoint_hash != ckpt_hash:
        logger.warning("Index was built with a different checkpoint")
    return _decide(args, config, index, params, encoder_cfg, extra)


def cmd_oracle(args, config):
    """Exact verdict for one (query, data) pair; exit code 0 Match, 1 NoMatch, 2 Timeout, 3 parse failure."""
    try:
        q = read_graph_json(args.query)
        d = read_graph_json(args.data)
    except FormatError as e:
        print(f"ParseError: {e}")
        return ORACLE_PARSE_FAILURE
    outcome = find_subgraph_isomorphism(q, d, config['sampler']['oracle_timeout'])
    if outcome.verdict is Verdict.MATCH:
        print("Match")
        for v, t in sorted(outcome.mapping.pairs.items()):
            print(f"{v} -> {t}")
    elif outcome.verdict is Verdict.NO_MATCH:
        print("NoMatch")
    else:
        print("Timeout")
    logger.info("%s after %.4fs, %d node(s) explored", outcome.verdict.value, outcome.elapsed,
                outcome.nodes_explored)
    return ORACLE_EXIT[outcome.verdict]


# =============================================================================
# ARGUMENTS
# =============================================================================

COMMANDS = {
    "Data": {'sample': cmd_sample},
    "Model": {'train': cmd_train, 'sweep': cmd_sweep},
    "Evaluation": {'eval': cmd_eval, 'rank': cmd_rank, 'align': cmd_align},
    "Large graphs": {'index': cmd_index, 'query': cmd_query},
    "Oracle": {'oracle': cmd_oracle},
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="JSON run config")
    common.add_argument('--seed', type=int, help="unsigned 64-bit seed")
    common.add_argument('--out', help="output directory")
    common.add_argument('--threads', type=int, default=1, help="worker cap")
    common.add_argument('--timeout-ms', type=int, help="oracle timeout in milliseconds")
    common.add_argument('-v', '--verbose', action='count', default=0)
    common.add_argument('-q', '--quiet', action='store_true')

    parser = argparse.ArgumentParser(prog='submatch', description="Neural subgraph-matching lab")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)
    commands = {name: fn for group in COMMANDS.values() for name, fn in group.items()}
    parsers = {name: sub.add_parser(name, parents=[common], help=fn.__doc__.splitlines()[0])
               for name, fn in commands.items()}
    for name, p in parsers.items():
        p.set_defaults(handler=commands[name])

    for name in ('train', 'sweep', 'eval', 'align'):
        parsers[name].add_argument('--data', help="directory written by `sample`")
    for name in ('train', 'eval', 'rank', 'align', 'index', 'query'):
        parsers[name].add_argument('--checkpoint', help="model checkpoint")
    for name in ('eval', 'align'):
        parsers[name].add_argument('--split', choices=['val', 'test'], default='test')
    for name in ('eval', 'index', 'query'):
        parsers[name].add_argument('--tau', type=float, help="override the stored threshold")
    for name in ('index', 'query'):
        parsers[name].add_argument('--index', help="index file (default <out>/index.bin)")
        parsers[name].add_argument('--queries', required=name == 'query', help="TUDataset dir of queries")
        parsers[name].add_argument('--query-name', default='queries', help="TUDataset name of the queries")

    parsers['train'].add_argument('--resume', action='store_true', help="continue from <out>/train_state.bin")
    parsers['rank'].add_argument('--graphs', help="TUDataset dir of data graphs (default: test split)")
    parsers['rank'].add_argument('--name', default='graphs')
    parsers['align'].add_argument('--mode', choices=['psi', 'sdr_only', 'compliance_only'])
    parsers['index'].add_argument('--graph', required=True, help="TUDataset dir holding the big graph")
    parsers['index'].add_argument('--name', default='graph')
    parsers['index'].add_argument('--k', type=int, help="hop radius (default: encoder depth)")
    parsers['oracle'].add_argument('query', help="query graph JSON")
    parsers['oracle'].add_argument('data', help="data graph JSON")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(-1 if args.quiet else args.verbose)
    try:
        if args.threads < 1:
            raise ArgumentError(f"--threads must be >= 1, got {args.threads}")
        config = effective_config(args)
        return args.handler(args, config)
    except LabError as e:
        logger.error("%s failed: %s", args.command, e)
        return ORACLE_PARSE_FAILURE if args.command == 'oracle' else 1


if __name__ == '__main__':
    sys.exit(main())
