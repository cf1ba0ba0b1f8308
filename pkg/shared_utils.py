"""
Shared utilities for the subgraph-matching lab.
Contains the global defaults, run-config loading, the error hierarchy,
logging setup and the small file helpers used by every module.
"""

import copy
import hashlib
import json
import logging
from pathlib import Path

__version__ = "0.3.0"


# =============================================================================
# GLOBAL DEFAULTS - Change these to affect every command
# =============================================================================

DEFAULT_SEED = 7

# Raw corpus: either a TUDataset directory or a generated synthetic corpus
DATASET_DEFAULTS = {
    'dir': None,
    'name': 'synthetic',
    'min_component_size': 3,
    'synthetic_graphs': 200,
    'synthetic_labels': 3,
    'synthetic_nodes': [20, 40],
    'synthetic_extra_edges': 0.3,
    'separable': False,
}

SAMPLER_DEFAULTS = {
    'data_walk_range': [10, 30],
    'query_fraction_range': [0.25, 0.5],
    'negative_retry_cap': 10,
    'oracle_timeout': 1.0,
}

ENCODER_DEFAULTS = {
    'num_layers': 6,
    'hidden_dim': 64,
    'out_dim': 32,
    'combine_mode': 'gru',
    'aggregator': 'sum',
    'readout': 'max',
    'clamp_floor': 1e-7,
    'sdr_reduction': 'aggregate',
}

TRAIN_DEFAULTS = {
    'lr': 1e-3,
    'beta1': 0.9,
    'beta2': 0.999,
    'eps': 1e-8,
    'batch_size': 64,
    'iters_per_epoch': 100,
    'warmup_epochs': 10,
    'patience': 50,
    'target_pos': 1.0,
    'target_neg': -1.0,
    'max_epochs': 200,
    'max_duration': None,
    'max_failure_rate': 0.5,
}

EVAL_DEFAULTS = {
    'val_triplets': 128,
    'test_triplets': 256,
    'chain_length': 5,
    'num_chains': 50,
    'hit_k': [1, 3],
    'align_mode': 'sdr_only',
    'index_k': None,
    'query_size_buckets': [1, 4, 8, 16],
    'sweep_layers': [2, 4, 6],
    'sweep_dims': [8, 16, 32],
    'sweep_epochs': 3,
}

PATHS_DEFAULTS = {
    'out_dir': '.',
    'sample_dir': None,
    'checkpoint': None,
}

CONFIG_SECTIONS = {
    'dataset': DATASET_DEFAULTS,
    'sampler': SAMPLER_DEFAULTS,
    'encoder': ENCODER_DEFAULTS,
    'train': TRAIN_DEFAULTS,
    'eval': EVAL_DEFAULTS,
    'paths': PATHS_DEFAULTS,
}

# Numeric floors shared by the tensor core and the measure
DIVISOR_FLOOR = 1e-12
EMBEDDING_FLOOR = 1e-7

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


# =============================================================================
# ERRORS
# =============================================================================

class LabError(Exception):
    """Base class for every error raised on purpose by this package."""


class FormatError(LabError):
    """Malformed input file (TUDataset text, pair CSV, checkpoint)."""


class ArgumentError(LabError, ValueError):
    """Invalid argument: bad node id, shape mismatch, empty input."""


class NumericDomainError(LabError, ArithmeticError):
    """A divisor fell below DIVISOR_FLOOR; callers must clamp first."""


class ConfigError(LabError):
    """Unknown key or invariant violation in a run config."""


class SamplerError(LabError):
    """The sampler could not fill a batch within its failure budget."""


# =============================================================================
# CONFIG
# =============================================================================

def merge_defaults(defaults, values, section=''):
    """
    Fill a config section from its defaults, rejecting unknown keys.

    Args:
        defaults: dict of {key: default_value}
        values: user-supplied dict (may be partial)
        section: section name used in error messages

    Returns:
        New dict with every default key present
    """
    unknown = sorted(set(values) - set(defaults))
    if unknown:
        raise ConfigError(f"Unknown key(s) in section '{section}': {', '.join(unknown)}")
    merged = copy.deepcopy(defaults)
    merged.update(copy.deepcopy(values))
    return merged


def load_run_config(path=None, overrides=None):
    """
    Load a JSON run config and return the effective (defaulted) config.

    Args:
        path: JSON file path, or None for pure defaults
        overrides: optional nested dict applied after the file, e.g. from CLI flags

    Returns:
        dict with one entry per section plus 'seed'
    """
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Could not read config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")

    for section, values in (overrides or {}).items():
        if section == 'seed':
            raw['seed'] = values
        else:
            raw.setdefault(section, {}).update(values)

    unknown = sorted(set(raw) - set(CONFIG_SECTIONS) - {'seed'})
    if unknown:
        raise ConfigError(f"Unknown config section(s): {', '.join(unknown)}")

    config = {
        section: merge_defaults(defaults, raw.get(section) or {}, section)
        for section, defaults in CONFIG_SECTIONS.items()
    }
    seed = raw.get('seed', DEFAULT_SEED)
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    config['seed'] = seed
    return config


# =============================================================================
# LOGGING AND FILE HELPERS
# =============================================================================

def setup_logging(verbosity=0):
    """
    Configure the root logger once for command-line use.

    Args:
        verbosity: -1 quiet (warnings), 0 info, 1+ debug
    """
    if verbosity < 0:
        level = logging.WARNING
    elif verbosity == 0:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def write_json(path, payload):
    """Write JSON with sorted keys so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')
    logger.info("Wrote %s", path)
    return path


def content_hash(path):
    """Git-style blob hash of a file: sha1 over 'blob <size>\\0' + bytes."""
    data = Path(path).read_bytes()
    header = f"blob {len(data)}\0".encode()
    return hashlib.sha1(header + data).hexdigest()


def config_hash(config):
    """sha1 of the canonical (sorted-key) JSON form of a config."""
    return hashlib.sha1(json.dumps(config, sort_keys=True).encode()).hexdigest()


def artifact_header(config):
    """Provenance block embedded in every JSON artifact and CSV sidecar."""
    return {'version': __version__, 'config': config, 'config_hash': config_hash(config)}
