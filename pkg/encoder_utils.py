"""
Hierarchy-aware graph encoder.
One-hot labels -> preprocessing linear -> K message-passing layers whose
combine step is a GRU (neighbor sum as input, previous node state as hidden
state) -> shared 2-layer hash MLP -> per-layer max-pool + linear -> mean over
layers -> positive clamp. Also the binary checkpoint container.
"""

import json
import logging
import struct
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from shared_utils import ArgumentError, ConfigError, ENCODER_DEFAULTS, FormatError, __version__, merge_defaults
from tensor_utils import (ParamStore, Tensor, add, clamp_min, column_max_with_argmax,
                          layer_norm, matmul, multiply, relu, scale, sigmoid, subtract, tanh)

logger = logging.getLogger(__name__)

COMBINE_MODES = ('gru', 'sum_ablation')
READOUTS = ('max', 'mean', 'sum')
SDR_REDUCTIONS = ('aggregate', 'elementwise')
GRU_NAMES = ('W_z', 'U_z', 'b_z', 'W_r', 'U_r', 'b_r', 'W_h', 'U_h', 'b_h')

CONTAINER_MAGIC = b'SUBMATCH'
CONTAINER_VERSION = 1


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = ENCODER_DEFAULTS['num_layers']
    hidden_dim: int = ENCODER_DEFAULTS['hidden_dim']
    out_dim: int = ENCODER_DEFAULTS['out_dim']
    combine_mode: str = ENCODER_DEFAULTS['combine_mode']
    aggregator: str = ENCODER_DEFAULTS['aggregator']
    readout: str = ENCODER_DEFAULTS['readout']
    clamp_floor: float = ENCODER_DEFAULTS['clamp_floor']
    sdr_reduction: str = ENCODER_DEFAULTS['sdr_reduction']

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.out_dim < 1 or self.hidden_dim != 2 * self.out_dim:
            raise ConfigError(f"hidden_dim must equal 2*out_dim, got {self.hidden_dim} and {self.out_dim}")
        if self.combine_mode not in COMBINE_MODES:
            raise ConfigError(f"Unknown combine_mode: {self.combine_mode}")
        if self.aggregator != 'sum':
            raise ConfigError(f"Unknown aggregator: {self.aggregator}")
        if self.readout not in READOUTS:
            raise ConfigError(f"Unknown readout: {self.readout}")
        if self.sdr_reduction not in SDR_REDUCTIONS:
            raise ConfigError(f"Unknown sdr_reduction: {self.sdr_reduction}")
        if not self.clamp_floor > 0:
            raise ConfigError(f"clamp_floor must be positive, got {self.clamp_floor}")

    @classmethod
    def from_dict(cls, values):
        return cls(**merge_defaults(ENCODER_DEFAULTS, values, 'encoder'))

    def to_dict(self):
        return asdict(self)


@dataclass
class EncoderParams:
    """Learned weights plus the label alphabet size they were built for."""
    store: ParamStore
    label_alphabet_size: int

    def layer(self, j):
        """GRU parameters of layer j (1-based) as a dict of Tensors."""
        return {name: self.store[f'layer{j}.{name}'] for name in GRU_NAMES}


@dataclass
class NodeEmbeddings:
    """
    layers[j-1]: H^j, shape (n, 2d); hashed[j-1]: MLP(H^j), shape (n, d);
    summary: clamped mean over layers of post-linear hashed rows, shape (n, d).
    """
    layers: list
    hashed: list
    summary: Tensor = None

    @property
    def node_count(self):
        return self.layers[0].shape[0]


@dataclass
class GraphEmbedding:
    vector: Tensor

    @property
    def value(self):
        return self.vector.value


# =============================================================================
# PARAMETERS
# =============================================================================

def _glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_params(cfg, label_alphabet_size, seed):
    """
    Glorot-uniform weights and zero biases, deterministic per seed.

    Args:
        cfg: EncoderConfig
        label_alphabet_size: number of distinct node labels
        seed: integer seed

    Returns:
        EncoderParams
    """
    if label_alphabet_size < 1:
        raise ArgumentError(f"label_alphabet_size must be >= 1, got {label_alphabet_size}")
    rng = np.random.default_rng(seed)
    h, d = cfg.hidden_dim, cfg.out_dim
    store = ParamStore()
    store.add('pre.weight', _glorot(rng, label_alphabet_size, h))
    store.add('pre.bias', np.zeros(h))
    for j in range(1, cfg.num_layers + 1):
        for gate in ('z', 'r', 'h'):
            store.add(f'layer{j}.W_{gate}', _glorot(rng, h, h))
            store.add(f'layer{j}.U_{gate}', _glorot(rng, h, h))
            store.add(f'layer{j}.b_{gate}', np.zeros(h))
    store.add('hash.0.weight', _glorot(rng, h, d))
    store.add('hash.0.bias', np.zeros(d))
    store.add('hash.1.weight', _glorot(rng, d, d))
    store.add('hash.1.bias', np.zeros(d))
    store.add('post.weight', _glorot(rng, d, d))
    store.add('post.bias', np.zeros(d))
    return EncoderParams(store=store, label_alphabet_size=label_alphabet_size)


def _weights(params, inference):
    """Parameter tensors; constants (no recording) when inference is True."""
    if inference:
        return {name: Tensor(p.value) for name, p in params.store.items()}
    return dict(params.store.items())


# =============================================================================
# ENCODER
# =============================================================================

def gru_cell(x, h, layer_params):
    """
    Standard GRU update with x as input and h as hidden state.

    z = sigmoid(x W_z + h U_z + b_z), r = sigmoid(x W_r + h U_r + b_r),
    h~ = tanh(x W_h + (r*h) U_h + b_h), out = (1 - z)*h + z*h~.

    Args:
        x: Tensor (2d,) or (n, 2d)
        h: Tensor of the same shape as x
        layer_params: dict with W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h

    Returns:
        Tensor shaped like h
    """
    width = layer_params['W_z'].shape[0]
    if x.shape != h.shape or x.shape[-1] != width:
        raise ArgumentError(f"gru_cell: x {x.shape} and h {h.shape} must both end in {width}")
    p = layer_params
    z = sigmoid(add(add(matmul(x, p['W_z']), matmul(h, p['U_z'])), p['b_z']))
    r = sigmoid(add(add(matmul(x, p['W_r']), matmul(h, p['U_r'])), p['b_r']))
    candidate = tanh(add(add(matmul(x, p['W_h']), matmul(multiply(r, h), p['U_h'])), p['b_h']))
    return add(h, multiply(z, subtract(candidate, h)))


def _one_hot(g, alphabet_size):
    if g.node_count and int(g.labels.max()) >= alphabet_size:
        raise ArgumentError(f"Label {int(g.labels.max())} outside alphabet of size {alphabet_size}")
    x = np.zeros((g.node_count, alphabet_size))
    x[np.arange(g.node_count), g.labels] = 1.0
    return Tensor(x)


def _hash(h, w):
    hidden = relu(add(matmul(h, w['hash.0.weight']), w['hash.0.bias']))
    return add(matmul(hidden, w['hash.1.weight']), w['hash.1.bias'])


def _post_linear(x, w):
    return add(matmul(x, w['post.weight']), w['post.bias'])


def encode_nodes(g, params, cfg, inference=False, with_summary=True):
    """
    Run the K message-passing layers and the shared hash MLP.

    Args:
        g: LabeledGraph with labels inside params' alphabet
        params: EncoderParams
        cfg: EncoderConfig
        inference: skip the gradient recording
        with_summary: also compute the clamped per-node summary

    Returns:
        NodeEmbeddings
    """
    if g.node_count == 0:
        raise ArgumentError("Cannot encode an empty graph")
    return _encode_nodes(g, params, cfg, _weights(params, inference), with_summary)


def _encode_nodes(g, params, cfg, w, with_summary):
    adjacency = Tensor(g.adjacency.toarray().astype(np.float64))
    state = add(matmul(_one_hot(g, params.label_alphabet_size), w['pre.weight']), w['pre.bias'])

    layers, hashed = [], []
    for j in range(1, cfg.num_layers + 1):
        message = matmul(adjacency, state)
        if cfg.combine_mode == 'gru':
            state = gru_cell(message, state, {name: w[f'layer{j}.{name}'] for name in GRU_NAMES})
        else:
            state = add(message, state)
        if j < cfg.num_layers:
            state = relu(layer_norm(state))
        layers.append(state)
        hashed.append(_hash(state, w))

    summary = None
    if with_summary:
        total = _post_linear(hashed[0], w)
        for layer_out in hashed[1:]:
            total = add(total, _post_linear(layer_out, w))
        summary = clamp_min(scale(total, 1.0 / cfg.num_layers), cfg.clamp_floor)
    return NodeEmbeddings(layers=layers, hashed=hashed, summary=summary)


def _readout(rows, mode):
    if mode == 'max':
        return column_max_with_argmax(rows)
    ones = Tensor(np.ones(rows.shape[0]))
    pooled = matmul(ones, rows)
    return scale(pooled, 1.0 / rows.shape[0]) if mode == 'mean' else pooled


def encode_graph(g, params, cfg, inference=False):
    """
    Graph embedding: per-layer pooled hash rows, post linear, mean over layers, clamp.

    Returns:
        GraphEmbedding whose coordinates are all >= cfg.clamp_floor
    """
    if g.node_count == 0:
        raise ArgumentError("Cannot encode an empty graph")
    w = _weights(params, inference)
    nodes = _encode_nodes(g, params, cfg, w, with_summary=False)
    total = None
    for layer_out in nodes.hashed:
        pooled = _post_linear(_readout(layer_out, cfg.readout), w)
        total = pooled if total is None else add(total, pooled)
    return GraphEmbedding(clamp_min(scale(total, 1.0 / cfg.num_layers), cfg.clamp_floor))


def encode_batch(graphs, params, cfg, inference=True, threads=1):
    """Encode every graph independently; output order follows input order."""
    def one(g):
        return encode_graph(g, params, cfg, inference=inference)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, graphs))
    return [one(g) for g in graphs]


def embedding_matrix(graphs, params, cfg, threads=1):
    """Stack inference embeddings into an array of shape (len(graphs), d)."""
    if not graphs:
        return np.zeros((0, cfg.out_dim))
    return np.stack([e.value for e in encode_batch(graphs, params, cfg, threads=threads)])


# =============================================================================
# BINARY CONTAINER AND CHECKPOINTS
# =============================================================================

def write_container(path, arrays, header):
    """
    Write named float64 arrays to a versioned binary container.

    Layout: magic (8 bytes) | uint32 LE version | uint64 LE header length |
    JSON header (sorted keys, lists every section's name/shape/offset) |
    sections as contiguous little-endian float64. A sibling
    `<path>.manifest.txt` lists the section shapes.

    Args:
        path: output file
        arrays: ordered mapping {name: array}
        header: JSON-serializable dict stored alongside the section table
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sections, blobs, offset = [], [], 0
    for name, array in arrays.items():
        blob = np.ascontiguousarray(array, dtype='<f8').tobytes()
        sections.append({'name': name, 'shape': list(np.shape(array)), 'offset': offset,
                         'nbytes': len(blob)})
        blobs.append(blob)
        offset += len(blob)
    meta = dict(header, sections=sections, version=__version__)
    encoded = json.dumps(meta, sort_keys=True).encode('utf-8')
    with path.open('wb') as handle:
        handle.write(CONTAINER_MAGIC)
        handle.write(struct.pack('<IQ', CONTAINER_VERSION, len(encoded)))
        handle.write(encoded)
        for blob in blobs:
            handle.write(blob)
    manifest = [f"# container v{CONTAINER_VERSION}, little-endian float64"]
    manifest += [f"{s['name']}\t{'x'.join(map(str, s['shape'])) or 'scalar'}\toffset={s['offset']}"
                 for s in sections]
    Path(f"{path}.manifest.txt").write_text('\n'.join(manifest) + '\n')
    logger.info("Wrote %s (%d sections)", path, len(sections))
    return path


def read_container(path):
    """
    Read a container written by write_container.

    Returns:
        (OrderedDict {name: array}, header dict)
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise FormatError(f"Could not read {path}: {e}") from e
    if data[:8] != CONTAINER_MAGIC:
        raise FormatError(f"{path}: not a model/index container")
    version, header_len = struct.unpack('<IQ', data[8:20])
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    try:
        header = json.loads(data[20:20 + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt header") from e
    base = 20 + header_len
    arrays = OrderedDict()
    for section in header['sections']:
        start = base + section['offset']
        chunk = data[start:start + section['nbytes']]
        if len(chunk) != section['nbytes']:
            raise FormatError(f"{path}: truncated section {section['name']}")
        arrays[section['name']] = np.frombuffer(chunk, dtype='<f8').astype(np.float64).reshape(section['shape'])
    return arrays, header


def save_checkpoint(path, params, cfg, extra=None):
    """Persist encoder config, alphabet size and every parameter array."""
    header = {'kind': 'checkpoint', 'encoder': cfg.to_dict(),
              'label_alphabet_size': params.label_alphabet_size, 'extra': extra or {}}
    return write_container(path, params.store.arrays(), header)


def load_checkpoint(path):
    """
    Returns:
        (EncoderParams, EncoderConfig, extra dict)
    """
    arrays, header = read_container(path)
    if header.get('kind') != 'checkpoint':
        raise FormatError(f"{path}: not a checkpoint")
    cfg = EncoderConfig.from_dict(header['encoder'])
    params = init_params(cfg, header['label_alphabet_size'], seed=0)
    params.store.load_arrays(arrays)
    return params, cfg, header.get('extra', {})
