"""
Minimal reverse-mode autodiff on numpy arrays.
Every primitive records its parents and a backward rule; `backward` walks the
recording in reverse topological order. Also holds the parameter store, the
Adam optimizer and a central finite-difference checker.
"""

import itertools
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from shared_utils import ArgumentError, DIVISOR_FLOOR, NumericDomainError

LAYER_NORM_EPS = 1e-5

_node_ids = itertools.count()


# =============================================================================
# TENSOR
# =============================================================================

class Tensor:
    """
    Dense float64 array taking part in a recorded computation.

    Shapes are (rows, cols), (len,) or () for scalars. Leaf tensors created
    with requires_grad=True receive gradients in `.grad` on `backward`.
    """

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op=''):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ArgumentError(f"Tensors are at most 2-D, got shape {value.shape}")
        self.value = value
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.node_id = next(_node_ids)
        self.grad = np.zeros_like(value) if requires_grad and not parents else None

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def item(self):
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op='{self.op or 'leaf'}')"

    # operator sugar over the primitive catalog
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value, inputs, backward_fn, op):
    """Create the output node; only keep the recording when a parent needs gradients."""
    if any(t.requires_grad for t in inputs):
        return Tensor(value, requires_grad=True, parents=tuple(inputs), backward_fn=backward_fn, op=op)
    return Tensor(value, op=op)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to an input's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    # row broadcast: (n, k) with (k,)
    if len(sa) == 2 and sb == (sa[1],) or len(sb) == 2 and sa == (sb[1],):
        return
    # column broadcast: (n, k) with (n, 1)
    if len(sa) == 2 and sb == (sa[0], 1) or len(sb) == 2 and sa == (sb[0], 1):
        return
    raise ArgumentError(f"{op}: incompatible shapes {sa} and {sb}")


# =============================================================================
# PRIMITIVES
# =============================================================================

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'add')
    return _record(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), 'add')


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'subtract')
    return _record(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), 'subtract')


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'multiply')
    return _record(a.value * b.value, (a, b),
                   lambda g: (_unbroadcast(g * b.value, a.shape),
                              _unbroadcast(g * a.value, b.shape)), 'multiply')


def divide(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'divide')
    if np.any(np.abs(b.value) < DIVISOR_FLOOR):
        raise NumericDomainError(f"divide: divisor magnitude below {DIVISOR_FLOOR}")
    out = a.value / b.value
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.value, a.shape),
                              _unbroadcast(-g * out / b.value, b.shape)), 'divide')


def negate(a):
    a = as_tensor(a)
    return _record(-a.value, (a,), lambda g: (-g,), 'negate')


def scale(a, c):
    """Multiply by a Python scalar constant."""
    a = as_tensor(a)
    return _record(a.value * c, (a,), lambda g: (g * c,), 'scale')


def add_scalar(a, c):
    a = as_tensor(a)
    return _record(a.value + c, (a,), lambda g: (g,), 'add_scalar')


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim == 0 or b.value.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ArgumentError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward_fn(g):
        av, bv = a.value, b.value
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _record(a.value @ b.value, (a, b), backward_fn, 'matmul')


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (np.tanh(0.5 * a.value) + 1.0)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),), 'sigmoid')


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),), 'tanh')


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), 'relu')


def positive_part(a):
    """Hinge [x]_+ ; gradient passes where x > 0."""
    a = as_tensor(a)
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), 'positive_part')


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _record(out, (a,), lambda g: (g * out,), 'exp')


def clamp_min(a, c):
    a = as_tensor(a)
    mask = a.value > c
    return _record(np.where(mask, a.value, c), (a,), lambda g: (g * mask,), 'clamp_min')


def elementwise_min(a, b):
    """Ties route the gradient to the first input."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ArgumentError(f"elementwise_min: shapes {a.shape} and {b.shape} differ")
    first = a.value <= b.value
    return _record(np.where(first, a.value, b.value), (a, b),
                   lambda g: (g * first, g * ~first), 'elementwise_min')


def elementwise_max(a, b):
    """Ties route the gradient to the first input."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ArgumentError(f"elementwise_max: shapes {a.shape} and {b.shape} differ")
    first = a.value >= b.value
    return _record(np.where(first, a.value, b.value), (a, b),
                   lambda g: (g * first, g * ~first), 'elementwise_max')


def row_sum(a):
    """Sum along the last axis: (n, k) -> (n,), (k,) -> ()."""
    a = as_tensor(a)
    if a.value.ndim == 0:
        raise ArgumentError("row_sum needs at least one axis")
    return _record(a.value.sum(axis=-1), (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, -1), a.shape).copy(),), 'row_sum')


def row_mean(a):
    a = as_tensor(a)
    if a.value.ndim == 0 or a.shape[-1] == 0:
        raise ArgumentError("row_mean needs a nonempty last axis")
    k = a.shape[-1]
    return _record(a.value.mean(axis=-1), (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, -1) / k, a.shape).copy(),), 'row_mean')


def sum_all(a):
    a = as_tensor(a)
    return _record(a.value.sum(), (a,), lambda g: (np.full(a.shape, g),), 'sum_all')


def stack(items):
    """Stack scalars into a vector, or equal-length vectors into a matrix."""
    items = [as_tensor(t) for t in items]
    if not items or len({t.shape for t in items}) != 1 or items[0].value.ndim > 1:
        raise ArgumentError("stack needs a nonempty list of equally shaped scalars or vectors")
    return _record(np.stack([t.value for t in items]), tuple(items),
                   lambda g: tuple(g[i] for i in range(len(items))), 'stack')


def column_max_with_argmax(a):
    """
    Column-wise max over rows of an (n, k) matrix (node max-pool).

    Returns:
        Tensor of shape (k,) with an `argmax` attribute; lowest row wins ties
    """
    a = as_tensor(a)
    if a.value.ndim != 2 or a.shape[0] == 0:
        raise ArgumentError(f"column_max_with_argmax needs a nonempty matrix, got {a.shape}")
    argmax = np.argmax(a.value, axis=0)
    cols = np.arange(a.shape[1])

    def backward_fn(g):
        grad = np.zeros(a.shape)
        grad[argmax, cols] = g
        return (grad,)

    out = _record(a.value[argmax, cols], (a,), backward_fn, 'column_max')
    out.argmax = argmax
    return out


def layer_norm(a, eps=LAYER_NORM_EPS):
    """Normalize along the last axis to zero mean and unit variance (no affine)."""
    a = as_tensor(a)
    if a.value.ndim == 0:
        raise ArgumentError("layer_norm needs at least one axis")
    mu = a.value.mean(axis=-1, keepdims=True)
    centered = a.value - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def backward_fn(g):
        mean_g = g.mean(axis=-1, keepdims=True)
        mean_gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv_std * (g - mean_g - xhat * mean_gx),)

    return _record(xhat, (a,), backward_fn, 'layer_norm')


PRIMITIVES = {
    'matmul': matmul,
    'add': add,
    'multiply': multiply,
    'subtract': subtract,
    'divide': divide,
    'sigmoid': sigmoid,
    'tanh': tanh,
    'relu': relu,
    'exp': exp,
    'negate': negate,
    'positive_part': positive_part,
    'clamp_min': clamp_min,
    'elementwise_min': elementwise_min,
    'elementwise_max': elementwise_max,
    'row_sum': row_sum,
    'row_mean': row_mean,
    'sum_all': sum_all,
    'stack': stack,
    'column_max_with_argmax': column_max_with_argmax,
    'layer_norm': layer_norm,
    'scale': scale,
    'add_scalar': add_scalar,
}


def apply_primitive(kind, inputs, **attrs):
    """
    Apply a primitive from the catalog by name.

    Args:
        kind: key of PRIMITIVES
        inputs: list of Tensors (or arrays)
        attrs: primitive attributes, e.g. c for clamp_min, eps for layer_norm

    Returns:
        Output Tensor, recorded for backward
    """
    if kind not in PRIMITIVES:
        raise ArgumentError(f"Unknown primitive: {kind}")
    if kind == 'stack':
        return stack(inputs)
    return PRIMITIVES[kind](*inputs, **attrs)


# =============================================================================
# BACKWARD
# =============================================================================

def _topological_order(root):
    order, visited = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack_.append((node, True))
        for parent in sorted(node.parents, key=lambda t: t.node_id, reverse=True):
            if parent.requires_grad and parent.node_id not in visited:
                stack_.append((parent, False))
    return order


def backward(loss, store=None):
    """
    Reverse-mode gradient accumulation from a scalar loss.

    Gradients are added into `.grad` of every requires_grad leaf (the
    accumulators of `store`'s parameters included).

    Args:
        loss: scalar Tensor
        store: optional ParamStore, checked to own every returned accumulator

    Returns:
        dict {node_id: gradient array} for every recorded node
    """
    if loss.value.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {loss.node_id: np.ones_like(loss.value)}
    if not loss.requires_grad:
        return grads
    for node in reversed(_topological_order(loss)):
        g = grads.get(node.node_id)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad or pg is None:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
    if store is not None:
        for name, param in store.items():
            if param.grad.shape != param.shape:
                raise ArgumentError(f"Gradient of {name} has shape {param.grad.shape}")
    return grads


# =============================================================================
# PARAMETERS AND OPTIMIZER
# =============================================================================

class ParamStore:
    """Named leaf tensors in stable insertion order, each with a gradient accumulator."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise ArgumentError(f"Duplicate parameter name: {name}")
        self._params[name] = Tensor(np.array(value, dtype=np.float64), requires_grad=True, op=name)
        return self._params[name]

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    @property
    def grads(self):
        return OrderedDict((name, p.grad) for name, p in self._params.items())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.value)

    def arrays(self):
        """Copy of every parameter value, keyed by name."""
        return OrderedDict((name, p.value.copy()) for name, p in self._params.items())

    def load_arrays(self, arrays):
        for name, value in arrays.items():
            if name not in self._params:
                raise ArgumentError(f"Unknown parameter: {name}")
            if np.shape(value) != self._params[name].shape:
                raise ArgumentError(f"Parameter {name}: shape {np.shape(value)} "
                                    f"!= {self._params[name].shape}")
            self._params[name].value = np.array(value, dtype=np.float64)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store, state):
    """Bias-corrected Adam update of every parameter; gradients are zeroed afterwards."""
    state.step += 1
    t = state.step
    for name, p in store.items():
        g = p.grad
        m = state.m.get(name, np.zeros_like(p.value))
        v = state.v.get(name, np.zeros_like(p.value))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    store.zero_grad()


# =============================================================================
# GRADIENT CHECK
# =============================================================================

def finite_difference_check(f, store, h=1e-5, max_coords=None, rng=None):
    """
    Compare analytic gradients with central finite differences.

    Args:
        f: zero-argument callable building a scalar loss from store's parameters
        store: ParamStore (or a list of leaf Tensors) to check
        h: finite-difference step
        max_coords: check at most this many coordinates per parameter (random subset)
        rng: numpy Generator for the subset choice

    Returns:
        Maximum relative error |a - n| / max(1e-8, |a| + |n|)
    """
    params = list(store.items()) if isinstance(store, ParamStore) else list(enumerate(store))
    for _, p in params:
        p.grad = np.zeros_like(p.value)
    backward(f(), store if isinstance(store, ParamStore) else None)
    rng = rng if rng is not None else np.random.default_rng(0)

    worst = 0.0
    for _, p in params:
        analytic = p.grad.copy()
        coords = list(np.ndindex(p.shape))
        if max_coords is not None and len(coords) > max_coords:
            picks = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(picks)]
        for idx in coords:
            original = p.value[idx]
            p.value[idx] = original + h
            plus = f().item()
            p.value[idx] = original - h
            minus = f().item()
            p.value[idx] = original
            numeric = (plus - minus) / (2.0 * h)
            a = analytic[idx]
            worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
        p.grad = np.zeros_like(p.value)
    return worst
