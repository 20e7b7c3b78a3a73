"""
Reverse-mode automatic differentiation over dense float64 arrays.

Every op applied to a Tensor that depends on a trainable leaf records a TapeNode
holding its parents and a closure that maps the output gradient to the parent
gradients. `backward` walks the recorded graph in reverse topological order and
accumulates gradients into a table, so parameters are never mutated during a
backward pass and independent runs can share nothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

import lib.constants as constants
from lib.storage import atomic_write_json, read_json


class ShapeError(ValueError):
    pass


class NonFiniteError(RuntimeError):
    pass


class DetachedTensorError(RuntimeError):
    pass


class TapeNode:
    __slots__ = ('op', 'parents', 'backward_fn')

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    # Makes ndarray <op> Tensor dispatch to the Tensor's reflected operator.
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        value = np.array(data, dtype=np.float64)
        _check_finite(value, 'tensor')
        self.data = value
        self.name = name
        self._leaf = requires_grad
        self._node = None

    @classmethod
    def _from_op(cls, value, node):
        t = cls.__new__(cls)
        t.data = value
        t.name = None
        t._leaf = False
        t._node = node
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def requires_grad(self):
        return self._leaf or self._node is not None

    @property
    def tape_id(self):
        return id(self._node) if self._node is not None else None

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # --- operators ---
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_finite(value, op):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


def _record(value, op, parents, backward_fn):
    _check_finite(value, op)
    if not any(p.requires_grad for p in parents):
        t = Tensor.__new__(Tensor)
        t.data = value
        t.name = None
        t._leaf = False
        t._node = None
        return t
    return Tensor._from_op(value, TapeNode(op, parents, backward_fn))


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"'{op}' cannot broadcast shapes {a.shape} and {b.shape}")


# --- elementwise ---
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'add')
    return _record(a.data + b.data, 'add', (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'sub')
    return _record(a.data - b.data, 'sub', (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'mul')
    return _record(a.data * b.data, 'mul', (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'div')
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record(out, 'div', (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return _record(-a.data, 'neg', (a,), lambda g: (-g,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), 'relu', (a,), lambda g: (g * mask,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, 'exp', (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _record(np.log(a.data), 'log', (a,), lambda g: (g / a.data,))


def square(a):
    a = as_tensor(a)
    return _record(a.data * a.data, 'square', (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a):
    """Square root whose gradient at exactly 0 is taken as 0 (subgradient)."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        positive = out > 0
        safe = np.where(positive, out, 1.0)
        return (np.where(positive, 0.5 * g / safe, 0.0),)

    return _record(out, 'sqrt', (a,), backward)


def arccos(a):
    """arccos of the input clamped to [-1, 1]; zero gradient on the clamp."""
    a = as_tensor(a)
    clipped = np.clip(a.data, -1.0, 1.0)
    out = np.arccos(clipped)

    def backward(g):
        inside = np.abs(a.data) < 1.0
        denom = np.sqrt(np.where(inside, 1.0 - clipped * clipped, 1.0))
        return (np.where(inside, -g / denom, 0.0),)

    return _record(out, 'arccos', (a,), backward)


# --- linear algebra / shape ---
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if b.ndim == 1:
            ga = np.outer(g, b.data)
        else:
            ga = g @ b.data.T
        return ga, a.data.T @ g

    return _record(out, 'matmul', (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _record(a.data.T.copy(), 'transpose', (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return _record(out, 'reshape', (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, 'concat', tuple(tensors), backward)


def getitem(a, index):
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as e:
        raise ShapeError(str(e))
    out = np.array(out, dtype=np.float64)

    def backward(g):
        grad = np.zeros(a.shape)
        np.add.at(grad, index, g)
        return (grad,)

    return _record(out, 'getitem', (a,), backward)


def index_add(values, index, size):
    """Row scatter-add: out[index[r]] += values[r]; out has `size` rows."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.int64)
    if values.shape[0] != index.shape[0]:
        raise ShapeError(f"index_add: {index.shape[0]} indices for {values.shape[0]} rows")
    if index.size and (index.min() < 0 or index.max() >= size):
        raise ShapeError(f"index_add: index out of range for {size} rows")
    out = np.zeros((size,) + values.shape[1:])
    np.add.at(out, index, values.data)
    return _record(out, 'index_add', (values,), lambda g: (g[index],))


# --- reductions ---
def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, 'sum', (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    if count == 0:
        raise ShapeError('mean of an empty tensor')
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, 'softmax', (a,), backward)


# --- backward ---
class Gradients:
    """Gradient table produced by `backward`; unreached tensors read as zeros."""

    def __init__(self, table, tensors):
        self._table = table
        self._tensors = tensors

    def __getitem__(self, tensor):
        grad = self._table.get(id(tensor))
        if grad is None:
            return np.zeros(tensor.shape)
        return grad

    def __contains__(self, tensor):
        return id(tensor) in self._table

    def for_params(self, params):
        return [self[p] for p in params]


def _topological_order(output):
    order = []
    visited = set()
    stack = [(output, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in reversed(t._node.parents):
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
    return order


def backward(output):
    """Gradients of a scalar `output` with respect to every tensor it depends on."""
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise DetachedTensorError('output does not depend on any trainable tensor')

    tensors = {}
    table = {id(output): np.ones(output.shape)}
    tensors[id(output)] = output
    for t in reversed(_topological_order(output)):
        g = table.get(id(t))
        if g is None or t._node is None:
            continue
        parent_grads = t._node.backward_fn(g)
        for p, pg in zip(t._node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            tensors[id(p)] = p
            if id(p) in table:
                table[id(p)] = table[id(p)] + pg
            else:
                table[id(p)] = pg
    return Gradients(table, tensors)


def gradients(output, params):
    return backward(output).for_params(params)


def finite_diff_grad(loss_fn, params, step=constants.FD_STEP):
    """Central-difference gradient of `loss_fn()` w.r.t. each coordinate of `params`.

    Parameters are perturbed in place and restored exactly afterwards.
    """
    if step <= 0:
        raise ValueError('finite difference step must be positive')
    estimates = []
    for p in params:
        grad = np.zeros(p.shape)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = _scalar(loss_fn())
            flat[i] = original - step
            minus = _scalar(loss_fn())
            flat[i] = original
            grad.reshape(-1)[i] = (plus - minus) / (2.0 * step)
        estimates.append(grad)
    return estimates


def _scalar(value):
    if isinstance(value, Tensor):
        return value.item()
    return float(value)


def relative_error(analytic, numeric, floor=1e-12):
    """Max abs difference scaled by the larger of the two gradients' max magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


# --- modules ---
class Mlp:
    """Feed-forward network: ReLU on hidden layers, identity on the output layer."""

    def __init__(self, layer_dims, rng, name='mlp'):
        if len(layer_dims) < 2:
            raise ShapeError('an MLP needs at least input and output dims')
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.name = name
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True, name=f"{name}.w{i}"))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b{i}"))

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def __call__(self, x):
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.name} expects (*, {self.in_dim}) input, got {x.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < last:
                x = relu(x)
        return x

    def parameters(self):
        params = []
        for w, b in zip(self.weights, self.biases):
            params += [w, b]
        return params

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    @staticmethod
    def param_count(layer_dims):
        return sum((d_in + 1) * d_out for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]))

    @property
    def num_params(self):
        return Mlp.param_count(self.layer_dims)


# --- optimizer ---
@dataclass
class AdamState:
    learning_rate: float
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    beta1: float = constants.ADAM_BETA1
    beta2: float = constants.ADAM_BETA2
    eps: float = constants.ADAM_EPS

    @classmethod
    def for_params(cls, params, learning_rate):
        return cls(learning_rate=learning_rate,
                   m=[np.zeros(p.shape) for p in params],
                   v=[np.zeros(p.shape) for p in params])


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied to `params` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError('params, grads and Adam moments must align')
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ShapeError(f"Adam shape mismatch for {p.name or 'parameter'}: {p.shape} vs {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {p.name or 'parameter'}")

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# --- checkpoints ---
def save_parameters(path, named_params, header=None):
    """Writes [(name, Tensor)] as a flat JSON record list."""
    payload = {
        'format': constants.CHECKPOINT_FORMAT,
        'version': constants.CHECKPOINT_VERSION,
        'header': header or {},
        'params': [
            {'name': name, 'shape': list(t.shape), 'data': t.data.reshape(-1).tolist()}
            for name, t in named_params
        ],
    }
    atomic_write_json(path, payload, indent=None)


def load_parameters(path):
    """Returns (header, {name: ndarray}) from a checkpoint file."""
    payload = read_json(path)
    if payload.get('format') != constants.CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a parameter checkpoint")
    if payload.get('version') != constants.CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    arrays = {}
    for record in payload['params']:
        data = np.array(record['data'], dtype=np.float64)
        expected = int(np.prod(record['shape'])) if record['shape'] else 1
        if data.size != expected:
            raise ShapeError(f"checkpoint record {record['name']} has {data.size} values for shape {record['shape']}")
        arrays[record['name']] = data.reshape(record['shape'])
    return payload.get('header', {}), arrays


def assign_parameters(named_params, arrays):
    for name, t in named_params:
        if name not in arrays:
            raise KeyError(f"checkpoint is missing parameter '{name}'")
        if arrays[name].shape != t.shape:
            raise ShapeError(f"checkpoint shape {arrays[name].shape} != {t.shape} for '{name}'")
        t.data[...] = arrays[name]
