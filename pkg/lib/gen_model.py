"""
Graph Element Networks: encode input samples onto node states through a
representation function, run T rounds of message passing over the mesh, and decode
queries by interpolating node states. Also the global-output head and the Neural
Process baseline (a single-node, zero-step GEN with extra capacity).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

import lib.constants as constants
from lib import autodiff as ad
from lib.autodiff import Mlp, Tensor
from lib.representation import weight_matrix


class ChannelError(ValueError):
    pass


@dataclass
class GenSpec:
    input_dims: tuple = (3, 3)
    output_dims: tuple = (1,)
    space: str = 'square'
    latent_dim: int = constants.LATENT_DIM
    message_dim: int = constants.MESSAGE_DIM
    encoder_hidden: int = constants.ENCODER_HIDDEN
    decoder_hidden: int = constants.DECODER_HIDDEN
    edge_hidden: int = constants.EDGE_HIDDEN
    node_hidden: int = constants.NODE_HIDDEN
    representation: str = 'soft_nearest'
    temperature: float = constants.SOFTMAX_TEMPERATURE
    # 'diameter' -> T = 2(k-1); an int fixes T for every mesh size.
    t_rule: object = 'diameter'

    def __post_init__(self):
        self.input_dims = tuple(int(d) for d in self.input_dims)
        self.output_dims = tuple(int(d) for d in self.output_dims)
        if not self.input_dims or not self.output_dims:
            raise ValueError('a GEN needs at least one input and one output channel')
        if isinstance(self.t_rule, int) and self.t_rule < 0:
            raise ValueError('T must be >= 0')
        if not isinstance(self.t_rule, int) and self.t_rule != 'diameter':
            raise ValueError(f"unknown T rule {self.t_rule!r}")

    def encoder_dims(self, channel):
        return (self.input_dims[channel], self.encoder_hidden, self.latent_dim)

    def decoder_dims(self, channel):
        return (self.latent_dim, self.decoder_hidden, self.output_dims[channel])

    @property
    def edge_dims(self):
        return (2 * self.latent_dim, self.edge_hidden, self.message_dim)

    @property
    def node_dims(self):
        return (self.latent_dim + self.message_dim, self.node_hidden, self.latent_dim)

    def steps_for(self, k):
        if isinstance(self.t_rule, int):
            return self.t_rule
        return 2 * (k - 1)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, payload):
        return cls(**payload)


@dataclass
class InputSample:
    x: np.ndarray
    channel: int
    value: np.ndarray


@dataclass
class QuerySample:
    x: np.ndarray
    channel: int = 0
    target: np.ndarray = None


@dataclass
class InputBatch:
    """Column-stacked input samples: x (m, d), channel (m,), value (m, width)."""
    x: np.ndarray
    channel: np.ndarray
    value: np.ndarray

    def __len__(self):
        return len(self.channel)

    @classmethod
    def from_samples(cls, samples, space_dim, value_width):
        x = np.zeros((len(samples), space_dim))
        channel = np.zeros(len(samples), dtype=np.int64)
        value = np.zeros((len(samples), value_width))
        for r, s in enumerate(samples):
            v = np.atleast_1d(np.asarray(s.value, dtype=np.float64))
            if v.size != value_width:
                raise ChannelError(f"value of size {v.size} does not match width {value_width}")
            x[r] = s.x
            channel[r] = s.channel
            value[r] = v
        return cls(x, channel, value)

    def samples(self):
        return [InputSample(self.x[r], int(self.channel[r]), self.value[r]) for r in range(len(self))]

    def permuted(self, order):
        return InputBatch(self.x[order], self.channel[order], self.value[order])

    def canonical(self):
        """Rows sorted by (channel, location, value) so sums run in a fixed order."""
        if len(self) == 0:
            return self
        keys = [self.value[:, c] for c in reversed(range(self.value.shape[1]))]
        keys += [self.x[:, c] for c in reversed(range(self.x.shape[1]))]
        keys.append(self.channel)
        return self.permuted(np.lexsort(keys))

    def scaled(self, factor):
        return InputBatch(self.x, self.channel, self.value * factor)


@dataclass
class QueryBatch:
    x: np.ndarray
    channel: np.ndarray
    target: np.ndarray = None

    def __len__(self):
        return len(self.channel)

    @classmethod
    def from_samples(cls, queries, space_dim):
        x = np.array([q.x for q in queries], dtype=np.float64).reshape(len(queries), space_dim)
        channel = np.array([q.channel for q in queries], dtype=np.int64)
        target = None
        if queries and all(q.target is not None for q in queries):
            target = np.array([np.atleast_1d(q.target) for q in queries], dtype=np.float64)
        return cls(x, channel, target)


class GenParams:
    """Trainable modules of a GEN: one encoder per input channel, one decoder per
    output channel, the edge module m_e and the node module m_v.

    Modules are any callables on (rows, features) Tensors; only Mlp modules carry
    parameters.
    """

    def __init__(self, spec, encoders, decoders, edge_module, node_module):
        self.spec = spec
        self.encoders = list(encoders)
        self.decoders = list(decoders)
        self.edge_module = edge_module
        self.node_module = node_module

    @classmethod
    def initialize(cls, spec, seed=0):
        rng = np.random.Generator(np.random.Philox(seed))
        encoders = [Mlp(spec.encoder_dims(i), rng, name=f"encoder{i}") for i in range(len(spec.input_dims))]
        decoders = [Mlp(spec.decoder_dims(j), rng, name=f"decoder{j}") for j in range(len(spec.output_dims))]
        edge = Mlp(spec.edge_dims, rng, name='edge')
        node = Mlp(spec.node_dims, rng, name='node')
        return cls(spec, encoders, decoders, edge, node)

    def modules(self):
        return self.encoders + self.decoders + [self.edge_module, self.node_module]

    def named_parameters(self):
        named = []
        for module in self.modules():
            if isinstance(module, Mlp):
                named += module.named_parameters()
        return named

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    @property
    def num_params(self):
        return sum(t.size for t in self.parameters())

    def snapshot(self):
        return [t.data.copy() for t in self.parameters()]


def _check_channels(channels, count, what):
    if len(channels) and (channels.min() < 0 or channels.max() >= count):
        raise ChannelError(f"{what} channel out of range 0..{count - 1}")


def encode_inputs(inputs, params, rep, positions=None):
    """z0 = R^T E: weighted sum of encoded input values on every node (n x L)."""
    n = rep.mesh.n_nodes
    latent = params.spec.latent_dim
    _check_channels(inputs.channel, len(params.encoders), 'input')
    z = Tensor(np.zeros((n, latent)))
    if len(inputs) == 0:
        return z
    inputs = inputs.canonical()
    weights = weight_matrix(inputs.x, rep, positions)
    for ch, encoder in enumerate(params.encoders):
        rows = np.flatnonzero(inputs.channel == ch)
        if rows.size == 0:
            continue
        width = params.spec.input_dims[ch]
        encoded = encoder(Tensor(inputs.value[rows, :width]))
        z = z + weights[rows].T @ encoded
    return z


def message_passing_step(z, mesh, params):
    """One round: m_ij = m_e(h_i, h_j) per directed edge, u_j = sum_i m_ij,
    h_j <- m_v(h_j, u_j)."""
    n = mesh.n_nodes
    if z.shape[0] != n:
        raise ad.ShapeError(f"node states have {z.shape[0]} rows for {n} nodes")
    edges = mesh.directed_edges
    if len(edges) == 0:
        aggregate = Tensor(np.zeros((n, params.spec.message_dim)))
    else:
        if edges.min() < 0 or edges.max() >= n:
            raise ValueError('edge index out of range')
        src, dst = edges[:, 0], edges[:, 1]
        messages = params.edge_module(ad.concat([z[src], z[dst]], axis=1))
        aggregate = ad.index_add(messages, dst, n)
    return params.node_module(ad.concat([z, aggregate], axis=1))


def propagate(z, mesh, params, steps):
    for _ in range(steps):
        z = message_passing_step(z, mesh, params)
    return z


def decode_queries(z, queries, params, rep, positions=None):
    """d_j(sum_l r(x)_l z_l) for every query; rows follow query order."""
    _check_channels(queries.channel, len(params.decoders), 'output')
    width = max(params.spec.output_dims)
    if len(queries) == 0:
        return Tensor(np.zeros((0, width)))
    latent = weight_matrix(queries.x, rep, positions) @ z
    out = None
    for ch, decoder in enumerate(params.decoders):
        rows = np.flatnonzero(queries.channel == ch)
        if rows.size == 0:
            continue
        decoded = decoder(latent[rows])
        if decoded.shape[1] < width:
            decoded = ad.concat([decoded, Tensor(np.zeros((rows.size, width - decoded.shape[1])))], axis=1)
        placed = ad.index_add(decoded, rows, len(queries))
        out = placed if out is None else out + placed
    return out


def decode_query(z, query, params, rep, positions=None):
    batch = QueryBatch(np.atleast_2d(np.asarray(query.x, dtype=np.float64)), np.array([query.channel]))
    return decode_queries(z, batch, params, rep, positions)[0]


def gen_forward(inputs, queries, params, rep, steps, positions=None):
    """Encode -> `steps` message-passing rounds -> decode each query."""
    z = encode_inputs(inputs, params, rep, positions)
    z = propagate(z, rep.mesh, params, steps)
    return decode_queries(z, queries, params, rep, positions)


def gen_global_forward(inputs, params, rep, steps, positions=None, channel=0):
    """Single prediction: decoder applied to the sum of all final node states."""
    z = encode_inputs(inputs, params, rep, positions)
    z = propagate(z, rep.mesh, params, steps)
    pooled = ad.tsum(z, axis=0, keepdims=True)
    return params.decoders[channel](pooled)[0]


# --- Neural Process baseline ---
@dataclass
class NeuralProcessSpec:
    space_dim: int = 2
    n_channels: int = 2
    value_dim: int = 3
    output_dim: int = 1
    latent_dim: int = constants.NP_LATENT_DIM
    encoder_hidden: tuple = constants.NP_ENCODER_HIDDEN
    decoder_hidden: tuple = constants.NP_DECODER_HIDDEN
    encode_location: bool = True
    concat_query: bool = True

    def __post_init__(self):
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.decoder_hidden = tuple(int(h) for h in self.decoder_hidden)

    @property
    def encoder_dims(self):
        width = (self.space_dim if self.encode_location else 0) + self.n_channels + self.value_dim
        return (width,) + self.encoder_hidden + (self.latent_dim,)

    @property
    def decoder_dims(self):
        width = (self.space_dim if self.concat_query else 0) + self.latent_dim
        return (width,) + self.decoder_hidden + (self.output_dim,)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, payload):
        return cls(**payload)


class NeuralProcessParams:
    def __init__(self, spec, encoder, decoder):
        self.spec = spec
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def initialize(cls, spec, seed=0):
        rng = np.random.Generator(np.random.Philox(seed))
        return cls(spec, Mlp(spec.encoder_dims, rng, name='np_encoder'),
                   Mlp(spec.decoder_dims, rng, name='np_decoder'))

    def named_parameters(self):
        named = []
        for module in (self.encoder, self.decoder):
            if isinstance(module, Mlp):
                named += module.named_parameters()
        return named

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    @property
    def num_params(self):
        return sum(t.size for t in self.parameters())


def np_features(inputs, spec):
    """Encoder input rows: (x, channel one-hot, value) with the value zero-padded."""
    _check_channels(inputs.channel, spec.n_channels, 'input')
    one_hot = np.zeros((len(inputs), spec.n_channels))
    one_hot[np.arange(len(inputs)), inputs.channel] = 1.0
    value = np.zeros((len(inputs), spec.value_dim))
    width = min(spec.value_dim, inputs.value.shape[1])
    value[:, :width] = inputs.value[:, :width]
    parts = ([inputs.x] if spec.encode_location else []) + [one_hot, value]
    return np.concatenate(parts, axis=1)


def np_baseline_forward(inputs, queries, params):
    """d(x_q, sum_i e(x_i, c_i, s_i)) per query; queries=None decodes the aggregate at x_q = 0."""
    spec = params.spec
    if len(inputs) == 0:
        aggregate = Tensor(np.zeros((1, spec.latent_dim)))
    else:
        aggregate = ad.tsum(params.encoder(Tensor(np_features(inputs.canonical(), spec))), axis=0, keepdims=True)
    if queries is None:
        if spec.concat_query:
            aggregate = ad.concat([Tensor(np.zeros((1, spec.space_dim))), aggregate], axis=1)
        return params.decoder(aggregate)
    rows = Tensor(np.ones((len(queries), 1))) @ aggregate
    if spec.concat_query:
        rows = ad.concat([Tensor(queries.x), rows], axis=1)
    return params.decoder(rows)
