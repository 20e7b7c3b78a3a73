import numpy as np
import pytest

from lib import autodiff as ad
from lib import geometry
from lib.autodiff import Mlp, Tensor
from lib.geometry import SpatialMesh
from lib.gen_model import (ChannelError, GenParams, GenSpec, InputBatch, InputSample, NeuralProcessParams,
                           NeuralProcessSpec, QueryBatch, QuerySample, decode_query, encode_inputs, gen_forward,
                           gen_global_forward, message_passing_step, np_baseline_forward, propagate)
from lib.representation import RepresentationFn


def _rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def _inputs(m=20, seed=0, channels=2, width=3):
    rng = _rng(seed)
    return InputBatch(rng.uniform(0.0, 1.0, size=(m, 2)), rng.integers(0, channels, size=m),
                      rng.standard_normal((m, width)))


def _queries(q=7, seed=1):
    return QueryBatch(_rng(seed).uniform(0.0, 1.0, size=(q, 2)), np.zeros(q, dtype=np.int64))


def _small_spec(**overrides):
    values = dict(latent_dim=8, message_dim=4, encoder_hidden=8, decoder_hidden=8, edge_hidden=8, node_hidden=8)
    values.update(overrides)
    return GenSpec(**values)


@pytest.mark.parametrize('kind', ['soft_nearest', 'bilinear_grid'])
def test_forward_shapes(kind):
    spec = _small_spec()
    params = GenParams.initialize(spec, seed=0)
    rep = RepresentationFn(kind, geometry.square_grid_mesh(3))
    out = gen_forward(_inputs(), _queries(), params, rep, spec.steps_for(3))
    assert out.shape == (7, 1)
    assert encode_inputs(_inputs(), params, rep).shape == (9, spec.latent_dim)


def test_empty_inputs_and_queries():
    spec = _small_spec()
    params = GenParams.initialize(spec)
    rep = RepresentationFn('soft_nearest', geometry.square_grid_mesh(2))
    empty = InputBatch(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), np.zeros((0, 3)))
    np.testing.assert_array_equal(encode_inputs(empty, params, rep).data, np.zeros((4, 8)))
    none = QueryBatch(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    assert gen_forward(_inputs(), none, params, rep, 2).shape == (0, 1)


def test_single_query_matches_batched_decode():
    spec = _small_spec()
    params = GenParams.initialize(spec, seed=2)
    rep = RepresentationFn('soft_nearest', geometry.square_grid_mesh(3))
    inputs = InputBatch.from_samples(_inputs().samples(), space_dim=2, value_width=3)
    queries = _queries()
    batched = gen_forward(inputs, queries, params, rep, 4).data
    z = propagate(encode_inputs(inputs, params, rep), rep.mesh, params, 4)
    for i, x in enumerate(queries.x):
        single = decode_query(z, QuerySample(x), params, rep)
        np.testing.assert_allclose(single.data, batched[i], rtol=1e-12, atol=1e-12)


def test_output_is_invariant_to_input_order():
    spec = _small_spec()
    params = GenParams.initialize(spec, seed=3)
    rep = RepresentationFn('soft_nearest', geometry.square_grid_mesh(4))
    inputs = _inputs(m=30, seed=5)
    order = _rng(9).permutation(len(inputs))
    a = gen_forward(inputs, _queries(), params, rep, 6).data
    b = gen_forward(inputs.permuted(order), _queries(), params, rep, 6).data
    np.testing.assert_array_equal(a, b)


def test_identity_node_module_keeps_states_fixed():
    spec = _small_spec()
    params = GenParams.initialize(spec, seed=1)
    latent = spec.latent_dim
    params.node_module = lambda x: x[:, :latent]
    mesh = geometry.square_grid_mesh(3)
    z = encode_inputs(_inputs(), params, RepresentationFn('soft_nearest', mesh))
    np.testing.assert_array_equal(propagate(z, mesh, params, 5).data, z.data)


def test_zero_steps_skip_message_passing():
    spec = _small_spec(t_rule=0)
    assert spec.steps_for(5) == 0
    assert _small_spec().steps_for(5) == 8
    with pytest.raises(ValueError):
        _small_spec(t_rule=-1)
    with pytest.raises(ValueError):
        _small_spec(t_rule='radius')


def test_single_node_gen_matches_neural_process():
    hidden, latent = 6, 5
    np_spec = NeuralProcessSpec(space_dim=2, n_channels=1, value_dim=1, output_dim=1, latent_dim=latent,
                                encoder_hidden=(hidden,), decoder_hidden=(hidden,),
                                encode_location=False, concat_query=False)
    baseline = NeuralProcessParams.initialize(np_spec, seed=4)

    spec = GenSpec(input_dims=(1,), output_dims=(1,), latent_dim=latent, encoder_hidden=hidden,
                   decoder_hidden=hidden, message_dim=3, edge_hidden=4, node_hidden=4, t_rule=0)
    params = GenParams.initialize(spec, seed=0)
    encoder, decoder = params.encoders[0], params.decoders[0]
    w0 = baseline.encoder.weights[0].data
    encoder.weights[0].data[...] = w0[1:]
    encoder.biases[0].data[...] = baseline.encoder.biases[0].data + w0[0]
    encoder.weights[1].data[...] = baseline.encoder.weights[1].data
    encoder.biases[1].data[...] = baseline.encoder.biases[1].data
    for dst, src in zip(decoder.parameters(), baseline.decoder.parameters()):
        dst.data[...] = src.data

    inputs = _inputs(m=12, seed=2, channels=1, width=1)
    queries = _queries(q=4)
    rep = RepresentationFn('soft_nearest', geometry.single_node_mesh())
    gen_out = gen_forward(inputs, queries, params, rep, spec.steps_for(1)).data
    np_out = np_baseline_forward(inputs, queries, baseline).data
    np.testing.assert_allclose(gen_out, np_out, rtol=1e-12, atol=1e-12)


def test_global_head_returns_one_value():
    spec = _small_spec(input_dims=(1,))
    params = GenParams.initialize(spec)
    rep = RepresentationFn('soft_nearest', geometry.square_grid_mesh(3))
    out = gen_global_forward(_inputs(channels=1, width=1), params, rep, 4)
    assert out.shape == (1,)


def test_channel_out_of_range_raises():
    spec = _small_spec()
    params = GenParams.initialize(spec)
    rep = RepresentationFn('soft_nearest', geometry.square_grid_mesh(2))
    bad = _inputs(channels=3)
    bad.channel[0] = 2
    with pytest.raises(ChannelError):
        gen_forward(bad, _queries(), params, rep, 2)
    queries = _queries()
    queries.channel[0] = 1
    with pytest.raises(ChannelError):
        gen_forward(_inputs(), queries, params, rep, 2)


def test_default_parameter_counts():
    gen = GenParams.initialize(GenSpec())
    baseline = NeuralProcessParams.initialize(NeuralProcessSpec())
    assert gen.num_params == 13729
    assert baseline.num_params == 15233
    assert gen.num_params == sum(Mlp.param_count(m.layer_dims) for m in gen.modules())


def test_gen_gradients_reach_every_module():
    spec = _small_spec()
    params = GenParams.initialize(spec, seed=2)
    rep = RepresentationFn('soft_nearest', geometry.square_grid_mesh(3))
    loss = ad.square(gen_forward(_inputs(), _queries(), params, rep, 4)).sum()
    grads = ad.gradients(loss, params.parameters())
    for (name, _), g in zip(params.named_parameters(), grads):
        if name.endswith('w0'):
            assert np.abs(g).max() > 0, name


def test_np_decodes_aggregate_without_queries():
    baseline = NeuralProcessParams.initialize(NeuralProcessSpec(n_channels=1, value_dim=1))
    out = np_baseline_forward(_inputs(channels=1, width=1), None, baseline)
    assert isinstance(out, Tensor) and out.shape == (1, 1)


def _pair_mesh(edges):
    return SpatialMesh('square', positions=np.array([[0.2, 0.5], [0.8, 0.5]]),
                       directed_edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2), topology_kind='delaunay')


def _linear_stubs(params, latent):
    params.edge_module = lambda x: x[:, :latent]
    params.node_module = lambda x: x[:, :latent] + x[:, latent:]


def test_message_step_on_two_nodes_sums_their_states():
    spec = _small_spec(message_dim=8)
    params = GenParams.initialize(spec)
    _linear_stubs(params, spec.latent_dim)
    z = Tensor(_rng(3).standard_normal((2, spec.latent_dim)))
    out = message_passing_step(z, _pair_mesh([[0, 1], [1, 0]]), params).data
    np.testing.assert_allclose(out, np.tile(z.data.sum(axis=0), (2, 1)))


def test_message_step_without_edges_aggregates_zeros():
    spec = _small_spec()
    params = GenParams.initialize(spec, seed=5)
    z = Tensor(_rng(4).standard_normal((2, spec.latent_dim)))
    out = message_passing_step(z, _pair_mesh([]), params).data
    expected = params.node_module(ad.concat([z, Tensor(np.zeros((2, spec.message_dim)))], axis=1)).data
    np.testing.assert_array_equal(out, expected)


def test_decode_at_an_edge_midpoint_averages_the_two_corners():
    spec = _small_spec()
    params = GenParams.initialize(spec)
    params.decoders = [lambda v: v[:, :1]]
    rep = RepresentationFn('bilinear_grid', geometry.square_grid_mesh(2))
    z = Tensor(_rng(6).standard_normal((4, spec.latent_dim)))
    out = decode_query(z, QuerySample([0.5, 0.0]), params, rep).data
    assert out[0] == pytest.approx(0.5 * (z.data[0, 0] + z.data[1, 0]), abs=1e-15)


def test_global_head_is_invariant_to_node_numbering():
    spec = _small_spec(input_dims=(1,))
    params = GenParams.initialize(spec, seed=7)
    mesh = geometry.delaunay(_rng(8).uniform(0.0, 1.0, size=(9, 2)))
    perm = _rng(9).permutation(mesh.n_nodes)
    inverse = np.argsort(perm)
    shuffled = SpatialMesh('square', positions=mesh.positions[perm], directed_edges=inverse[mesh.directed_edges],
                           topology_kind='delaunay')
    inputs = _inputs(channels=1, width=1)
    a = gen_global_forward(inputs, params, RepresentationFn('soft_nearest', mesh), 3).data
    b = gen_global_forward(inputs, params, RepresentationFn('soft_nearest', shuffled), 3).data
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_global_head_without_inputs_decodes_zeros():
    spec = _small_spec(input_dims=(1,))
    params = GenParams.initialize(spec, seed=2)
    rep = RepresentationFn('soft_nearest', geometry.square_grid_mesh(3))
    empty = InputBatch(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), np.zeros((0, 1)))
    out = gen_global_forward(empty, params, rep, 0).data
    np.testing.assert_array_equal(out, params.decoders[0](Tensor(np.zeros((1, spec.latent_dim)))).data[0])


def test_short_input_values_raise():
    with pytest.raises(ChannelError):
        InputBatch.from_samples([InputSample(np.zeros(2), 0, [1.0])], space_dim=2, value_width=3)
